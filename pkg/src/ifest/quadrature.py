"""Tensor-product quadrature on [0, 1]^d.

Integrals are reduced one axis at a time with ``numpy.sum`` (pairwise
summation) so results do not depend on how callers chunk the work.  The
weights along each axis are renormalised to sum to one, which makes constant
integrands integrate to exactly 1.0.

KDE integrands have a separable structure: on a tensor grid the estimate is
``(1/n) sum_i prod_c A_c[a_c, i]`` where ``A_c`` holds one-coordinate kernel
terms.  :func:`grid_raw` exploits this with matrix products instead of
evaluating the kernel at every node.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from .density import axis_bandwidths, axis_kernel
from .errors import GridTooLarge, IndexOutOfRange, InputError

__all__ = [
    "GridSpec",
    "default_grid",
    "oracle_grid",
    "integrate",
    "integrate_values",
    "evaluate_on_grid",
    "tensor_weights",
    "tensor_nodes",
    "grid_raw",
    "grid_eval",
    "integrate_power",
    "LooGridCache",
    "integrate_power_loo",
]

MAX_NODES = 10**7
MAX_DIM = 4
RULES = ("midpoint", "gauss_legendre")
DEFAULT_POINTS = {1: 2048, 2: 256, 3: 48, 4: 24}


@lru_cache(maxsize=64)
def _axis_rule(m, rule):
    if rule == "midpoint":
        nodes = (np.arange(m) + 0.5) / m
        weights = np.full(m, 1.0 / m)
    else:
        x, w = roots_legendre(m)
        nodes = 0.5 * (x + 1.0)
        weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@dataclass(frozen=True)
class GridSpec:
    """``points_per_axis`` nodes per coordinate on [0, 1]^dim."""

    dim: int
    points_per_axis: int
    rule: str = "midpoint"

    def __post_init__(self):
        if self.dim < 1:
            raise InputError("grid dimension must be at least 1")
        if self.dim > MAX_DIM:
            raise GridTooLarge(f"tensor grids are limited to d <= {MAX_DIM}")
        if self.points_per_axis < 2:
            raise InputError("need at least two nodes per axis")
        if self.rule not in RULES:
            raise InputError(f"rule must be one of {RULES}")
        if self.total_nodes > MAX_NODES:
            raise GridTooLarge(f"{self.total_nodes} nodes exceeds the limit of {MAX_NODES}")

    @property
    def total_nodes(self):
        return self.points_per_axis**self.dim

    @property
    def shape(self):
        return (self.points_per_axis,) * self.dim

    def axis(self):
        return _axis_rule(self.points_per_axis, self.rule)

    def with_dim(self, dim):
        return GridSpec(dim, self.points_per_axis, self.rule)


def default_grid(dim, points=None, rule="midpoint"):
    if dim > MAX_DIM:
        raise GridTooLarge(f"tensor grids are limited to d <= {MAX_DIM}")
    m = DEFAULT_POINTS[dim] if points is None else int(points)
    return GridSpec(dim, m, rule)


def oracle_grid(dim):
    """Gauss-Legendre grid with 4x the default resolution, capped at MAX_NODES."""
    if dim > MAX_DIM:
        raise GridTooLarge(f"tensor grids are limited to d <= {MAX_DIM}")
    m = 4 * DEFAULT_POINTS[dim]
    while m**dim > MAX_NODES:
        m -= 1
    return GridSpec(dim, m, "gauss_legendre")


def tensor_nodes(spec):
    """All grid nodes as an (m**d, d) array in C order."""
    nodes, _ = spec.axis()
    mesh = np.meshgrid(*([nodes] * spec.dim), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def integrate_values(values, spec):
    """Integrate values already sampled on the tensor grid of ``spec``."""
    vals = np.asarray(values, dtype=float).reshape(spec.shape)
    _, w = spec.axis()
    wsum = np.sum(w)
    for _ in range(spec.dim):
        vals = np.sum(vals * w, axis=-1) / wsum
    return float(vals)


def evaluate_on_grid(g, spec, chunk=1 << 16):
    """Values of ``g`` on every node of ``spec``, shape ``spec.shape``.

    Nodes are generated chunk by chunk so large grids never materialise the
    full (m**d, d) coordinate table.
    """
    nodes, _ = spec.axis()
    total = spec.total_nodes
    vals = np.empty(total)
    for a in range(0, total, chunk):
        idx = np.unravel_index(np.arange(a, min(total, a + chunk)), spec.shape)
        pts = np.stack([nodes[i] for i in idx], axis=1)
        vals[a : a + pts.shape[0]] = np.asarray(g(pts), dtype=float).reshape(-1)
    return vals.reshape(spec.shape)


def integrate(g, spec):
    """Integrate ``g`` over [0, 1]^d; ``g`` maps an (N, d) array to N values."""
    return integrate_values(evaluate_on_grid(g, spec), spec)


def tensor_weights(spec):
    """Normalised tensor weights in the C order of :func:`tensor_nodes`."""
    _, w = spec.axis()
    w = w / np.sum(w)
    out = w
    for _ in range(spec.dim - 1):
        out = np.multiply.outer(out, w)
    return out.reshape(-1)


def axis_factors(points, h, kernel, boundary, spec, cols=None):
    """Per-axis (m, n) kernel-term matrices on the grid nodes."""
    nodes, _ = spec.axis()
    hs = axis_bandwidths(h, points.shape[1])
    cols = range(points.shape[1]) if cols is None else cols
    return [
        axis_kernel(nodes, points[:, c], hs[c], kernel, boundary) for c in cols
    ]


def _khatri_rao(mats):
    out = mats[0]
    n = out.shape[1]
    for a in mats[1:]:
        out = (out[:, None, :] * a[None, :, :]).reshape(-1, n)
    return out


def separable_sum(factors):
    """``sum_i prod_c factors[c][a_c, i]`` on the full tensor grid."""
    d = len(factors)
    m = tuple(f.shape[0] for f in factors)
    if d == 1:
        return np.sum(factors[0], axis=1)
    half = (d + 1) // 2
    left = _khatri_rao(factors[:half])
    right = _khatri_rao(factors[half:])
    return (left @ right.T).reshape(m)


def grid_raw_points(points, h, kernel, boundary, spec):
    return separable_sum(axis_factors(points, h, kernel, boundary, spec)) / points.shape[0]


def grid_raw(model, spec):
    """Unclamped KDE values on every node of ``spec``, shape ``spec.shape``."""
    _check_dim(model, spec)
    return grid_raw_points(model.points, model.bandwidth, model.kernel, model.boundary, spec)


def grid_eval(model, spec):
    return model.clamp(grid_raw(model, spec))


def _check_dim(model, spec):
    if model.dim != spec.dim:
        raise InputError(f"grid has dimension {spec.dim}, model has {model.dim}")


def integrate_power(model, a, spec):
    """``int eval(model, x)**a dx`` on the grid of ``spec``."""
    if a == 0:
        return 1.0
    return integrate_values(grid_eval(model, spec) ** a, spec)


class LooGridCache:
    """Grid kernel sums reusable for every leave-one-out density.

    Holds the per-axis factors and ``n * raw`` on the full grid, so the
    density without sample ``i`` on the grid costs one outer product.
    """

    def __init__(self, model, spec):
        _check_dim(model, spec)
        self.model = model
        self.spec = spec
        self.factors = axis_factors(
            model.points, model.bandwidth, model.kernel, model.boundary, spec
        )
        self.total = separable_sum(self.factors)

    def term(self, i):
        out = self.factors[0][:, i]
        for f in self.factors[1:]:
            out = np.multiply.outer(out, f[:, i])
        return out

    def loo_raw(self, i):
        if not 0 <= i < self.model.n:
            raise IndexOutOfRange(f"index {i} outside 0..{self.model.n - 1}")
        return (self.total - self.term(i)) / (self.model.n - 1)

    def loo_eval(self, i):
        return self.model.clamp(self.loo_raw(i))


def integrate_power_loo(model, i, a, spec, cache=None):
    """``int eval_loo_at(model, i, x)**a dx`` via the grid downdate cache."""
    if not 0 <= int(i) < model.n:
        raise IndexOutOfRange(f"index {i} outside 0..{model.n - 1}")
    if a == 0:
        return 1.0
    cache = cache if cache is not None else LooGridCache(model, spec)
    return integrate_values(cache.loo_eval(int(i)) ** a, spec)
