"""Catalog of functionals, their influence functions and leave-one-out terms.

Every functional is written as ``T = phi(I)`` with an inner integral
``I = int nu(f[, g])`` and a scalar outer map ``phi``.  For most kinds
``phi`` is affine; the Renyi kinds use a logarithm, and their estimators
estimate ``I`` first and apply ``phi`` afterwards ("plug-through").

Influence functions follow the usual recipe

    psi_f(x) = phi'(I) * (d_f nu(f(x), g(x)) - int d_f nu * f)

and likewise for ``g``.  When ``nu`` is homogeneous of degree one in
``(f, g)`` (KL, Hellinger, chi-squared, f-divergences, the power integral
and the Tsallis/Renyi divergences) Euler's identity
``nu = f d_f nu + g d_g nu`` makes ``T + psi_f + psi_g`` collapse to a
pointwise expression.  Those closed forms are the per-sample terms of the
leave-one-out estimator implemented in :func:`loo_terms`.

Densities are duck-typed: anything with a ``dim`` attribute that maps an
(N, d) array to N positive values works, so the same code runs on fitted
:class:`~ifest.density.KdeModel` objects and on the analytic densities of
:mod:`ifest.synthdata`.

Column conventions
------------------
Conditional divergences take joint samples ``(X, Z)`` with the conditioning
block in the trailing ``z_dim`` columns.  Mutual-information kinds split the
joint sample as ``[X | Y]`` (``shannon_mi``) or ``[X | Y | Z]``
(``cond_tsallis_mi``) with ``x_dim`` leading columns for ``X``.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import quadrature
from .density import KdeModel
from .errors import BadAlpha, BadExponents, BadSpec, DimensionMismatch, IndexOutOfRange, InputError

__all__ = [
    "KINDS",
    "ALIASES",
    "PHI_LIBRARY",
    "FunctionalSpec",
    "DensityPair",
    "FittedFunctional",
    "as_spec",
    "outer_value",
    "outer_slope",
    "plugin_value",
    "influence",
    "loo_terms",
    "loo_term",
    "reference_loo_terms",
    "vme_residual",
]

SHANNON = "shannon_entropy"
TSALLIS_H = "tsallis_entropy"
RENYI_H = "renyi_entropy"
L2 = "l2_divergence"
HELLINGER = "hellinger_divergence"
CHI2 = "chi_squared_divergence"
FDIV = "f_divergence"
KL = "kl_divergence"
TSALLIS_D = "tsallis_divergence"
RENYI_D = "renyi_divergence"
COND_KL = "cond_kl_divergence"
COND_TSALLIS = "cond_tsallis_divergence"
MI = "shannon_mi"
COND_TSALLIS_MI = "cond_tsallis_mi"
POWER = "power_integral"

KINDS = (
    SHANNON,
    TSALLIS_H,
    RENYI_H,
    L2,
    HELLINGER,
    CHI2,
    FDIV,
    KL,
    TSALLIS_D,
    RENYI_D,
    COND_KL,
    COND_TSALLIS,
    MI,
    COND_TSALLIS_MI,
    POWER,
)

ALIASES = {
    "shannon": SHANNON,
    "entropy": SHANNON,
    "tsallis": TSALLIS_H,
    "renyi": RENYI_H,
    "l2": L2,
    "hellinger": HELLINGER,
    "chi_squared": CHI2,
    "chi2": CHI2,
    "f_div": FDIV,
    "kl": KL,
    "tsallis_div": TSALLIS_D,
    "renyi_div": RENYI_D,
    "cond_kl": COND_KL,
    "cond_tsallis": COND_TSALLIS,
    "cond_tsallis_div": COND_TSALLIS,
    "mi": MI,
    "power": POWER,
}

ONE_SAMPLE = frozenset({SHANNON, TSALLIS_H, RENYI_H, MI, COND_TSALLIS_MI})
NEEDS_ALPHA = frozenset({TSALLIS_H, RENYI_H, TSALLIS_D, RENYI_D, COND_TSALLIS, COND_TSALLIS_MI})
CONDITIONAL = frozenset({COND_KL, COND_TSALLIS, COND_TSALLIS_MI})
POWER_FAMILY = frozenset({TSALLIS_D, RENYI_D, COND_TSALLIS, POWER})
PLUG_THROUGH = frozenset({RENYI_H, RENYI_D})
TSALLIS_FAMILY = frozenset({TSALLIS_D, COND_TSALLIS, COND_TSALLIS_MI})


def _xlogx(r):
    return r * np.log(r)


# Named (phi, phi') pairs for f-divergences, all with phi(1) = 0.
PHI_LIBRARY = {
    "kl": (_xlogx, lambda r: np.log(r) + 1.0),
    "reverse_kl": (lambda r: -np.log(r), lambda r: -1.0 / r),
    "squared_hellinger": (lambda r: (np.sqrt(r) - 1.0) ** 2, lambda r: 1.0 - 1.0 / np.sqrt(r)),
    "pearson": (lambda r: (r - 1.0) ** 2, lambda r: 2.0 * (r - 1.0)),
    "neyman": (lambda r: (r - 1.0) ** 2 / r, lambda r: 1.0 - 1.0 / r**2),
}


@dataclass(frozen=True)
class FunctionalSpec:
    """Which functional to estimate, with its parameters.

    Parameters
    ----------
    kind : str
        One of :data:`KINDS` or an alias from :data:`ALIASES`.
    alpha : float, optional
        Order of the Tsallis/Renyi kinds, or the first exponent ``a`` of
        ``power_integral``.
    beta_exponent : float, optional
        Second exponent ``b`` of ``power_integral``; needs ``a + b = 1``.
    phi, phi_prime : callable, optional
        Generator of an ``f_divergence`` and its derivative.
    z_dim : int
        Width of the conditioning block for conditional kinds.
    x_dim : int, optional
        Width of the ``X`` block for mutual-information kinds.
    """

    kind: str
    alpha: Optional[float] = None
    beta_exponent: Optional[float] = None
    phi: Optional[Callable] = field(default=None, compare=False)
    phi_prime: Optional[Callable] = field(default=None, compare=False)
    z_dim: int = 0
    x_dim: Optional[int] = None

    def __post_init__(self):
        kind = str(self.kind).strip().lower()
        kind = ALIASES.get(kind, kind)
        if kind not in KINDS:
            raise BadSpec(f"unknown functional {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind in NEEDS_ALPHA:
            if self.alpha is None:
                raise BadAlpha(f"{kind} needs alpha")
            a = float(self.alpha)
            if not math.isfinite(a) or a in (0.0, 1.0):
                raise BadAlpha("alpha must not be 0 or 1")
            object.__setattr__(self, "alpha", a)
        if kind == POWER:
            if self.alpha is None or self.beta_exponent is None:
                raise BadExponents("power_integral needs exponents a and b")
            a, b = float(self.alpha), float(self.beta_exponent)
            if abs(a + b - 1.0) > 1e-12 or a in (0.0, 1.0) or b in (0.0, 1.0):
                raise BadExponents(f"exponents must satisfy a + b = 1 and a, b not in {{0, 1}}; got ({a}, {b})")
            object.__setattr__(self, "alpha", a)
            object.__setattr__(self, "beta_exponent", b)
        if kind == FDIV and (self.phi is None or self.phi_prime is None):
            raise BadSpec("f_divergence needs both phi and phi_prime")
        z = int(self.z_dim)
        if kind in CONDITIONAL and z < 1:
            raise BadSpec(f"{kind} needs z_dim >= 1")
        if kind not in CONDITIONAL and z != 0:
            raise BadSpec(f"{kind} does not take a conditioning block")
        object.__setattr__(self, "z_dim", z)
        if self.x_dim is not None:
            if kind not in (MI, COND_TSALLIS_MI):
                raise BadSpec("x_dim only applies to mutual-information kinds")
            if int(self.x_dim) < 1:
                raise BadSpec("x_dim must be at least 1")
            object.__setattr__(self, "x_dim", int(self.x_dim))

    @property
    def arity(self):
        return 1 if self.kind in ONE_SAMPLE else 2

    @property
    def conditional(self):
        return self.kind in CONDITIONAL

    @property
    def exponents(self):
        """``(a, b)`` of the power integral ``int f^a g^b`` behind the kind."""
        if self.kind == POWER:
            return self.alpha, self.beta_exponent
        return self.alpha, 1.0 - self.alpha

    @property
    def plug_through(self):
        return self.kind in PLUG_THROUGH

    def blocks(self, dim):
        """Column blocks of a joint sample: ``(X, Y)`` or ``(X, Y, Z)``."""
        if self.kind == MI:
            if dim < 2:
                raise DimensionMismatch("shannon_mi needs at least two columns")
            xd = self.x_dim if self.x_dim is not None else dim // 2
            if not 1 <= xd < dim:
                raise DimensionMismatch(f"x_dim={xd} does not fit {dim} columns")
            return tuple(range(xd)), tuple(range(xd, dim))
        if self.kind == COND_TSALLIS_MI:
            free = dim - self.z_dim
            if free < 2:
                raise DimensionMismatch("cond_tsallis_mi needs X, Y and Z columns")
            xd = self.x_dim if self.x_dim is not None else max(1, free // 2)
            if not 1 <= xd < free:
                raise DimensionMismatch(f"x_dim={xd} does not fit {free} free columns")
            return tuple(range(xd)), tuple(range(xd, free)), tuple(range(free, dim))
        raise BadSpec(f"{self.kind} has no column blocks")

    def marginal_columns(self, dim):
        """Columns of the marginal densities a joint-sample kind needs."""
        if self.kind == MI:
            return self.blocks(dim)
        if self.kind == COND_TSALLIS_MI:
            x, y, z = self.blocks(dim)
            return (x + z, y + z, z)
        return ()

    def check_dim(self, dim):
        if self.conditional and self.kind != COND_TSALLIS_MI and dim <= self.z_dim:
            raise DimensionMismatch(f"z_dim={self.z_dim} leaves no free columns in d={dim}")
        if self.kind in (MI, COND_TSALLIS_MI):
            self.blocks(dim)

    def describe(self):
        parts = [self.kind]
        if self.kind == POWER:
            parts.append(f"a={self.alpha:g},b={self.beta_exponent:g}")
        elif self.alpha is not None:
            parts.append(f"alpha={self.alpha:g}")
        if self.z_dim:
            parts.append(f"z_dim={self.z_dim}")
        return " ".join(parts)


def as_spec(spec):
    """Accept a :class:`FunctionalSpec` or a parameter-free kind name."""
    return spec if isinstance(spec, FunctionalSpec) else FunctionalSpec(spec)


ROLE_LABELS = {
    MI: ("p_XY", None, ("p_X", "p_Y")),
    COND_TSALLIS_MI: ("p_XYZ", None, ("p_XZ", "p_YZ", "p_Z")),
    COND_KL: ("p_XZ", "p_YZ", ()),
    COND_TSALLIS: ("p_XZ", "p_YZ", ()),
}


@dataclass(frozen=True)
class DensityPair:
    """The densities a functional is evaluated on.

    ``first`` is ``f`` (or the joint density for mutual-information kinds),
    ``second`` is ``g`` for two-sample kinds, and ``marginals`` holds
    ``(p_X, p_Y)`` for ``shannon_mi`` or ``(p_XZ, p_YZ, p_Z)`` for
    ``cond_tsallis_mi``.
    """

    first: object
    second: object = None
    marginals: tuple = ()

    @property
    def dim(self):
        return self.first.dim

    def roles(self, spec):
        spec = as_spec(spec)
        return ROLE_LABELS.get(spec.kind, ("f", "g" if spec.arity == 2 else None, ()))

    @classmethod
    def from_analytic(cls, spec, first, second=None):
        """Build a pair from densities exposing ``marginal(cols)``."""
        spec = as_spec(spec)
        marg = tuple(first.marginal(c) for c in spec.marginal_columns(first.dim))
        return cls(first, second, marg)


def _check_pair(spec, pair):
    if not isinstance(pair, DensityPair):
        raise InputError("densities must be a DensityPair")
    d = pair.first.dim
    spec.check_dim(d)
    if spec.arity == 2:
        if pair.second is None:
            raise DimensionMismatch(f"{spec.kind} needs two densities")
        if pair.second.dim != d:
            raise DimensionMismatch(f"densities have dimensions {d} and {pair.second.dim}")
    elif pair.second is not None:
        raise DimensionMismatch(f"{spec.kind} takes a single density")
    cols = spec.marginal_columns(d)
    if len(pair.marginals) != len(cols):
        raise DimensionMismatch(f"{spec.kind} needs {len(cols)} marginal densities")
    for m, c in zip(pair.marginals, cols):
        if m.dim != len(c):
            raise DimensionMismatch(f"marginal has dimension {m.dim}, expected {len(c)}")


def _check_grid(pair, grid):
    if grid.dim != pair.first.dim:
        raise DimensionMismatch(f"grid has dimension {grid.dim}, densities have {pair.first.dim}")


def _values(density, pts):
    pts = np.asarray(pts, dtype=float)
    if isinstance(density, KdeModel) and pts.shape == density.points.shape and np.array_equal(pts, density.points):
        # the fitted sample itself: reuse the cached kernel sums
        return density.eval_full_at_points()
    return np.asarray(density(pts), dtype=float).reshape(-1)


def _grid_values(density, spec):
    if isinstance(density, KdeModel):
        return quadrature.grid_eval(density, spec)
    return quadrature.evaluate_on_grid(density, spec)


def _broadcast(arr, cols, dim):
    shape = [1] * dim
    for c in cols:
        shape[c] = arr.shape[0]
    return arr.reshape(shape)


# ---------------------------------------------------------------------------
# the two-sample integrand nu(f, g) and its partial derivatives


def _nu(spec, f, g):
    k = spec.kind
    if k == L2:
        return (f - g) ** 2
    if k == HELLINGER:
        return np.sqrt(f * g)
    if k == CHI2:
        return (f - g) ** 2 / f
    if k == FDIV:
        return spec.phi(f / g) * g
    if k in (KL, COND_KL):
        return f * np.log(f / g)
    a, b = spec.exponents
    return f**a * g**b


def _nu_f(spec, f, g):
    k = spec.kind
    if k == L2:
        return 2.0 * (f - g)
    if k == HELLINGER:
        return 0.5 * np.sqrt(g / f)
    if k == CHI2:
        return 1.0 - (g / f) ** 2
    if k == FDIV:
        return spec.phi_prime(f / g)
    if k in (KL, COND_KL):
        return np.log(f / g) + 1.0
    a, b = spec.exponents
    return a * (g / f) ** b


def _nu_g(spec, f, g):
    k = spec.kind
    if k == L2:
        return -2.0 * (f - g)
    if k == HELLINGER:
        return 0.5 * np.sqrt(f / g)
    if k == CHI2:
        return 2.0 * (g / f) - 2.0
    if k == FDIV:
        r = f / g
        return spec.phi(r) - r * spec.phi_prime(r)
    if k in (KL, COND_KL):
        return -f / g
    a, b = spec.exponents
    return b * (f / g) ** a


def _outer(spec, s):
    k = spec.kind
    if k == HELLINGER:
        return 2.0 - 2.0 * s
    if k in (TSALLIS_D, COND_TSALLIS, COND_TSALLIS_MI):
        return (s - 1.0) / (spec.alpha - 1.0)
    if k == TSALLIS_H:
        return (1.0 - s) / (spec.alpha - 1.0)
    if k == RENYI_D:
        return math.log(s) / (spec.alpha - 1.0) if s > 0 else math.nan
    if k == RENYI_H:
        return -math.log(s) / (spec.alpha - 1.0) if s > 0 else math.nan
    return s


def _outer_slope(spec, s):
    k = spec.kind
    if k == HELLINGER:
        return -2.0
    if k in (TSALLIS_D, COND_TSALLIS, COND_TSALLIS_MI):
        return 1.0 / (spec.alpha - 1.0)
    if k == TSALLIS_H:
        return -1.0 / (spec.alpha - 1.0)
    if k == RENYI_D:
        return 1.0 / (s * (spec.alpha - 1.0))
    if k == RENYI_H:
        return -1.0 / (s * (spec.alpha - 1.0))
    return 1.0


def outer_value(spec, s):
    """Apply the outer map ``phi`` of ``spec`` to an inner-integral value."""
    return _outer(as_spec(spec), float(s))


def outer_slope(spec, s):
    """Derivative ``phi'(s)`` of the outer map."""
    return _outer_slope(as_spec(spec), float(s))


# ---------------------------------------------------------------------------
# conditional Tsallis mutual information
#
# S = int p^a q^b r^b s^(a-1) with p = p_XYZ, q = p_XZ, r = p_YZ, s = p_Z and
# b = 1 - a.  Perturbing p (and with it every marginal) at (x0, y0, z0) gives
# the derivative D below, whose mean under p is S.


def _sub_rule(grid, dim):
    spec = quadrature.GridSpec(dim, grid.points_per_axis, grid.rule)
    return quadrature.tensor_nodes(spec), quadrature.tensor_weights(spec)


def _ctmi_power_integral(spec, dens, grid):
    p, q, r, s = dens
    d = grid.dim
    xs, ys, zs = spec.blocks(d)
    a = spec.alpha
    b = 1.0 - a
    vals = _grid_values(p, grid) ** a
    for density, cols, e in ((q, xs + zs, b), (r, ys + zs, b), (s, zs, a - 1.0)):
        sub = _grid_values(density, grid.with_dim(len(cols)))
        vals = vals * _broadcast(sub**e, cols, d)
    return quadrature.integrate_values(vals, grid)


def _ctmi_derivative(spec, dens, pts, grid, chunk_nodes=200_000):
    """D(x) at each row of ``pts`` (full joint coordinates)."""
    p, q, r, s = dens
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d = pts.shape[1]
    xs, ys, zs = (list(c) for c in spec.blocks(d))
    a = spec.alpha
    b = 1.0 - a
    xn, xw = _sub_rule(grid, len(xs))
    yn, yw = _sub_rule(grid, len(ys))
    mx, my = xw.size, yw.size
    out = np.empty(pts.shape[0])
    step = max(1, chunk_nodes // (mx * my))
    for lo in range(0, pts.shape[0], step):
        blk = pts[lo : lo + step]
        k = blk.shape[0]
        x0, y0, z0 = blk[:, xs], blk[:, ys], blk[:, zs]
        q0 = _values(q, np.hstack([x0, z0]))
        r0 = _values(r, np.hstack([y0, z0]))
        s0 = _values(s, z0)
        p0 = _values(p, blk)
        t1 = a * p0 ** (a - 1.0) * q0**b * r0**b * s0 ** (a - 1.0)

        # integral over y at fixed (x0, z0)
        yy = np.repeat(yn[None], k, axis=0).reshape(-1, len(ys))
        xr = np.repeat(x0, my, axis=0)
        zr = np.repeat(z0, my, axis=0)
        py = _values(p, np.hstack([xr, yy, zr])).reshape(k, my)
        ry = _values(r, np.hstack([yy, zr])).reshape(k, my)
        iy = (py**a * ry**b) @ yw
        t2 = b * q0 ** (b - 1.0) * s0 ** (a - 1.0) * iy

        # integral over x at fixed (y0, z0)
        xx = np.repeat(xn[None], k, axis=0).reshape(-1, len(xs))
        yr = np.repeat(y0, mx, axis=0)
        zr = np.repeat(z0, mx, axis=0)
        px = _values(p, np.hstack([xx, yr, zr])).reshape(k, mx)
        qx = _values(q, np.hstack([xx, zr])).reshape(k, mx)
        ix = (px**a * qx**b) @ xw
        t3 = b * r0 ** (b - 1.0) * s0 ** (a - 1.0) * ix

        # double integral over (x, y) at fixed z0
        qxz = qx ** b
        ryz = ry ** b
        xg = np.repeat(xn, my, axis=0)
        yg = np.tile(yn, (mx, 1))
        xxg = np.tile(xg, (k, 1))
        yyg = np.tile(yg, (k, 1))
        zg = np.repeat(z0, mx * my, axis=0)
        pxy = _values(p, np.hstack([xxg, yyg, zg])).reshape(k, mx, my)
        ixy = np.einsum("kij,ki,kj,i,j->k", pxy**a, qxz, ryz, xw, yw)
        t4 = (a - 1.0) * s0 ** (a - 2.0) * ixy
        out[lo : lo + k] = t1 + t2 + t3 + t4
    return out


# ---------------------------------------------------------------------------


class FittedFunctional:
    """A functional linearised at fixed densities.

    Computes the inner integral and the centering offsets of the influence
    functions once, so repeated influence evaluations are cheap.

    Parameters
    ----------
    spec : FunctionalSpec
    pair : DensityPair
    grid : GridSpec
        Quadrature grid over the joint coordinates.
    """

    def __init__(self, spec, pair, grid):
        spec = as_spec(spec)
        _check_pair(spec, pair)
        _check_grid(pair, grid)
        self.spec = spec
        self.pair = pair
        self.grid = grid
        k = spec.kind
        if spec.arity == 2:
            f = _grid_values(pair.first, grid)
            g = _grid_values(pair.second, grid)
            self.inner = quadrature.integrate_values(_nu(spec, f, g), grid)
            self.offset_f = quadrature.integrate_values(_nu_f(spec, f, g) * f, grid)
            self.offset_g = quadrature.integrate_values(_nu_g(spec, f, g) * g, grid)
        elif k == SHANNON:
            self.inner = self._entropy(pair.first, grid)
        elif k in (TSALLIS_H, RENYI_H):
            a = spec.alpha
            self.inner = quadrature.integrate_values(_grid_values(pair.first, grid) ** a, grid)
        elif k == MI:
            hx, hy = (self._entropy(m, grid.with_dim(m.dim)) for m in pair.marginals)
            self.entropies = (hx, hy, self._entropy(pair.first, grid))
            self.inner = hx + hy - self.entropies[2]
        else:
            self.inner = _ctmi_power_integral(spec, self._ctmi_densities(), grid)

    @staticmethod
    def _entropy(density, grid):
        f = _grid_values(density, grid)
        return -quadrature.integrate_values(f * np.log(f), grid)

    def _ctmi_densities(self):
        return (self.pair.first,) + tuple(self.pair.marginals)

    @property
    def value(self):
        """The plug-in value ``T`` at the densities."""
        return _outer(self.spec, self.inner)

    @property
    def slope(self):
        """``phi'(I)``: converts inner influences into influences of ``T``."""
        return _outer_slope(self.spec, self.inner)

    def inner_influence(self, which, x):
        """Influence of the inner integral ``I`` at the rows of ``x``."""
        spec, pair = self.spec, self.pair
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != pair.first.dim:
            raise DimensionMismatch(f"points have {x.shape[1]} columns, densities have {pair.first.dim}")
        which = _which(spec, which)
        k = spec.kind
        if spec.arity == 2:
            f = _values(pair.first, x)
            g = _values(pair.second, x)
            if which == "first":
                return _nu_f(spec, f, g) - self.offset_f
            return _nu_g(spec, f, g) - self.offset_g
        if k == SHANNON:
            return -np.log(_values(pair.first, x)) - self.inner
        if k in (TSALLIS_H, RENYI_H):
            a = spec.alpha
            return a * _values(pair.first, x) ** (a - 1.0) - a * self.inner
        if k == MI:
            xs, ys = spec.blocks(x.shape[1])
            px, py = pair.marginals
            return (
                np.log(_values(pair.first, x))
                - np.log(_values(px, x[:, list(xs)]))
                - np.log(_values(py, x[:, list(ys)]))
                - self.inner
            )
        return _ctmi_derivative(spec, self._ctmi_densities(), x, self.grid) - self.inner

    def influence(self, which, x):
        """Influence function of ``T`` (``psi_f`` or ``psi_g``) at the rows of ``x``."""
        return self.slope * self.inner_influence(which, x)


def _which(spec, which):
    w = {"f": "first", "g": "second", "x": "first", "y": "second"}.get(which, which)
    if w not in ("first", "second"):
        raise InputError("which must be 'first' or 'second'")
    if w == "second" and spec.arity == 1:
        raise DimensionMismatch(f"{spec.kind} has a single influence function")
    return w


def plugin_value(spec, densities, grid):
    """``T`` evaluated on the given densities by tensor quadrature."""
    return FittedFunctional(spec, densities, grid).value


def influence(spec, which, x, densities, grid):
    """Influence function ``psi`` (``which='first'``) or ``psi_g`` at ``x``.

    ``x`` may be one point or an (N, d) array; a scalar is returned for a
    single point.
    """
    x_arr = np.asarray(x, dtype=float)
    vals = FittedFunctional(spec, densities, grid).influence(which, np.atleast_2d(x_arr))
    return float(vals[0]) if x_arr.ndim <= 1 else vals


# ---------------------------------------------------------------------------
# leave-one-out terms


def _cycle(n, m):
    big = max(n, m)
    k = np.arange(big)
    return k % n, k % m


def loo_terms(spec, densities, grid=None, cross="full"):
    """Per-sample terms of the leave-one-out estimator.

    For two samples of sizes ``n`` and ``m`` the terms are indexed by
    ``k < max(n, m)`` and pair ``X_{k mod n}`` with ``Y_{k mod m}``.  Own
    densities are always leave-one-out.  With ``cross="full"`` the density
    of the other sample uses all of its points; ``cross="loo"`` leaves out
    the paired point of the other sample too.

    For plug-through kinds (Renyi entropy and divergence) the terms estimate
    the inner power integral; the estimate is ``phi(mean(terms))``.  For all
    other kinds the estimate is ``mean(terms)``.

    Parameters
    ----------
    densities : DensityPair
        Fitted :class:`~ifest.density.KdeModel` objects.
    grid : GridSpec, optional
        Needed by kinds with integral terms (Tsallis/Renyi entropy, L2,
        conditional Tsallis MI).
    """
    spec = as_spec(spec)
    _check_pair(spec, densities)
    if cross not in ("full", "loo"):
        raise InputError("cross must be 'full' or 'loo'")
    first = densities.first
    k = spec.kind
    if grid is None:
        grid = quadrature.default_grid(first.dim)
    _check_grid(densities, grid)
    if spec.arity == 1:
        return _loo_terms_one(spec, densities, grid)

    second = densities.second
    n, m = first.n, second.n
    ii, jj = _cycle(n, m)
    X, Y = first.points, second.points
    fX = first.eval_loo_all()[ii]
    gY = second.eval_loo_all()[jj]
    if cross == "full":
        gX = second.eval(X)[ii]
        fY = first.eval(Y)[jj]
    else:
        gX = second.eval_loo_pairs(jj, X[ii])
        fY = first.eval_loo_pairs(ii, Y[jj])

    if k in (KL, COND_KL):
        return 1.0 + np.log(fX / gX) - fY / gY
    if k == HELLINGER:
        return 2.0 - np.sqrt(gX / fX) - np.sqrt(fY / gY)
    if k == CHI2:
        return -1.0 - (gX / fX) ** 2 + 2.0 * (gY / fY)
    if k == FDIV:
        r = fY / gY
        return spec.phi_prime(fX / gX) + spec.phi(r) - r * spec.phi_prime(r)
    if k in (TSALLIS_D, COND_TSALLIS):
        a = spec.alpha
        return 1.0 / (1.0 - a) + a / (a - 1.0) * (fX / gX) ** (a - 1.0) - (fY / gY) ** a
    if k in (POWER, RENYI_D):
        a, b = spec.exponents
        return a * (gX / fX) ** b + b * (fY / gY) ** a
    # L2: the squared-difference integral needs both downdated densities on the grid
    fc = quadrature.LooGridCache(first, grid)
    if cross == "full":
        g_grid = quadrature.grid_eval(second, grid)
        sq = np.array([quadrature.integrate_values((fc.loo_eval(i) - g_grid) ** 2, grid) for i in range(n)])[ii]
    else:
        gc = quadrature.LooGridCache(second, grid)
        sq = np.array(
            [quadrature.integrate_values((fc.loo_eval(i) - gc.loo_eval(j)) ** 2, grid) for i, j in zip(ii, jj)]
        )
    return 2.0 * (fX - gX) - 2.0 * (fY - gY) - sq


class _LooView:
    """Callable view of a model with sample ``i`` left out."""

    def __init__(self, model, i):
        self.model = model
        self.i = i
        self.dim = model.dim

    def __call__(self, x):
        return self.model.eval_loo_at(self.i, x)


def _loo_terms_one(spec, pair, grid):
    model = pair.first
    k = spec.kind
    if k == SHANNON:
        return -np.log(model.eval_loo_all())
    if k in (TSALLIS_H, RENYI_H):
        a = spec.alpha
        cache = quadrature.LooGridCache(model, grid)
        powers = np.array([quadrature.integrate_power_loo(model, i, a, grid, cache) for i in range(model.n)])
        fi = model.eval_loo_all()
        if k == TSALLIS_H:
            return 1.0 / (a - 1.0) + powers - a / (a - 1.0) * fi ** (a - 1.0)
        return (1.0 - a) * powers + a * fi ** (a - 1.0)
    if k == MI:
        px, py = pair.marginals
        return np.log(model.eval_loo_all()) - np.log(px.eval_loo_all()) - np.log(py.eval_loo_all())
    # conditional Tsallis MI: every density (joint and marginals) drops sample i
    a = spec.alpha
    models = (model,) + tuple(pair.marginals)
    out = np.empty(model.n)
    for i in range(model.n):
        dens = tuple(_LooView(mdl, i) for mdl in models)
        D = _ctmi_derivative(spec, dens, model.points[i : i + 1], grid)[0]
        out[i] = 1.0 / (1.0 - a) + D / (a - 1.0)
    return out


def loo_term(spec, i, densities, grid=None, cross="full"):
    """The ``i``-th term of :func:`loo_terms`."""
    terms = loo_terms(spec, densities, grid, cross)
    if not 0 <= int(i) < terms.size or int(i) != i:
        raise IndexOutOfRange(f"index {i} outside 0..{terms.size - 1}")
    return float(terms[int(i)])


def reference_loo_terms(spec, densities, grid):
    """Leave-one-out terms assembled from refitted models.

    Term ``k`` is ``T(P_k) + psi_f(X_i; P_k) + psi_g(Y_j; P_k)`` where
    ``P_k`` refits both densities without their paired points.  This costs
    one full refit and quadrature per term; it exists to check the closed
    forms of :func:`loo_terms` (``cross="loo"``) against the generic
    construction.  Plug-through kinds return inner terms, as in
    :func:`loo_terms`.
    """
    spec = as_spec(spec)
    _check_pair(spec, densities)
    first = densities.first
    out = []
    if spec.arity == 2:
        second = densities.second
        ii, jj = _cycle(first.n, second.n)
        for i, j in zip(ii, jj):
            pair = DensityPair(first.refit_without(i), second.refit_without(j))
            ff = FittedFunctional(spec, pair, grid)
            val = ff.inner if spec.plug_through else ff.value
            scale = 1.0 if spec.plug_through else ff.slope
            out.append(
                val
                + scale * ff.inner_influence("first", first.points[i])[0]
                + scale * ff.inner_influence("second", second.points[j])[0]
            )
        return np.array(out)
    for i in range(first.n):
        pair = DensityPair(
            first.refit_without(i), None, tuple(mdl.refit_without(i) for mdl in densities.marginals)
        )
        ff = FittedFunctional(spec, pair, grid)
        if spec.plug_through:
            out.append(ff.inner + ff.inner_influence("first", first.points[i])[0])
        else:
            out.append(ff.value + ff.influence("first", first.points[i])[0])
    return np.array(out)


# ---------------------------------------------------------------------------
# finite-difference check of the von Mises expansion


class _Blend:
    """The density ``(1 - t) p + t q``."""

    def __init__(self, p, q, t):
        if p.dim != q.dim:
            raise DimensionMismatch("blended densities must share a dimension")
        self.p, self.q, self.t = p, q, float(t)
        self.dim = p.dim

    def __call__(self, x):
        return (1.0 - self.t) * _values(self.p, x) + self.t * _values(self.q, x)

    def marginal(self, cols):
        return _Blend(self.p.marginal(cols), self.q.marginal(cols), self.t)


def _blend(p, q, t):
    return p if q is p else _Blend(p, q, t)


def _as_pair(spec, obj):
    if isinstance(obj, DensityPair):
        return obj
    if isinstance(obj, (tuple, list)):
        return DensityPair.from_analytic(spec, obj[0], obj[1] if len(obj) > 1 else None)
    return DensityPair.from_analytic(spec, obj)


def vme_residual(spec, p, q, t, grid):
    """Second-order remainder of the von Mises expansion along ``p -> q``.

    Returns ``T(p_t) - T(p) - t * sum_args int psi(x; p) (q - p)(x) dx`` with
    ``p_t = p + t (q - p)``.  It should shrink like ``t**2``.

    ``p`` and ``q`` are :class:`DensityPair` objects, a single density for
    one-sample kinds, or ``(f, g)`` tuples.  Analytic densities supply
    their own marginals.
    """
    spec = as_spec(spec)
    if not 0.0 < t <= 0.1:
        raise InputError("t must lie in (0, 0.1]")
    pp, qq = _as_pair(spec, p), _as_pair(spec, q)
    _check_pair(spec, pp)
    _check_pair(spec, qq)
    if pp.first.dim != qq.first.dim:
        raise DimensionMismatch("p and q have different dimensions")
    if qq.first is pp.first and qq.second is pp.second:
        return 0.0
    pt = DensityPair(
        _blend(pp.first, qq.first, t),
        None if pp.second is None else _blend(pp.second, qq.second, t),
        tuple(_blend(a, b, t) for a, b in zip(pp.marginals, qq.marginals)),
    )
    base = FittedFunctional(spec, pp, grid)
    moved = FittedFunctional(spec, pt, grid)
    nodes = quadrature.tensor_nodes(grid)
    lin = 0.0
    args = [("first", pp.first, qq.first)]
    if spec.arity == 2:
        args.append(("second", pp.second, qq.second))
    for which, a, b in args:
        if b is a:
            continue
        psi = base.influence(which, nodes)
        diff = _values(b, nodes) - _values(a, nodes)
        lin += quadrature.integrate_values(psi * diff, grid)
    return moved.value - base.value - t * lin
