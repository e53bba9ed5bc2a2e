"""Analytic test densities, seeded samplers and quadrature ground truths.

The one-dimensional building blocks are

``uniform``   density 1 on [0, 1];
``f1``        0.5 + 5 t**9, an even mixture of U(0, 1) and the maximum of
              ten uniforms (whose density is 10 t**9);
``f2``        0.5 + 0.5 Beta(20, 20), an even mixture of U(0, 1) and a
              Beta(20, 20) variable;
``beta2020``  the Beta(20, 20) density on its own.

Multivariate densities are products of these, written ``"f2xuniform"`` or
``"f2^3"``.  :class:`MixtureDensity` combines products into dependent
joints, which is what mutual-information checks need.

Random numbers
--------------
Every sampler draws from ``numpy.random.Generator(PCG64(SeedSequence(key)))``
where ``key`` is ``[seed]`` or ``[seed, stream, ...]``.  PCG64 and
SeedSequence are fixed, documented algorithms, so a seed reproduces the same
sample on any platform.  Beta(20, 20) variables are ``G1 / (G1 + G2)`` with
``G1, G2`` standard gamma draws of shape 20 (numpy's Marsaglia-Tsang
squeeze/rejection method).
"""

import math
import re

import numpy as np

from .errors import BadSpec, InputError, OutOfDomain

__all__ = [
    "AnalyticDensity",
    "MixtureDensity",
    "parse_dist",
    "sample",
    "density_value",
    "oracle_truth",
    "population_variances",
    "make_rng",
    "trial_seed",
]

BASE_KINDS = ("uniform", "f1", "f2", "beta2020")
LOG_BETA_20_20 = 2.0 * math.lgamma(20.0) - math.lgamma(40.0)


def make_rng(*key):
    """PCG64 generator keyed by a tuple of nonnegative integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def trial_seed(seed, *stream):
    """Derive a 63-bit seed for an independent stream, e.g. ``(seed, n, trial)``."""
    ss = np.random.SeedSequence([int(seed)] + [int(s) for s in stream])
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def _beta2020_pdf(t):
    with np.errstate(divide="ignore"):
        logv = 19.0 * (np.log(t) + np.log1p(-t)) - LOG_BETA_20_20
    return np.exp(logv)


def _pdf_1d(kind, t):
    if kind == "uniform":
        return np.ones_like(t)
    if kind == "f1":
        return 0.5 + 5.0 * t**9
    if kind == "f2":
        return 0.5 + 0.5 * _beta2020_pdf(t)
    return _beta2020_pdf(t)


def _beta2020(rng, n):
    g1 = rng.standard_gamma(20.0, n)
    g2 = rng.standard_gamma(20.0, n)
    return g1 / (g1 + g2)


def _draw_1d(kind, rng, n):
    if kind == "uniform":
        return rng.random(n)
    if kind == "beta2020":
        return _beta2020(rng, n)
    pick_uniform = rng.random(n) < 0.5
    flat = rng.random(n)
    if kind == "f1":
        other = rng.random((n, 10)).max(axis=1)
    else:
        other = _beta2020(rng, n)
    return np.where(pick_uniform, flat, other)


class AnalyticDensity:
    """Product of one-dimensional analytic densities on [0, 1]^d.

    Parameters
    ----------
    factors : sequence of str
        One base kind per coordinate.
    """

    def __init__(self, factors):
        factors = tuple(factors)
        if not factors:
            raise BadSpec("a density needs at least one coordinate")
        for f in factors:
            if f not in BASE_KINDS:
                raise BadSpec(f"unknown density kind {f!r}; expected one of {BASE_KINDS}")
        self.factors = factors

    @property
    def kind(self):
        return self.factors[0] if len(self.factors) == 1 else "product"

    @property
    def dim(self):
        return len(self.factors)

    @property
    def name(self):
        return "x".join(self.factors)

    def __repr__(self):
        return f"AnalyticDensity({self.name!r})"

    def __eq__(self, other):
        return isinstance(other, AnalyticDensity) and other.factors == self.factors

    def __hash__(self):
        return hash(self.factors)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, self.dim)
        out = np.ones(pts.shape[0])
        for c, kind in enumerate(self.factors):
            out = out * _pdf_1d(kind, pts[:, c])
        return float(out[0]) if x.ndim <= 1 else out

    def marginal(self, cols):
        return AnalyticDensity([self.factors[c] for c in cols])

    def sample(self, n, seed=0, rng=None):
        rng = make_rng(seed) if rng is None else rng
        cols = [_draw_1d(kind, rng, n) for kind in self.factors]
        return np.column_stack(cols) if cols else np.empty((n, 0))


class MixtureDensity:
    """Finite mixture of :class:`AnalyticDensity` products with a common dimension.

    Mixing product densities gives dependent coordinates with closed-form
    marginals, since the marginal of a mixture is the mixture of marginals.
    """

    def __init__(self, weights, components):
        w = np.asarray(weights, dtype=float)
        comps = list(components)
        if w.ndim != 1 or w.size != len(comps) or w.size == 0:
            raise BadSpec("need one weight per component")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise BadSpec("mixture weights must be positive and sum to one")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise BadSpec("mixture components must share a dimension")
        self.weights = w
        self.components = comps

    @property
    def dim(self):
        return self.components[0].dim

    def __repr__(self):
        parts = ", ".join(f"{w:g}*{c.name}" for w, c in zip(self.weights, self.components))
        return f"MixtureDensity({parts})"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, self.dim)
        out = sum(w * c(pts) for w, c in zip(self.weights, self.components))
        return float(out[0]) if x.ndim <= 1 else out

    def marginal(self, cols):
        return MixtureDensity(self.weights, [c.marginal(cols) for c in self.components])

    def sample(self, n, seed=0, rng=None):
        rng = make_rng(seed) if rng is None else rng
        which = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(which == k)
            out[idx] = comp.sample(idx.size, rng=rng)
        return out


_TOKEN = re.compile(r"^([a-z0-9]+?)(?:\^(\d+))?$")


def parse_dist(text):
    """Parse ``"f2xuniform"``, ``"f2^3"`` or ``"f1xf2^2"`` into a density."""
    if isinstance(text, (AnalyticDensity, MixtureDensity)):
        return text
    raw = str(text).strip().lower()
    if not raw:
        raise BadSpec("empty distribution spec")
    factors = []
    for tok in raw.split("x"):
        m = _TOKEN.match(tok)
        if m is None or m.group(1) not in BASE_KINDS:
            raise BadSpec(f"cannot parse distribution spec {text!r}")
        reps = int(m.group(2)) if m.group(2) else 1
        if reps < 1:
            raise BadSpec(f"bad repeat count in {text!r}")
        factors.extend([m.group(1)] * reps)
    return AnalyticDensity(factors)


def sample(density, n, seed=0):
    """Draw ``n`` points from ``density`` (an analytic density or spec string)."""
    if int(n) < 1:
        raise InputError("n must be at least 1")
    return parse_dist(density).sample(int(n), seed=seed)


def density_value(density, x):
    """Evaluate ``density`` at ``x`` after checking that ``x`` lies in the cube."""
    dens = parse_dist(density)
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1:] != (dens.dim,) and not (pts.ndim == 0 and dens.dim == 1):
        raise OutOfDomain(f"expected points with {dens.dim} coordinates")
    if not np.all(np.isfinite(pts)) or pts.min() < 0.0 or pts.max() > 1.0:
        raise OutOfDomain("point outside [0, 1]^d")
    return dens(pts.reshape(-1, dens.dim)) if pts.ndim > 1 else dens(pts.reshape(dens.dim))


def oracle_truth(spec, densities, fine_grid=None):
    """Functional value on analytic densities by fine tensor quadrature.

    ``densities`` is one density for single-sample kinds or a pair
    ``(first, second)`` for divergences.  The default grid is
    :func:`ifest.quadrature.oracle_grid`.
    """
    from . import functionals, quadrature

    spec = functionals.as_spec(spec)
    if spec.arity == 2:
        first, second = (parse_dist(d) for d in densities)
    else:
        first = parse_dist(densities[0] if isinstance(densities, (tuple, list)) else densities)
        second = None
    grid = fine_grid if fine_grid is not None else quadrature.oracle_grid(first.dim)
    pair = functionals.DensityPair.from_analytic(spec, first, second)
    return functionals.plugin_value(spec, pair, grid)


_VARIANCE_POINTS = {1: 512, 2: 96, 3: 24, 4: 12}


def population_variances(spec, densities, grid=None):
    """Variances of the influence functions under the analytic densities.

    Returns ``(V_f[psi_f], V_g[psi_g])`` with ``None`` in the second slot for
    single-sample kinds.  Both vanish when the functional is degenerate at
    the given densities (for instance a divergence between equal densities).
    """
    from . import functionals, quadrature

    spec = functionals.as_spec(spec)
    if spec.arity == 2:
        first, second = (parse_dist(d) for d in densities)
    else:
        first = parse_dist(densities[0] if isinstance(densities, (tuple, list)) else densities)
        second = None
    if grid is None:
        grid = quadrature.GridSpec(first.dim, _VARIANCE_POINTS[min(first.dim, 4)], "gauss_legendre")
    pair = functionals.DensityPair.from_analytic(spec, first, second)
    fitted = functionals.FittedFunctional(spec, pair, grid)
    nodes = quadrature.tensor_nodes(grid)
    w = quadrature.tensor_weights(grid)
    out = []
    for which, dens in (("first", first), ("second", second)):
        if dens is None:
            out.append(None)
            continue
        psi = fitted.influence(which, nodes)
        p = dens(nodes) * w
        mean = float(np.sum(p * psi))
        out.append(float(np.sum(p * (psi - mean) ** 2)))
    return tuple(out)
