"""Data-split, leave-one-out and plug-in estimators with confidence intervals.

All estimators share the same plumbing: fit kernel density estimates (with
cross-validated bandwidths unless fixed ones are given), linearise the
functional at the fitted densities, and combine plug-in values with
averaged influence functions.

Variance estimates are sample variances of influence values.  For the
leave-one-out estimator they are evaluated at the full-sample densities;
for the data-split estimator they are pooled over both held-out halves.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import density, quadrature
from . import functionals as F
from .errors import BadAlpha, BadBandwidth, DegenerateCase, DimensionMismatch, InputError, TooFewSamples
from .kernels import legendre_kernel
from .synthdata import make_rng

__all__ = [
    "Estimate",
    "EstimatorConfig",
    "fit_densities",
    "estimate",
    "estimate_ds",
    "estimate_loo",
    "estimate_plugin",
    "estimate_power_integral",
    "estimate_cond_tsallis_variance",
    "confidence_interval",
    "normal_quantile",
    "DEGENERATE_TOL",
]

DEGENERATE_TOL = 1e-12
METHODS = ("ds", "loo", "plugin")
AUTO_BANDWIDTHS = ("auto", "auto_diag")


def _bandwidth_entry(h):
    """A positive float, or a tuple of them for a per-axis bandwidth."""
    if isinstance(h, (tuple, list, np.ndarray)):
        vals = tuple(float(v) for v in h)
        if not vals:
            raise BadBandwidth("empty per-axis bandwidth")
    else:
        vals = (float(h),)
    if any(not (v > 0.0 and math.isfinite(v)) for v in vals):
        raise BadBandwidth("bandwidths must be positive")
    return vals[0] if len(vals) == 1 else vals


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings shared by every estimator.

    Parameters
    ----------
    bandwidth : "auto", "auto_diag", float or tuple of floats
        ``"auto"`` runs least-squares cross-validation per sample set for a
        bandwidth shared by all coordinates; ``"auto_diag"`` refines it to
        one bandwidth per coordinate.  A float is used for every density; a
        tuple gives one bandwidth per density in fitting order (first,
        second or joint, marginals...); an entry of that tuple may
        itself be a tuple of per-axis bandwidths.
    kernel_order : int
        Order of the Legendre kernel.
    clamps : (float, float)
        Truncation bounds ``(B', B)`` of every density estimate.
    boundary : {"mirror", "none"}
    grid_points : int, optional
        Nodes per axis of the quadrature grid; defaults depend on d.
    grid_rule : {"midpoint", "gauss_legendre"}
    cv_grid : sequence of float, optional
        Candidate bandwidths for cross-validation.
    folds : int
        Cross-validation folds.
    seed : int
        Seeds fold assignment and the data split.
    cross : {"full", "loo"}, optional
        How the leave-one-out estimator evaluates the other sample's density
        at a point; ``None`` picks ``"loo"`` for the power integral and the
        Renyi divergence and ``"full"`` otherwise.
    """

    bandwidth: object = "auto"
    kernel_order: int = 2
    clamps: tuple = (0.0, math.inf)
    boundary: str = "mirror"
    grid_points: Optional[int] = None
    grid_rule: str = "midpoint"
    cv_grid: Optional[tuple] = None
    folds: int = 5
    seed: int = 0
    cross: Optional[str] = None

    def __post_init__(self):
        if int(self.kernel_order) < 0:
            raise InputError("kernel order must be nonnegative")
        if self.cross not in (None, "full", "loo"):
            raise InputError("cross must be 'full' or 'loo'")
        bw = self.bandwidth
        if isinstance(bw, str):
            if bw not in AUTO_BANDWIDTHS:
                raise InputError("bandwidth must be 'auto', 'auto_diag', a number or a tuple of numbers")
        else:
            vals = tuple(_bandwidth_entry(h) for h in (bw if isinstance(bw, (tuple, list)) else [bw]))
            if not vals:
                raise BadBandwidth("bandwidths must be positive")
            single = len(vals) == 1 and not isinstance(vals[0], tuple)
            object.__setattr__(self, "bandwidth", vals[0] if single else vals)

    @property
    def kernel(self):
        return legendre_kernel(int(self.kernel_order))

    def grid(self, dim):
        return quadrature.default_grid(dim, self.grid_points, self.grid_rule)

    def cross_for(self, spec):
        if self.cross is not None:
            return self.cross
        return "loo" if spec.kind in (F.POWER, F.RENYI_D) else "full"


@dataclass(frozen=True)
class Estimate:
    """Point estimate with influence-based variances.

    ``variance_f`` and ``variance_g`` are sample variances of the influence
    functions of the first and second argument (``variance_g`` is ``None``
    for single-sample kinds).
    """

    value: float
    variance_f: float
    variance_g: Optional[float]
    n_used: int
    m_used: Optional[int]
    method: str
    degenerate_flag: bool
    functional: str = ""
    seed: int = 0
    bandwidths: tuple = ()
    kernel_order: int = 2
    conjectural: bool = False
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def arity(self):
        return 1 if self.variance_g is None else 2

    @property
    def standard_error(self):
        """``sqrt(V_f / n + V_g / m)``: the scale of the normal approximation."""
        var = self.variance_f / self.n_used
        if self.variance_g is not None:
            var += self.variance_g / self.m_used
        return math.sqrt(var)

    @property
    def asymptotic_variance(self):
        """Estimate of the limiting variance of ``sqrt(N) (T_hat - T)``."""
        total = self.n_used + (self.m_used or 0)
        return total * self.standard_error**2

    def ci(self, level=0.95, asymptotic_variance=None):
        return confidence_interval(self, level, asymptotic_variance)

    def as_dict(self):
        return {
            "functional": self.functional,
            "method": self.method,
            "value": self.value,
            "variance_f": self.variance_f,
            "variance_g": self.variance_g,
            "n_used": self.n_used,
            "m_used": self.m_used,
            "degenerate": self.degenerate_flag,
            "conjectural": self.conjectural,
            "seed": self.seed,
            "bandwidths": list(self.bandwidths),
            "kernel_order": self.kernel_order,
        }


# ---------------------------------------------------------------------------
# inverse normal CDF

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def _poly(coeffs, x):
    out = 0.0
    for c in coeffs:
        out = out * x + c
    return out


def normal_quantile(p):
    """Inverse of the standard normal CDF.

    Acklam's rational approximation (relative error about 1e-9) followed by
    one Halley step against ``erfc``, which brings the result to within a
    few ulps over (1e-300, 1 - 1e-16).
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InputError("probability must lie strictly between 0 and 1")
    lo = 0.02425
    if p < lo:
        q = math.sqrt(-2.0 * math.log(p))
        x = _poly(_C, q) / (_poly(_D, q) * q + 1.0)
    elif p <= 1.0 - lo:
        q = p - 0.5
        r = q * q
        x = _poly(_A, r) * q / (_poly(_B, r) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -_poly(_C, q) / (_poly(_D, q) * q + 1.0)
    # Halley refinement; the tail form keeps precision for small p
    if x < 0:
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def confidence_interval(e, level=0.95, asymptotic_variance=None):
    """Normal-approximation interval ``value +/- z * standard_error``.

    Parameters
    ----------
    e : Estimate
    level : float in (0, 1)
    asymptotic_variance : float, optional
        Replacement for the influence-based variance, on the scale of
        ``sqrt(N) (T_hat - T)`` with ``N = n_used + m_used``; for example
        the output of :func:`estimate_cond_tsallis_variance`.
    """
    if not 0.0 < level < 1.0:
        raise InputError("level must lie in (0, 1)")
    if asymptotic_variance is None:
        if e.degenerate_flag:
            raise DegenerateCase("both influence variances vanish; the normal interval does not apply")
        se = e.standard_error
    else:
        if not asymptotic_variance > DEGENERATE_TOL:
            raise DegenerateCase("the supplied asymptotic variance is not positive")
        se = math.sqrt(asymptotic_variance / (e.n_used + (e.m_used or 0)))
    z = normal_quantile(0.5 * (1.0 + level))
    half = z * se
    return e.value - half, e.value + half


# ---------------------------------------------------------------------------
# fitting


def _prepare(spec, X, Y):
    spec = F.as_spec(spec)
    X = density.as_samples(X, "X")
    if X.shape[0] == 0:
        raise TooFewSamples("X is empty")
    if spec.arity == 2:
        if Y is None:
            raise DimensionMismatch(f"{spec.kind} compares two samples; Y is missing")
        Y = density.as_samples(Y, "Y")
        if Y.shape[0] == 0:
            raise TooFewSamples("Y is empty")
        if Y.shape[1] != X.shape[1]:
            raise DimensionMismatch(f"X has {X.shape[1]} columns, Y has {Y.shape[1]}")
    elif Y is not None:
        raise DimensionMismatch(f"{spec.kind} takes a single sample")
    spec.check_dim(X.shape[1])
    return spec, X, Y


def _bandwidth(cfg, samples, slot):
    bw = cfg.bandwidth
    if isinstance(bw, str):
        return density.cv_bandwidth(
            samples,
            cfg.kernel,
            cfg.cv_grid,
            cfg.folds,
            cfg.seed,
            cfg.boundary,
            cfg.grid(samples.shape[1]),
            diagonal=(bw == "auto_diag"),
        )
    if isinstance(bw, tuple):
        return bw[min(slot, len(bw) - 1)]
    return bw


def fit_densities(spec, X, Y=None, cfg=None):
    """Fit every density ``spec`` needs; returns the :class:`DensityPair`."""
    cfg = cfg or EstimatorConfig()
    spec, X, Y = _prepare(spec, X, Y)

    def fit(samples, slot):
        return density.fit(samples, _bandwidth(cfg, samples, slot), cfg.kernel, cfg.clamps, cfg.boundary)

    first = fit(X, 0)
    if spec.arity == 2:
        return F.DensityPair(first, fit(Y, 1))
    cols = spec.marginal_columns(X.shape[1])
    return F.DensityPair(first, None, tuple(fit(X[:, list(c)], k + 1) for k, c in enumerate(cols)))


def _bandwidths(pair):
    models = [pair.first] + ([pair.second] if pair.second is not None else []) + list(pair.marginals)
    return tuple(m.bandwidth for m in models)


def _variance(values):
    """Sample variance; a list of arrays gives the pooled within-group variance."""
    if isinstance(values, list):
        groups = [np.asarray(v, dtype=float) for v in values if np.size(v) > 1]
        dof = sum(g.size - 1 for g in groups)
        if dof == 0:
            return 0.0
        return float(sum(np.var(g, ddof=1) * (g.size - 1) for g in groups) / dof)
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.var(values, ddof=1))


def _finish(spec, cfg, value, psi_f, psi_g, n_used, m_used, method, pair, **extra):
    vf = _variance(psi_f)
    vg = None if spec.arity == 1 else _variance(psi_g)
    degenerate = vf < DEGENERATE_TOL and (vg is None or vg < DEGENERATE_TOL)
    return Estimate(
        value=float(value),
        variance_f=vf,
        variance_g=vg,
        n_used=int(n_used),
        m_used=None if spec.arity == 1 else int(m_used),
        method=method,
        degenerate_flag=bool(degenerate),
        functional=spec.describe(),
        seed=int(cfg.seed),
        bandwidths=_bandwidths(pair),
        kernel_order=int(cfg.kernel_order),
        conjectural=(method == "loo"),
        extras=extra,
    )


# ---------------------------------------------------------------------------
# estimators


def split_halves(n, seed):
    """Even and odd positions of a seeded shuffle of ``range(n)``.

    The permutation depends only on ``(seed, n)``; an odd ``n`` drops the
    last shuffled index.
    """
    perm = make_rng(seed, n, 0xD5).permutation(n)
    used = perm[: 2 * (n // 2)]
    return used[0::2], used[1::2]


def split_sample(points, seed):
    """Row indices of the two halves of ``points``.

    The split is drawn on the lexicographically sorted rows, so it follows
    the data rather than the order the rows arrive in.
    """
    order = density.row_order(points)
    a, b = split_halves(order.size, seed)
    return order[a], order[b]


def estimate_ds(spec, X, Y=None, cfg=None):
    """Data-split estimator averaged over both split directions.

    Densities fitted on one half linearise the functional; influence values
    are averaged over the other half.  For the Renyi kinds the inner power
    integral is estimated this way and the outer logarithm applied to the
    average of the two directions.
    """
    cfg = cfg or EstimatorConfig()
    spec, X, Y = _prepare(spec, X, Y)
    n = X.shape[0]
    m = Y.shape[0] if Y is not None else None
    if n < 4 or (m is not None and m < 4):
        raise TooFewSamples("the data-split estimator needs at least 4 points per sample")
    xa, xb = split_sample(X, cfg.seed)
    if m is not None:
        ya, yb = split_sample(Y, cfg.seed)
    inner, psi_f, psi_g = [], [], []
    pair = None
    for fit_x, hold_x, fit_y, hold_y in (
        (xa, xb, None if m is None else ya, None if m is None else yb),
        (xb, xa, None if m is None else yb, None if m is None else ya),
    ):
        pair = fit_densities(spec, X[fit_x], None if m is None else Y[fit_y], cfg)
        ff = F.FittedFunctional(spec, pair, cfg.grid(X.shape[1]))
        inf_f = ff.inner_influence("first", X[hold_x])
        est = ff.inner + np.mean(inf_f)
        psi_f.append(ff.slope * inf_f)
        if m is not None:
            inf_g = ff.inner_influence("second", Y[hold_y])
            est += np.mean(inf_g)
            psi_g.append(ff.slope * inf_g)
        inner.append(est)
    value = F.outer_value(spec, 0.5 * (inner[0] + inner[1]))
    return _finish(
        spec,
        cfg,
        value,
        psi_f,
        psi_g if psi_g else None,
        2 * (n // 2),
        None if m is None else 2 * (m // 2),
        "ds",
        pair,
        halves=tuple(float(F.outer_value(spec, v)) for v in inner),
    )


def estimate_loo(spec, X, Y=None, cfg=None):
    """Leave-one-out estimator: the mean of the closed-form per-sample terms.

    Two samples of different sizes are cycled: the shorter one is indexed
    modulo its size while the longer one is traversed once.  Variances use
    influence values at the full-sample densities; intervals built from
    them are marked ``conjectural``.
    """
    cfg = cfg or EstimatorConfig()
    spec, X, Y = _prepare(spec, X, Y)
    n = X.shape[0]
    m = Y.shape[0] if Y is not None else None
    if n < 2 or (m is not None and m < 2):
        raise TooFewSamples("the leave-one-out estimator needs at least 2 points per sample")
    pair = fit_densities(spec, X, Y, cfg)
    grid = cfg.grid(X.shape[1])
    terms = F.loo_terms(spec, pair, grid, cfg.cross_for(spec))
    mean = float(np.mean(terms))
    value = F.outer_value(spec, mean) if spec.plug_through else mean
    ff = F.FittedFunctional(spec, pair, grid)
    psi_f = ff.influence("first", X)
    psi_g = ff.influence("second", Y) if m is not None else None
    return _finish(spec, cfg, value, psi_f, psi_g, n, m, "loo", pair, inner=mean)


def estimate_plugin(spec, X, Y=None, cfg=None):
    """Plug-in baseline: ``T`` of the full-sample density estimates."""
    cfg = cfg or EstimatorConfig()
    spec, X, Y = _prepare(spec, X, Y)
    if X.shape[0] < 2 or (Y is not None and Y.shape[0] < 2):
        raise TooFewSamples("a density estimate needs at least 2 points")
    pair = fit_densities(spec, X, Y, cfg)
    value = F.plugin_value(spec, pair, cfg.grid(X.shape[1]))
    est = _finish(spec, cfg, value, [], [] if Y is not None else None, X.shape[0],
                  None if Y is None else Y.shape[0], "plugin", pair)
    # zero variances here mean "not estimated", not a vanishing first-order term
    return dataclasses.replace(est, degenerate_flag=False)


def estimate(spec, X, Y=None, cfg=None, method="loo"):
    """Dispatch to :func:`estimate_ds`, :func:`estimate_loo` or :func:`estimate_plugin`."""
    funcs = {"ds": estimate_ds, "loo": estimate_loo, "plugin": estimate_plugin}
    if method not in funcs:
        raise InputError(f"method must be one of {METHODS}")
    return funcs[method](spec, X, Y, cfg)


def estimate_power_integral(a, b, X, Y, cfg=None):
    """Leave-one-out estimate of ``S(a, b) = int f^a g^b`` with ``a + b = 1``.

    Both densities are left-one-out at every evaluation, so the cross terms
    use ``cross="loo"`` unless the configuration overrides it.
    """
    spec = F.FunctionalSpec(F.POWER, alpha=a, beta_exponent=b)
    return estimate_loo(spec, X, Y, cfg)


def estimate_cond_tsallis_variance(X, Y, alpha, cfg=None):
    """Closed-form asymptotic variance of the conditional Tsallis divergence.

    Uses three power-integral estimates on one pair of fitted densities::

        (N/n) a^2/(a-1)^2 S(2a-1, 2b) + (N/m) S(2a, 2b-1)
            - N (m a^2 + n (a-1)^2) / (n m (a-1)^2) S(a, b)^2

    with ``b = 1 - a`` and ``N = n + m``.  The samples are joint ``(X, Z)``
    draws; the conditioning split does not enter the formula.
    """
    a = float(alpha)
    if not math.isfinite(a) or a in (0.0, 0.5, 1.0):
        raise BadAlpha("alpha must avoid 0, 1/2 and 1")
    cfg = cfg or EstimatorConfig()
    spec = F.FunctionalSpec(F.POWER, alpha=a, beta_exponent=1.0 - a)
    spec, X, Y = _prepare(spec, X, Y)
    n, m = X.shape[0], Y.shape[0]
    if n < 2 or m < 2:
        raise TooFewSamples("need at least 2 points per sample")
    pair = fit_densities(spec, X, Y, cfg)
    grid = cfg.grid(X.shape[1])
    cross = cfg.cross or "loo"
    b = 1.0 - a

    def s_hat(p, q):
        sp = F.FunctionalSpec(F.POWER, alpha=p, beta_exponent=q)
        return float(np.mean(F.loo_terms(sp, pair, grid, cross)))

    s = s_hat(a, b)
    s1 = s_hat(2.0 * a - 1.0, 2.0 * b)
    s2 = s_hat(2.0 * a, 2.0 * b - 1.0)
    N = n + m
    k = a * a / (a - 1.0) ** 2
    return (N / n) * k * s1 + (N / m) * s2 - N * (m * a * a + n * (a - 1.0) ** 2) / (n * m * (a - 1.0) ** 2) * s * s
