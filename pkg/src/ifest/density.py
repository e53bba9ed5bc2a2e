"""Kernel density estimation on the unit cube.

A :class:`KdeModel` is a product-kernel KDE with optional mirror reflection
across the faces of [0, 1]^d and truncation into ``[max(B', 1e-12), B]``.
Leave-one-out values at the sample points are exact sums over the other
points; they are computed once per model and cached.
"""

import math
from functools import cached_property

import numpy as np
from numba import njit

from .errors import (
    BadBandwidth,
    EmptyGrid,
    EmptySample,
    IndexOutOfRange,
    InputError,
    OutOfDomain,
    TooFewSamples,
)
from .kernels import Kernel1D, eval_kernel, legendre_kernel

__all__ = [
    "FLOOR",
    "KdeModel",
    "fit",
    "eval",
    "eval_loo",
    "eval_loo_at",
    "cv_bandwidth",
    "axis_bandwidths",
    "default_bandwidth_grid",
    "fold_labels",
    "sample_fold_labels",
    "as_samples",
]

FLOOR = 1e-12
_DIAGONAL_PASSES = 4
# larger samples are cross-validated on a subsample of this size
CV_MAX_POINTS = 4000
# query rows per pruned evaluation chunk
_PRUNE_CHUNK = 256
BOUNDARIES = ("mirror", "none")
# rows per chunk when forming (query x sample) kernel blocks
_BLOCK_ELEMS = 2_000_000


def as_samples(samples, name="samples"):
    """Return ``samples`` as a float (n, d) array, checking it lies in [0,1]^d."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InputError(f"{name} must be an (n, d) table")
    if not np.all(np.isfinite(x)):
        raise OutOfDomain(f"{name} contains non-finite values")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise OutOfDomain(f"{name} has coordinates outside [0, 1]")
    return x


def _as_query(x, d):
    q = np.asarray(x, dtype=float)
    single = q.ndim <= 1
    q = q.reshape(1, -1) if single else q
    if q.shape[1] != d:
        raise OutOfDomain(f"query has {q.shape[1]} coordinates, model has {d}")
    if q.size and (not np.all(np.isfinite(q)) or q.min() < 0.0 or q.max() > 1.0):
        raise OutOfDomain("query point outside [0, 1]^d")
    return q, single


def axis_bandwidths(h, d):
    """Per-coordinate bandwidths: a scalar is repeated, a sequence must have length d."""
    vals = np.atleast_1d(np.asarray(h, dtype=float)).reshape(-1)
    if vals.size == 1:
        vals = np.repeat(vals, d)
    if vals.size != d:
        raise BadBandwidth(f"need 1 or {d} bandwidths, got {vals.size}")
    if not np.all(vals > 0.0) or not np.all(np.isfinite(vals)):
        raise BadBandwidth(f"bandwidths must be positive, got {h!r}")
    return tuple(float(v) for v in vals)


def _compact(hs):
    """A scalar when every axis shares the bandwidth, else the tuple."""
    return hs[0] if all(v == hs[0] for v in hs) else tuple(hs)


def _min_abs(lo, hi):
    if lo <= 0.0 <= hi:
        return 0.0
    return min(abs(lo), abs(hi))


def _image_maps(h, boundary):
    """Affine maps ``p -> sign * p + shift`` whose images can reach [0, 1]."""
    if boundary == "none":
        return [(1.0, 0.0)]
    maps = []
    kmax = int(math.ceil((h + 1.0) / 2.0)) + 1
    for k in range(-kmax, kmax + 1):
        # q - (2k + p) ranges over [-1 - 2k, 1 - 2k]
        if _min_abs(-1.0 - 2 * k, 1.0 - 2 * k) <= h:
            maps.append((1.0, 2.0 * k))
        # q - (2k - p) ranges over [-2k, 2 - 2k]
        if _min_abs(-2.0 * k, 2.0 - 2 * k) <= h:
            maps.append((-1.0, 2.0 * k))
    return maps


def _reach(sign, shift, h):
    """Sample values ``p`` whose image ``sign * p + shift`` can come within h of [0, 1]."""
    lo, hi = (-h - shift) * sign, (1.0 + h - shift) * sign
    return min(lo, hi), max(lo, hi)


@njit(cache=True)
def _axis_kernel_loop(q, p, h, coeffs, signs, shifts, out):
    for r in range(q.size):
        for c in range(p.size):
            total = 0.0
            for k in range(signs.size):
                u = (q[r] - (signs[k] * p[c] + shifts[k])) / h
                if u <= 1.0 and u >= -1.0:
                    w = u * u
                    val = 0.0
                    for a in range(coeffs.size):
                        val = val * w + coeffs[a]
                    total += val
            out[r, c] = total / h


def axis_kernel(q, p, h, kernel, boundary="mirror"):
    """One-coordinate kernel terms ``sum_images K((q - img)/h) / h``.

    ``q`` (Q,) and ``p`` (n,) give a (Q, n) matrix.
    """
    q = np.ascontiguousarray(q, dtype=float).reshape(-1)
    p = np.ascontiguousarray(p, dtype=float).reshape(-1)
    maps = np.array(_image_maps(h, boundary), dtype=float).reshape(-1, 2)
    out = np.empty((q.size, p.size))
    _axis_kernel_loop(
        q, p, float(h), kernel.even_coefficients, maps[:, 0].copy(), maps[:, 1].copy(), out
    )
    return out


def axis_kernel_diag(p, h, kernel, boundary="mirror"):
    """Self terms: ``axis_kernel(p_i, p_i)`` for each i."""
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    for sign, shift in _image_maps(h, boundary):
        out += eval_kernel(kernel, (p - (sign * p + shift)) / h)
    return out / h


def kernel_block(query, points, h, kernel, boundary="mirror", cols=None):
    """(Q, n) matrix of per-sample contributions ``K_h(query_r - X_j)``.

    ``h`` is a scalar or one bandwidth per column of ``points``.
    """
    hs = axis_bandwidths(h, points.shape[1])
    cols = range(points.shape[1]) if cols is None else cols
    block = None
    for c in cols:
        a = axis_kernel(query[:, c], points[:, c], hs[c], kernel, boundary)
        block = a if block is None else block * a
    return block


def _active_columns(p0_sorted, qlo, qhi, h, boundary):
    """Sorted-order columns whose first coordinate (or an image) is near [qlo, qhi]."""
    n = p0_sorted.size
    idx = [np.arange(np.searchsorted(p0_sorted, qlo - h), np.searchsorted(p0_sorted, qhi + h, "right"))]
    for sign, shift in _image_maps(h, boundary):
        if sign == 1.0 and shift == 0.0:
            continue
        # image within h of [qlo, qhi]
        lo, hi = sorted(((qlo - h - shift) * sign, (qhi + h - shift) * sign))
        idx.append(np.arange(np.searchsorted(p0_sorted, lo), np.searchsorted(p0_sorted, hi, "right")))
    cols = np.unique(np.concatenate(idx))
    return cols[cols < n]


def pair_sums(points, h, kernel, boundary="mirror", labels=None, chunk=512):
    """Row sums of the sample-by-sample kernel matrix.

    Returns ``(off, diag, same)``: the sum over j != i, the self term, and
    (when ``labels`` is given) the sum over j with ``labels[j] == labels[i]``
    including i itself.  Work is restricted to pairs whose first
    coordinates (or their mirror images) are within the first bandwidth.
    """
    n = points.shape[0]
    h0 = axis_bandwidths(h, points.shape[1])[0]
    order = np.argsort(points[:, 0], kind="stable")
    sp = points[order]
    p0 = sp[:, 0]
    lab = None if labels is None else np.asarray(labels)[order]
    off = np.empty(n)
    diag = np.empty(n)
    same = None if lab is None else np.empty(n)
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        cols = _active_columns(p0, p0[a], p0[b - 1], h0, boundary)
        block = kernel_block(sp[a:b], sp[cols], h, kernel, boundary)
        rows = np.arange(a, b)
        pos = np.searchsorted(cols, rows)
        diag[a:b] = block[np.arange(b - a), pos]
        block[np.arange(b - a), pos] = 0.0
        off[a:b] = np.sum(block, axis=1)
        if lab is not None:
            mask = lab[a:b][:, None] == lab[cols][None, :]
            same[a:b] = np.sum(np.where(mask, block, 0.0), axis=1) + diag[a:b]
    inv = np.empty(n, dtype=int)
    inv[order] = np.arange(n)
    off, diag = off[inv], diag[inv]
    if same is not None:
        same = same[inv]
    return off, diag, same


def _row_chunks(nrows, ncols):
    step = max(1, _BLOCK_ELEMS // max(ncols, 1))
    for start in range(0, nrows, step):
        yield start, min(nrows, start + step)


def _fmt_h(h):
    if isinstance(h, tuple):
        return "(" + ", ".join(f"{v:.4g}" for v in h) + ")"
    return f"{h:.4g}"


class KdeModel:
    """Fitted product-kernel density estimate on [0, 1]^d.

    Parameters
    ----------
    points : array_like, shape (n, d)
        Sample, all coordinates in [0, 1].
    bandwidth : float or sequence of float
        Common bandwidth ``h > 0`` for every coordinate, or one per
        coordinate (a diagonal bandwidth).
    kernel : Kernel1D
        One-dimensional kernel used in each coordinate.
    clamps : tuple
        ``(B', B)``; outputs are clipped into ``[max(B', 1e-12), B]``.
    boundary : {"mirror", "none"}
        Mirror reflection across the faces of the cube, or none.
    """

    def __init__(self, points, bandwidth, kernel=None, clamps=(0.0, math.inf), boundary="mirror"):
        pts = np.array(as_samples(points), copy=True)
        if pts.shape[0] < 2:
            raise EmptySample("a KDE needs at least two points")
        try:
            hs = axis_bandwidths(bandwidth, pts.shape[1])
        except (TypeError, ValueError):
            raise BadBandwidth(f"bandwidth must be positive, got {bandwidth!r}") from None
        if boundary not in BOUNDARIES:
            raise InputError(f"boundary must be one of {BOUNDARIES}")
        lower, upper = (float(c) for c in clamps)
        if lower < 0.0 or not upper > lower:
            raise InputError("clamps must satisfy 0 <= B' < B")
        pts.setflags(write=False)
        self.points = pts
        self.axis_bandwidths = hs
        self.bandwidth = _compact(hs)
        self.kernel = kernel if kernel is not None else legendre_kernel(2)
        self.lower_clamp = lower
        self.upper_clamp = upper
        self.boundary = boundary

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def lower(self):
        return max(self.lower_clamp, FLOOR)

    def __repr__(self):
        return (
            f"KdeModel(n={self.n}, d={self.dim}, h={_fmt_h(self.bandwidth)}, "
            f"order={self.kernel.order}, boundary={self.boundary!r})"
        )

    def clamp(self, raw):
        return np.clip(raw, self.lower, self.upper_clamp)

    def terms(self, query, exclude=None):
        """Per-sample contributions at ``query`` (already validated, (Q, d))."""
        pts = self.points if exclude is None else np.delete(self.points, exclude, axis=0)
        return kernel_block(query, pts, self.bandwidth, self.kernel, self.boundary)

    @cached_property
    def _sorted(self):
        # sample order by first coordinate, used to skip distant samples
        order = np.argsort(self.points[:, 0], kind="stable")
        return order, self.points[order], self.points[order, 0].copy()

    def _pruned_sums(self, query, skip=None):
        """Kernel sums at ``query`` over samples within reach of each row.

        Rows are processed in first-coordinate order so every chunk only
        touches samples whose first coordinate (or a mirror image of it) lies
        within the bandwidth.  ``skip[r]`` names a sample left out of row r.
        """
        order, sp, p0 = self._sorted
        h0 = self.axis_bandwidths[0]
        rows = np.argsort(query[:, 0], kind="stable")
        rank = None
        if skip is not None:
            rank = np.empty(self.n, dtype=int)
            rank[order] = np.arange(self.n)
        out = np.empty(query.shape[0])
        step = _PRUNE_CHUNK
        for a in range(0, rows.size, step):
            r = rows[a : a + step]
            q = query[r]
            cols = _active_columns(p0, q[0, 0], q[-1, 0], h0, self.boundary)
            block = kernel_block(q, sp[cols], self.bandwidth, self.kernel, self.boundary)
            if skip is not None:
                pos = np.searchsorted(cols, rank[skip[r]])
                hit = (pos < cols.size) & (cols[np.minimum(pos, cols.size - 1)] == rank[skip[r]])
                block[np.nonzero(hit)[0], pos[hit]] = 0.0
            out[r] = np.sum(block, axis=1)
        return out

    def _raw_sums(self, query, exclude=None):
        if exclude is None:
            return self._pruned_sums(query)
        out = np.empty(query.shape[0])
        for a, b in _row_chunks(query.shape[0], self.n - 1):
            out[a:b] = np.sum(self.terms(query[a:b], exclude), axis=1)
        return out

    def raw(self, x):
        """Unclamped estimate at ``x``; may be negative for higher-order kernels."""
        q, single = _as_query(x, self.dim)
        val = self._raw_sums(q) / self.n
        return float(val[0]) if single else val

    def eval(self, x):
        q, single = _as_query(x, self.dim)
        val = self.clamp(self._raw_sums(q) / self.n)
        return float(val[0]) if single else val

    __call__ = eval

    @cached_property
    def _point_sums(self):
        # (sum over j != i of K_h(X_i - X_j), self term K_h(X_i - X_i))
        loo, diag, _ = pair_sums(self.points, self.bandwidth, self.kernel, self.boundary)
        loo.setflags(write=False)
        diag.setflags(write=False)
        return loo, diag

    @property
    def self_terms(self):
        """Contribution of each sample point to the estimate at itself."""
        return self._point_sums[1]

    def raw_loo_all(self):
        return self._point_sums[0] / (self.n - 1)

    def eval_loo_all(self):
        """Leave-one-out estimates ``f_{-i}(X_i)`` for every i."""
        return self.clamp(self.raw_loo_all())

    def eval_full_at_points(self):
        """Full-sample estimates at the sample points, reusing the LOO cache."""
        loo, diag = self._point_sums
        return self.clamp((loo + diag) / self.n)

    def _check_index(self, i):
        if not 0 <= int(i) < self.n or int(i) != i:
            raise IndexOutOfRange(f"index {i} outside 0..{self.n - 1}")
        return int(i)

    def eval_loo(self, i):
        i = self._check_index(i)
        return float(self.clamp(self._point_sums[0][i] / (self.n - 1)))

    def eval_loo_at(self, i, x):
        i = self._check_index(i)
        q, single = _as_query(x, self.dim)
        val = self.clamp(self._raw_sums(q, exclude=i) / (self.n - 1))
        return float(val[0]) if single else val

    def eval_loo_pairs(self, idx, x):
        """Row ``r``: the estimate without sample ``idx[r]``, evaluated at ``x[r]``."""
        q, _ = _as_query(np.atleast_2d(x), self.dim)
        idx = np.asarray(idx, dtype=int).reshape(-1)
        if idx.size != q.shape[0]:
            raise InputError("need one left-out index per query row")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexOutOfRange(f"index outside 0..{self.n - 1}")
        return self.clamp(self._pruned_sums(q, skip=idx) / (self.n - 1))

    def project(self, cols, bandwidth=None):
        """KDE of the given coordinate block, same settings unless overridden."""
        cols = list(cols)
        h = [self.axis_bandwidths[c] for c in cols] if bandwidth is None else bandwidth
        return KdeModel(
            self.points[:, cols],
            h,
            self.kernel,
            (self.lower_clamp, self.upper_clamp),
            self.boundary,
        )

    def refit_without(self, i):
        i = self._check_index(i)
        return KdeModel(
            np.delete(self.points, i, axis=0),
            self.bandwidth,
            self.kernel,
            (self.lower_clamp, self.upper_clamp),
            self.boundary,
        )


def fit(samples, h, kernel=None, clamps=(0.0, math.inf), boundary="mirror"):
    return KdeModel(samples, h, kernel, clamps, boundary)


def eval(model, x):  # noqa: A001 - mirrors the model method name
    return model.eval(x)


def eval_loo(model, i):
    return model.eval_loo(i)


def eval_loo_at(model, i, x):
    return model.eval_loo_at(i, x)


def default_bandwidth_grid(n=None, d=1):
    """Log-spaced candidate bandwidths used when CV runs without a grid."""
    return tuple(np.geomspace(0.02, 1.0, 20))


def fold_labels(n, folds, seed=0):
    """Contiguous fold blocks after a seeded shuffle."""
    perm = np.random.default_rng([int(seed), 0x5EED]).permutation(n)
    labels = np.empty(n, dtype=int)
    labels[perm] = (np.arange(n) * folds) // n
    return labels


def row_order(points):
    """Indices sorting the rows of ``points`` lexicographically (first column first)."""
    points = np.asarray(points)
    return np.lexsort(points.T[::-1])


def sample_fold_labels(points, folds, seed=0):
    """Fold labels that follow the rows, not their order in the table.

    Labels are drawn for the lexicographically sorted rows, so permuting
    the sample permutes the labels with it and leaves the CV score alone.
    """
    order = row_order(points)
    labels = np.empty(order.size, dtype=int)
    labels[order] = fold_labels(order.size, folds, seed)
    return labels


def cv_score(points, h, kernel, labels, boundary="mirror", quad=None):
    """Least-squares CV score ``int f_h^2 - (2/n) sum_i f_h^{(-fold(i))}(X_i)``."""
    from . import quadrature

    n, d = points.shape
    spec = quad if quad is not None else quadrature.default_grid(d)
    square = quadrature.integrate_values(
        quadrature.grid_raw_points(points, h, kernel, boundary, spec) ** 2, spec
    )
    fold_sizes = np.bincount(labels)
    off, diag, same = pair_sums(points, h, kernel, boundary, labels)
    held = (off + diag - same) / (n - fold_sizes[labels])
    return square - 2.0 * np.mean(held)


def kernel_bias_order(kernel):
    """Power of h in the smoothing bias: the first nonvanishing even moment."""
    k = int(kernel.order)
    return k + 2 if k % 2 == 0 else k + 1


def cv_subsample(points, max_points, seed=0):
    """Rows used for CV when the sample exceeds ``max_points``.

    The subsample is drawn from the lexicographically sorted rows, so it
    does not depend on row order.
    """
    n = points.shape[0]
    if n <= max_points:
        return points
    order = row_order(points)
    pick = np.sort(np.random.default_rng([int(seed), 0xCB]).choice(n, max_points, replace=False))
    return points[order[pick]]


def cv_bandwidth(
    samples,
    kernel=None,
    grid=None,
    folds=5,
    seed=0,
    boundary="mirror",
    quad=None,
    diagonal=False,
    max_points=CV_MAX_POINTS,
):
    """Pick the grid bandwidth minimising the least-squares CV score.

    Ties go to the smaller bandwidth.  Fold assignment depends on the set
    of rows and ``(folds, seed)``, not on the order of the rows.

    With ``diagonal=True`` (and d > 1) the common-bandwidth optimum is
    refined one coordinate at a time: each pass rescans the grid for every
    axis with the others held fixed, until a pass changes nothing.  The
    result is a tuple of per-axis bandwidths, or a float if they coincide.

    Samples larger than ``max_points`` are cross-validated on a seeded
    subsample of that size (see :func:`cv_subsample`); the selected
    bandwidth is then scaled by ``(max_points / n) ** (1 / (2 r + d))``
    with ``r`` the kernel's bias order, the rate of the MISE-optimal
    bandwidth.  The scaled value need not lie on the grid.
    """
    full = as_samples(samples)
    kernel = kernel if kernel is not None else legendre_kernel(2)
    points = cv_subsample(full, max_points, seed) if max_points else full
    n = points.shape[0]
    shrink = (n / full.shape[0]) ** (1.0 / (2 * kernel_bias_order(kernel) + full.shape[1]))
    grid = default_bandwidth_grid(n, points.shape[1]) if grid is None else grid
    grid = sorted(float(h) for h in grid)
    if not grid:
        raise EmptyGrid("bandwidth grid is empty")
    if any(not h > 0.0 for h in grid):
        raise BadBandwidth("bandwidth grid entries must be positive")
    if folds < 2 or folds > n:
        raise TooFewSamples(f"need 2 <= folds <= n (folds={folds}, n={n})")
    if len(grid) == 1:
        return grid[0] * shrink
    labels = sample_fold_labels(points, folds, seed)
    cache = {}

    def score(hs):
        if hs not in cache:
            cache[hs] = cv_score(points, hs, kernel, labels, boundary, quad)
        return cache[hs]

    d = points.shape[1]
    best = grid[int(np.argmin([score((h,) * d) for h in grid]))]
    if not diagonal or d == 1:
        return best * shrink
    current = [best] * d
    for _ in range(_DIAGONAL_PASSES):
        changed = False
        for c in range(d):
            trial = [tuple(current[:c] + [h] + current[c + 1 :]) for h in grid]
            pick = grid[int(np.argmin([score(t) for t in trial]))]
            if pick != current[c] and score(tuple(current[:c] + [pick] + current[c + 1 :])) < score(tuple(current)):
                current[c] = pick
                changed = True
        if not changed:
            break
    return _compact(tuple(h * shrink for h in current))
