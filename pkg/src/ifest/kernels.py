"""Higher-order polynomial smoothing kernels built from Legendre polynomials.

The order-``l`` kernel is the projection kernel

    K(u) = sum_{j=0}^{l} q_j(0) q_j(u),   |u| <= 1,

where ``q_j = sqrt((2j+1)/2) P_j`` are the Legendre polynomials orthonormal
on [-1, 1].  Because ``u**k`` lies in the span of ``q_0..q_l`` for ``k <= l``,
the moments ``int u**k K(u) du`` reproduce ``0**k``: the zeroth moment is one
and moments 1..l vanish.  Odd ``q_j`` vanish at zero, so the kernel is even
and order ``2k+1`` gives the same polynomial as order ``2k``.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = [
    "Kernel1D",
    "legendre_kernel",
    "eval_kernel",
    "eval_product_kernel",
]


def _legendre_coefficients(degree):
    """Exact ascending power coefficients of P_0..P_degree."""
    polys = [[Fraction(1)], [Fraction(0), Fraction(1)]]
    for j in range(1, degree):
        # (j+1) P_{j+1} = (2j+1) u P_j - j P_{j-1}
        nxt = [Fraction(0)] * (j + 2)
        for k, c in enumerate(polys[j]):
            nxt[k + 1] += Fraction(2 * j + 1, j + 1) * c
        for k, c in enumerate(polys[j - 1]):
            nxt[k] -= Fraction(j, j + 1) * c
        polys.append(nxt)
    return polys[: degree + 1]


@dataclass(frozen=True)
class Kernel1D:
    """Even polynomial kernel supported on [-1, 1].

    ``exact`` holds the rational coefficients of ``K`` in ascending powers of
    ``u``; ``coefficients`` is the same list as floats.  Evaluation runs
    Horner's rule in ``u**2`` so that ``K(u) == K(-u)`` holds bit for bit.
    """

    order: int
    exact: tuple

    @property
    def coefficients(self):
        return tuple(float(c) for c in self.exact)

    @property
    def support(self):
        return (-1.0, 1.0)

    @property
    def even_coefficients(self):
        # coefficients of K as a polynomial in w = u**2, highest power first
        return np.array([float(c) for c in self.exact[::2]][::-1])

    @property
    def at_zero(self):
        return float(self.exact[0])

    def moment(self, j):
        """Exact ``int_{-1}^{1} u**j K(u) du`` as a Fraction."""
        total = Fraction(0)
        for k, c in enumerate(self.exact):
            p = j + k
            if p % 2 == 0:
                total += c * Fraction(2, p + 1)
        return total

    def __call__(self, u):
        return eval_kernel(self, u)


@lru_cache(maxsize=None)
def legendre_kernel(order=2):
    """Return the order-``order`` Legendre projection kernel.

    >>> legendre_kernel(2).coefficients
    (1.125, 0.0, -1.875)
    """
    order = int(order)
    if order < 0:
        raise ValueError("kernel order must be nonnegative")
    polys = _legendre_coefficients(max(order, 1))
    coeffs = [Fraction(0)] * (order + 1)
    for j in range(order + 1):
        p0 = polys[j][0]
        if p0 == 0:
            continue
        scale = Fraction(2 * j + 1, 2) * p0
        for k, c in enumerate(polys[j]):
            coeffs[k] += scale * c
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    return Kernel1D(order=order, exact=tuple(coeffs))


def eval_kernel(k, u):
    """Evaluate ``k`` at ``u`` (scalar or array); exactly zero for |u| > 1."""
    u = np.asarray(u, dtype=float)
    w = u * u
    val = np.zeros_like(w)
    for c in k.even_coefficients:
        val = val * w + c
    val = np.where(np.abs(u) <= 1.0, val, 0.0)
    if val.ndim == 0:
        return float(val)
    return val


def eval_product_kernel(k, u):
    """Product kernel ``prod_c K(u_c)`` over the last axis of ``u``."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[-1] < 1:
        raise ValueError("product kernel needs at least one coordinate")
    vals = np.prod(eval_kernel(k, u), axis=-1)
    if np.ndim(vals) == 0:
        return float(vals)
    return vals
