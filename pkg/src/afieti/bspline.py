"""Univariate B-spline bases on open knot vectors.

Evaluation follows the Cox-de Boor recursion (with the 0/0 = 0 convention),
derivatives use the standard triangular-table scheme, and refinement
matrices are built by composing single-knot (Boehm) insertions.

All indices are 0-based: basis function ``i`` is supported on
``[knots[i], knots[i + p + 1]]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KnotVector",
    "QuadratureRule",
    "eval_basis",
    "eval_basis_derivatives",
    "basis_derivatives",
    "collocation_matrix",
    "knot_insertion_matrix",
    "gauss_rule",
]

_KNOT_TOL = 1e-12


class KnotVector:
    """Open knot vector on [0, 1] together with its degree.

    Parameters
    ----------
    knots : array_like
        Nondecreasing knot sequence of length ``m + p + 1``.
    degree : int
        Polynomial degree ``p >= 1``.
    """

    def __init__(self, knots, degree: int):
        knots = np.asarray(knots, dtype=float)
        p = int(degree)
        if p < 1:
            raise ValueError("degree must be positive")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ValueError("knot vector too short for degree %d" % p)
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("knots must span [0, 1]")
        if np.any(knots[: p + 1] != 0.0) or np.any(knots[-(p + 1):] != 1.0):
            raise ValueError("knot vector is not open")
        _, counts = np.unique(knots[p + 1: -(p + 1)], return_counts=True)
        if counts.size and counts.max() > p + 1:
            raise ValueError("interior knot multiplicity exceeds p + 1")
        self.knots = knots
        self.knots.setflags(write=False)
        self.degree = p

    @classmethod
    def uniform(cls, degree: int, n_el: int, continuity: int | None = None):
        """Uniform open knot vector with ``n_el`` elements.

        ``continuity`` defaults to ``degree - 1`` (maximal smoothness).
        """
        if n_el < 1:
            raise ValueError("n_el must be >= 1")
        k = degree - 1 if continuity is None else continuity
        mult = degree - k
        inner = np.repeat(np.linspace(0.0, 1.0, n_el + 1)[1:-1], mult)
        knots = np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])
        return cls(knots, degree)

    @property
    def p(self) -> int:
        return self.degree

    @property
    def m(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def n_el(self) -> int:
        return self.breakpoints.size - 1

    @property
    def h(self) -> float:
        """Mesh size: the largest knot span."""
        return float(np.diff(self.breakpoints).max())

    def spans(self) -> np.ndarray:
        """Knot indices ``k`` of the nonempty spans ``[knots[k], knots[k+1])``."""
        return np.nonzero(np.diff(self.knots) > 0)[0]

    def quasi_uniformity(self) -> tuple[float, float]:
        """Return ``(alpha, h)`` with every span length in ``[alpha*h, h]``."""
        lengths = np.diff(self.breakpoints)
        return float(lengths.min() / lengths.max()), float(lengths.max())

    def find_span(self, x):
        """Index ``k`` with ``knots[k] <= x < knots[k+1]``; ``x = 1`` maps to the last span."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise ValueError("evaluation point outside [0, 1]")
        k = np.searchsorted(self.knots, x, side="right") - 1
        return np.minimum(k, self.m - 1)

    def greville(self) -> np.ndarray:
        p = self.degree
        idx = np.arange(self.m)[:, None] + np.arange(1, p + 1)[None, :]
        return self.knots[idx].mean(axis=1)

    def refine(self, new_knots) -> "KnotVector":
        """Return the knot vector with ``new_knots`` inserted."""
        knots = np.sort(np.concatenate([self.knots, np.asarray(new_knots, float)]))
        return KnotVector(knots, self.degree)

    def uniform_refine(self, factor: int = 2) -> "KnotVector":
        """Split every element into ``factor`` equal parts (single knots)."""
        bp = self.breakpoints
        new = [a + (b - a) * np.arange(1, factor) / factor for a, b in zip(bp[:-1], bp[1:])]
        return self.refine(np.concatenate(new))

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.degree == other.degree
                and self.knots.shape == other.knots.shape
                and bool(np.all(self.knots == other.knots)))

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    def __repr__(self):
        return "KnotVector(p=%d, m=%d, n_el=%d)" % (self.degree, self.m, self.n_el)


@dataclass(frozen=True)
class QuadratureRule:
    """Element-wise Gauss rule: ``points``/``weights`` have shape (n_el, q)."""

    points: np.ndarray
    weights: np.ndarray
    spans: np.ndarray

    @property
    def q(self) -> int:
        return self.points.shape[1]

    @property
    def n_el(self) -> int:
        return self.points.shape[0]


def basis_derivatives(kv: KnotVector, x, order: int = 0, span=None):
    """Vectorized evaluation of the active basis functions and derivatives.

    Parameters
    ----------
    kv : KnotVector
    x : array_like, shape (n,)
        Evaluation points in [0, 1].
    order : int
        Highest derivative order, ``order <= p``.
    span : array_like, optional
        Knot span per point; located automatically when omitted.

    Returns
    -------
    first : ndarray of int, shape (n,)
        Index of the first active function at each point.
    ders : ndarray, shape (n, order + 1, p + 1)
        ``ders[i, k, j]`` is the k-th derivative of function ``first[i] + j``.
    """
    p = kv.degree
    if order < 0 or order > p:
        raise ValueError("derivative order must lie in [0, p]")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    span = kv.find_span(x) if span is None else np.atleast_1d(np.asarray(span))
    U = kv.knots
    n = x.size

    ndu = np.zeros((p + 1, p + 1, n))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, n))
    right = np.zeros((p + 1, n))
    for j in range(1, p + 1):
        left[j] = x - U[span + 1 - j]
        right[j] = U[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            with np.errstate(divide="ignore", invalid="ignore"):
                temp = np.where(ndu[j, r] != 0.0, ndu[r, j - 1] / ndu[j, r], 0.0)
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((n, order + 1, p + 1))
    ders[:, 0, :] = ndu[:, p, :].T
    if order > 0:
        a = np.zeros((2, p + 1, n))
        for r in range(p + 1):
            s1, s2 = 0, 1
            a[:] = 0.0
            a[0, 0] = 1.0
            for k in range(1, order + 1):
                d = np.zeros(n)
                rk, pk = r - k, p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d = d + a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d = d + a[s2, k] * ndu[r, pk]
                ders[:, k, r] = d
                s1, s2 = s2, s1
        fac = float(p)
        for k in range(1, order + 1):
            ders[:, k, :] *= fac
            fac *= p - k
    return span - p, ders


def eval_basis(kv: KnotVector, x: float):
    """Values of the p+1 active B-splines at a single point ``x``.

    Returns ``(first_active_index, values)``.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("evaluation point %r outside [0, 1]" % (x,))
    first, ders = basis_derivatives(kv, [x], 0)
    return int(first[0]), ders[0, 0].copy()


def eval_basis_derivatives(kv: KnotVector, x: float, order: int):
    """Derivatives up to ``order`` of the active B-splines at ``x``.

    Returns ``(first_active_index, table)`` with ``table[k, j]`` the k-th
    derivative of basis function ``first + j``.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("evaluation point %r outside [0, 1]" % (x,))
    if order > kv.degree:
        raise ValueError("derivative order %d exceeds degree %d" % (order, kv.degree))
    first, ders = basis_derivatives(kv, [x], order)
    return int(first[0]), ders[0].copy()


def collocation_matrix(kv: KnotVector, x, order: int = 0) -> np.ndarray:
    """Dense matrix ``C[i, j] = b_j^{(order)}(x_i)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    first, ders = basis_derivatives(kv, x, order)
    C = np.zeros((x.size, kv.m))
    rows = np.repeat(np.arange(x.size), kv.degree + 1)
    cols = (first[:, None] + np.arange(kv.degree + 1)).ravel()
    C[rows, cols] = ders[:, order, :].ravel()
    return C


def _multiset_difference(fine: np.ndarray, coarse: np.ndarray) -> np.ndarray:
    """Knots of ``fine`` not consumed by ``coarse``; raises if not nested."""
    extra = []
    i = 0
    for u in fine:
        if i < coarse.size and abs(coarse[i] - u) <= _KNOT_TOL:
            i += 1
        else:
            if i < coarse.size and coarse[i] < u - _KNOT_TOL:
                raise ValueError("knot vectors are not nested")
            extra.append(u)
    if i != coarse.size:
        raise ValueError("knot vectors are not nested")
    return np.asarray(extra)


def knot_insertion_matrix(coarse: KnotVector, fine: KnotVector) -> np.ndarray:
    """Refinement matrix ``T`` (m_fine x m_coarse) with ``B_coarse = T^T B_fine``."""
    if coarse.degree != fine.degree:
        raise ValueError("degrees differ")
    p = coarse.degree
    new = _multiset_difference(fine.knots, coarse.knots)
    U = coarse.knots.copy()
    T = np.eye(coarse.m)
    for u in new:
        m = U.size - p - 1
        k = int(np.searchsorted(U, u, side="right") - 1)
        step = np.zeros((m + 1, m))
        for i in range(m + 1):
            if i <= k - p:
                alpha = 1.0
            elif i >= k + 1:
                alpha = 0.0
            else:
                alpha = (u - U[i]) / (U[i + p] - U[i])
            if i < m:
                step[i, i] = alpha
            if i >= 1:
                step[i, i - 1] = 1.0 - alpha
        T = step @ T
        U = np.insert(U, k + 1, u)
    return T


def gauss_rule(kv: KnotVector, q: int | None = None) -> QuadratureRule:
    """Gauss-Legendre rule with ``q`` points on every nonempty knot span.

    The default ``q = p + 1`` integrates products of two basis functions
    (and of their derivatives) exactly on affine maps.
    """
    q = kv.degree + 1 if q is None else int(q)
    if q < 1:
        raise ValueError("q must be >= 1")
    xg, wg = np.polynomial.legendre.leggauss(q)
    spans = kv.spans()
    a = kv.knots[spans][:, None]
    b = kv.knots[spans + 1][:, None]
    pts = 0.5 * (a + b) + 0.5 * (b - a) * xg[None, :]
    wts = 0.5 * (b - a) * wg[None, :]
    return QuadratureRule(pts, wts, spans)
