"""Kronecker-product operators applied through mode products.

Multi-indices are linearized colexicographically (direction 1 fastest),
which in numpy terms means a C-ordered array of shape ``(m_d, ..., m_1)``.
Factor lists are therefore stored as ``(F_d, ..., F_1)`` so that
``np.kron(F_d, ..., F_1)`` is the materialized operator.
"""
from __future__ import annotations

from functools import reduce

import numpy as np

__all__ = [
    "MultiIndexMap",
    "FlopCounter",
    "kron_apply",
    "kron_sum_apply",
    "KroneckerOperator",
    "KroneckerSum",
]


class MultiIndexMap:
    """Colexicographic linearization for per-direction sizes ``(m_1, ..., m_d)``."""

    def __init__(self, sizes):
        self.sizes = tuple(int(s) for s in sizes)
        if any(s < 1 for s in self.sizes):
            raise ValueError("sizes must be positive")
        self.strides = tuple(int(np.prod(self.sizes[:l])) for l in range(len(self.sizes)))

    @property
    def size(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def shape(self) -> tuple:
        """numpy shape of the C-ordered tensor view, ``(m_d, ..., m_1)``."""
        return self.sizes[::-1]

    def colex(self, multi_index) -> int:
        if len(multi_index) != len(self.sizes):
            raise ValueError("multi-index has wrong length")
        k = 0
        for i, m, s in zip(multi_index, self.sizes, self.strides):
            if not 0 <= i < m:
                raise IndexError("multi-index component %d out of range [0, %d)" % (i, m))
            k += int(i) * s
        return k

    def inverse(self, k: int) -> tuple:
        if not 0 <= k < self.size:
            raise IndexError("linear index out of range")
        out = []
        for m in self.sizes:
            out.append(k % m)
            k //= m
        return tuple(out)

    def grid(self) -> np.ndarray:
        """All multi-indices in linear order, shape (size, d)."""
        idx = np.indices(self.shape).reshape(len(self.sizes), -1)[::-1]
        return idx.T


class FlopCounter:
    """Accumulates multiply-add counts (2 flops each) of mode products."""

    def __init__(self):
        self.flops = 0

    def add(self, n: int):
        self.flops += int(n)


def kron_apply(factors, v, counter: FlopCounter | None = None, transpose: bool = False):
    """Apply ``F_d x ... x F_1`` (factors given in that order) to ``v``.

    ``v`` may be a vector of length ``prod(cols)`` or a matrix whose columns
    are such vectors. No Kronecker matrix is formed; each direction costs one
    dense matrix-matrix product on a reshaped view.
    """
    factors = [np.asarray(F) for F in factors]
    if transpose:
        factors = [F.T for F in factors]
    v = np.asarray(v)
    cols = [F.shape[1] for F in factors]
    n_in = int(np.prod(cols))
    if v.shape[0] != n_in:
        raise ValueError("size mismatch: operator has %d columns, vector %d rows" % (n_in, v.shape[0]))
    extra = v.shape[1:]
    X = v.reshape(tuple(cols) + extra)
    for axis, F in enumerate(factors):
        if counter is not None:
            counter.add(2 * F.shape[0] * X.size)
        X = np.moveaxis(np.tensordot(F, X, axes=([1], [axis])), 0, axis)
    rows = int(np.prod([F.shape[0] for F in factors]))
    return np.ascontiguousarray(X).reshape((rows,) + extra)


def kron_sum_apply(terms, v, counter: FlopCounter | None = None):
    """Apply ``sum_t c_t (F_d^t x ... x F_1^t)``; ``terms`` is a list of ``(c, factors)``."""
    out = None
    for c, factors in terms:
        y = kron_apply(factors, v, counter)
        out = c * y if out is None else out + c * y
    if out is None:
        raise ValueError("empty Kronecker sum")
    return out


class KroneckerOperator:
    """``F_d x ... x F_1`` stored as its factor list ``(F_d, ..., F_1)``."""

    def __init__(self, factors):
        self.factors = tuple(np.asarray(F, dtype=float) for F in factors)

    @property
    def shape(self):
        return (int(np.prod([F.shape[0] for F in self.factors])),
                int(np.prod([F.shape[1] for F in self.factors])))

    def apply(self, v, counter=None):
        return kron_apply(self.factors, v, counter)

    def rapply(self, v, counter=None):
        """Apply the transpose."""
        return kron_apply(self.factors, v, counter, transpose=True)

    @property
    def T(self) -> "KroneckerOperator":
        return KroneckerOperator([F.T for F in self.factors])

    def __matmul__(self, other):
        if isinstance(other, KroneckerOperator):
            return KroneckerOperator([A @ B for A, B in zip(self.factors, other.factors)])
        return self.apply(other)

    def diagonal(self) -> np.ndarray:
        return reduce(np.kron, [np.diag(F) for F in self.factors])

    def toarray(self) -> np.ndarray:
        return reduce(np.kron, self.factors)


class KroneckerSum:
    """Linear combination of :class:`KroneckerOperator` terms."""

    def __init__(self, terms):
        self.terms = [(float(c), op if isinstance(op, KroneckerOperator) else KroneckerOperator(op))
                      for c, op in terms]
        if not self.terms:
            raise ValueError("empty Kronecker sum")

    @property
    def shape(self):
        return self.terms[0][1].shape

    def apply(self, v, counter=None):
        return kron_sum_apply([(c, op.factors) for c, op in self.terms], v, counter)

    __matmul__ = apply

    def diagonal(self) -> np.ndarray:
        return sum(c * op.diagonal() for c, op in self.terms)

    def toarray(self) -> np.ndarray:
        return sum(c * op.toarray() for c, op in self.terms)

    def __add__(self, other: "KroneckerSum") -> "KroneckerSum":
        return KroneckerSum(self.terms + other.terms)

    def scaled(self, s: float) -> "KroneckerSum":
        return KroneckerSum([(s * c, op) for c, op in self.terms])
