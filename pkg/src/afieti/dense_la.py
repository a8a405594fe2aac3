"""Dense linear-algebra kernels.

Blocked Cholesky and triangular solves (inner kernels are column-oriented,
updates go through matrix products), LU with partial pivoting, a cyclic
Jacobi eigensolver and the symmetric-definite pencil decomposition used by
the fast diagonalization solvers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite, NumericalFailure, SingularMatrix

__all__ = [
    "PencilEigen",
    "cholesky",
    "solve_lower",
    "solve_upper",
    "cho_solve",
    "solve_spd",
    "lu_factor",
    "lu_solve",
    "solve_lu",
    "jacobi_eig",
    "pencil_eig",
    "CholeskyFactor",
]

_BLOCK = 64


def _cholesky_unblocked(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        s = A[j, j] - L[j, :j] @ L[j, :j]
        if not s > 0.0 or not np.isfinite(s):
            raise NotPositiveDefinite("non-positive pivot %.3e at column %d" % (s, j))
        L[j, j] = np.sqrt(s)
        if j + 1 < n:
            L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky(A) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == A`` for symmetric positive definite ``A``.

    Raises
    ------
    NotPositiveDefinite
        If a non-positive pivot is met.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix expected")
    n = A.shape[0]
    if n <= _BLOCK:
        return _cholesky_unblocked(A)
    L = np.zeros_like(A)
    for k in range(0, n, _BLOCK):
        e = min(k + _BLOCK, n)
        try:
            L[k:e, k:e] = _cholesky_unblocked(A[k:e, k:e])
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite("%s (block at %d)" % (exc, k)) from None
        if e < n:
            L[e:, k:e] = solve_lower(L[k:e, k:e], A[e:, k:e].T).T
            A[e:, e:] -= L[e:, k:e] @ L[e:, k:e].T
    return L


def _lower_unblocked(L, B):
    X = np.array(B, dtype=float)
    n = L.shape[0]
    for i in range(n):
        if i:
            X[i] -= L[i, :i] @ X[:i]
        X[i] /= L[i, i]
    return X


def solve_lower(L, b) -> np.ndarray:
    """Solve ``L x = b`` by forward substitution (``b`` may have columns)."""
    L = np.asarray(L)
    X = np.array(b, dtype=float)
    n = L.shape[0]
    if X.shape[0] != n:
        raise ValueError("size mismatch")
    for k in range(0, n, _BLOCK):
        e = min(k + _BLOCK, n)
        if k:
            X[k:e] -= L[k:e, :k] @ X[:k]
        X[k:e] = _lower_unblocked(L[k:e, k:e], X[k:e])
    return X


def solve_upper(U, b) -> np.ndarray:
    """Solve ``U x = b`` by back substitution (``b`` may have columns)."""
    U = np.asarray(U)
    X = np.array(b, dtype=float)
    n = U.shape[0]
    if X.shape[0] != n:
        raise ValueError("size mismatch")
    # reverse the index order to reuse the forward kernel
    Xr = solve_lower(U[::-1, ::-1], X[::-1])
    return Xr[::-1].copy()


def cho_solve(L, b) -> np.ndarray:
    return solve_upper(L.T, solve_lower(L, b))


class CholeskyFactor:
    """Reusable dense Cholesky factorization of an SPD matrix."""

    def __init__(self, A):
        self.L = cholesky(A)
        self.n = self.L.shape[0]

    def solve(self, b):
        return cho_solve(self.L, b)

    __call__ = solve


def solve_spd(A, rhs) -> np.ndarray:
    return cho_solve(cholesky(A), rhs)


def lu_factor(A):
    """LU with partial pivoting: returns ``(LU, piv)`` with ``A[piv] = L U``."""
    LU = np.array(A, dtype=float)
    n = LU.shape[0]
    if LU.ndim != 2 or LU.shape[1] != n:
        raise ValueError("square matrix expected")
    piv = np.arange(n)
    scale = np.abs(LU).max() if n else 0.0
    tol = max(n, 1) * np.finfo(float).eps * scale
    for k in range(n):
        r = k + int(np.argmax(np.abs(LU[k:, k])))
        if abs(LU[r, k]) <= tol:
            raise SingularMatrix("matrix is singular to working precision (column %d)" % k)
        if r != k:
            LU[[k, r]] = LU[[r, k]]
            piv[[k, r]] = piv[[r, k]]
        LU[k + 1:, k] /= LU[k, k]
        LU[k + 1:, k + 1:] -= np.outer(LU[k + 1:, k], LU[k, k + 1:])
    return LU, piv


def lu_solve(factor, b) -> np.ndarray:
    LU, piv = factor
    b = np.asarray(b, dtype=float)[piv]
    L = np.tril(LU, -1) + np.eye(LU.shape[0])
    return solve_upper(np.triu(LU), solve_lower(L, b))


def solve_lu(A, rhs) -> np.ndarray:
    return lu_solve(lu_factor(A), rhs)


def jacobi_eig(A, tol: float = 1e-15, max_sweeps: int = 50, counter=None):
    """Cyclic-by-row Jacobi eigensolver for a symmetric matrix.

    Returns ``(w, Q)`` with ``A Q = Q diag(w)``, ``Q`` orthogonal, ``w``
    in ascending order.

    Raises
    ------
    NumericalFailure
        If the off-diagonal mass has not dropped below
        ``tol * ||A||_F`` after ``max_sweeps`` sweeps.

    ``counter`` (a :class:`~afieti.kron.FlopCounter`) receives the
    rotation work, 18 n flops per applied rotation.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError("square matrix expected")
    A = 0.5 * (A + A.T)
    Q = np.eye(n)
    norm = np.linalg.norm(A)
    if n < 2 or norm == 0.0:
        return np.diag(A).copy(), Q
    target = tol * norm
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                cp = A[:, p].copy()
                cq = A[:, q]
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp = A[p, :].copy()
                rq = A[q, :]
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp = Q[:, p].copy()
                vq = Q[:, q]
                Q[:, p] = c * vp - s * vq
                Q[:, q] = s * vp + c * vq
                if counter is not None:
                    counter.add(18 * n)
    else:
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off > target:
            raise NumericalFailure("Jacobi iteration did not converge in %d sweeps" % max_sweeps)
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], Q[:, order]


@dataclass(frozen=True)
class PencilEigen:
    """Generalized eigendecomposition ``U^T K U = diag(D)``, ``U^T M U = I``."""

    U: np.ndarray
    D: np.ndarray

    @property
    def n(self) -> int:
        return self.D.size


def pencil_eig(K, M, clamp: float = 1e-12, counter=None) -> PencilEigen:
    """Decompose the symmetric-definite pencil ``(K, M)``.

    ``M`` is factored as ``L L^T``; the symmetric problem for
    ``L^{-1} K L^{-T}`` is solved by Jacobi and back-transformed.
    Eigenvalues below ``clamp * ||K||`` are set to zero.
    """
    K = np.asarray(K, dtype=float)
    M = np.asarray(M, dtype=float)
    L = cholesky(M)
    C = solve_lower(L, solve_lower(L, K).T)
    w, Q = jacobi_eig(0.5 * (C + C.T), counter=counter)
    U = solve_upper(L.T, Q)
    knorm = np.linalg.norm(K, 2) if K.size else 0.0
    w = np.where(w < clamp * knorm, 0.0, w)
    return PencilEigen(U, w)
