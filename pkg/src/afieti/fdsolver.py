"""Fast diagonalization of Kronecker-sum operators.

For pencils ``(K_m, M_m)`` with ``U_m^T K_m U_m = D_m`` and
``U_m^T M_m U_m = I``, any operator of the form

    outer * (sum_m w_m  M_d x .. x K_m x .. x M_1  +  shift * M_d x .. x M_1)

equals ``(U_d x .. x U_1)^{-T} Lambda (U_d x .. x U_1)^{-1}`` with the
diagonal ``Lambda = outer * (sum_m w_m I x .. x D_m x .. x I + shift)``.
Its inverse is applied with two Kronecker mode-product sweeps and one
diagonal scaling.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .assembly import ElasticityCoefficients, GeometryBlocks, ParametricBlocks
from .dense_la import PencilEigen, pencil_eig
from .errors import NumericalFailure, ScalingError
from .kron import FlopCounter, kron_apply

__all__ = [
    "FdFactorization",
    "fd_setup",
    "fd_setup_full",
    "fd_setup_interior",
    "fd_setup_geo",
    "fd_setup_geo_interior",
    "fd_apply",
    "clear_pencil_cache",
]

_cache: dict = {}
_cache_lock = threading.Lock()


def _pencil(K, M, counter=None) -> PencilEigen:
    """Cached pencil decomposition (patches often share univariate bases)."""
    K = np.ascontiguousarray(K, dtype=float)
    M = np.ascontiguousarray(M, dtype=float)
    key = (K.shape, K.tobytes(), M.tobytes())
    if counter is None:
        with _cache_lock:
            hit = _cache.get(key)
        if hit is not None:
            return hit
    pe = pencil_eig(K, M, counter=counter)
    with _cache_lock:
        _cache[key] = pe
    return pe


def clear_pencil_cache():
    with _cache_lock:
        _cache.clear()


@dataclass
class FdFactorization:
    """``(U_d x .. x U_1)^{-T} Lambda (U_d x .. x U_1)^{-1}``, optionally
    sandwiched as ``D^{1/2} (.) D^{1/2}``.

    ``U`` is indexed by direction (direction 1 first); ``lam`` is the
    colexicographic diagonal; ``sqrt_scale`` is ``D^{1/2}`` or ``None``.
    """

    U: list
    lam: np.ndarray
    sqrt_scale: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.lam.size

    def apply(self, r, counter: FlopCounter | None = None):
        """Solve ``target s = r`` (``r`` may hold several columns)."""
        r = np.asarray(r, dtype=float)
        if r.shape[0] != self.n:
            raise ValueError("size mismatch: factorization has %d rows, got %d" % (self.n, r.shape[0]))
        lam = self.lam if r.ndim == 1 else self.lam[:, None]
        if self.sqrt_scale is not None:
            sc = self.sqrt_scale if r.ndim == 1 else self.sqrt_scale[:, None]
            r = r / sc
        facs = self.U[::-1]
        s = kron_apply(facs, kron_apply(facs, r, counter, transpose=True) / lam, counter)
        if self.sqrt_scale is not None:
            s = s / sc
        return s

    __call__ = apply

    def target(self) -> np.ndarray:
        """Materialized operator whose inverse :meth:`apply` computes (small sizes only)."""
        Uinv = [np.linalg.inv(U) for U in self.U]
        W = reduce(np.kron, Uinv[::-1])
        T = W.T @ (self.lam[:, None] * W)
        if self.sqrt_scale is not None:
            T = self.sqrt_scale[:, None] * T * self.sqrt_scale[None, :]
        return T


def fd_apply(fact: FdFactorization, r, counter=None):
    return fact.apply(r, counter)


def fd_setup(K, M, weights, shift: float = 0.0, outer: float = 1.0, scale=None,
             counter: FlopCounter | None = None) -> FdFactorization:
    """Factor ``outer * (sum_m weights[m] K_m-term + shift * M-term)``.

    ``K``, ``M`` and ``weights`` are indexed by direction (direction 1
    first).  ``scale`` is the diagonal ``D`` of an outer ``D^{1/2}``
    sandwich.

    Raises
    ------
    NumericalFailure
        If a diagonal entry of ``Lambda`` is not positive.
    ScalingError
        If ``scale`` has a non-positive entry.
    """
    d = len(K)
    pencils = [_pencil(K[m], M[m], counter) for m in range(d)]
    sizes = [pe.n for pe in pencils]
    lam = np.zeros(int(np.prod(sizes))) + shift
    for m, pe in enumerate(pencils):
        fac = [np.ones(s) for s in sizes]
        fac[m] = pe.D
        lam = lam + weights[m] * reduce(np.kron, fac[::-1])
    lam = outer * lam
    if not np.all(lam > 0):
        raise NumericalFailure("non-positive diagonal entry %.3e in fast diagonalization" % lam.min())
    sq = None
    if scale is not None:
        scale = np.asarray(scale, dtype=float)
        if scale.shape != lam.shape:
            raise ValueError("scaling diagonal has wrong length")
        if not np.all(scale > 0):
            raise ScalingError("scaling diagonal must be positive")
        sq = np.sqrt(scale)
    return FdFactorization([pe.U for pe in pencils], lam, sq)


def fd_setup_full(blocks: ParametricBlocks, l: int, H: float = 1.0) -> FdFactorization:
    """``H^{d-2} (A_hat_l + M_hat_l)`` for component ``l``."""
    c: ElasticityCoefficients = blocks.coeffs
    d = blocks.d
    w = [c.weight(l, m) for m in range(d)]
    return fd_setup(blocks.K, blocks.M, w, shift=1.0, outer=float(H) ** (d - 2))


def fd_setup_interior(blocks: ParametricBlocks, l: int) -> FdFactorization:
    """``(A_hat_l)_II``: interior pencils, no mass term."""
    c = blocks.coeffs
    w = [c.weight(l, m) for m in range(blocks.d)]
    return fd_setup(blocks.K_int, blocks.M_int, w)


def fd_setup_geo(geo: GeometryBlocks, l: int, H: float = 1.0, scale=None) -> FdFactorization:
    """``D^{1/2} (A_tilde_l + H^{-2} M_tilde_l) D^{1/2}`` for component ``l``."""
    return fd_setup(geo.K[l], geo.M[l], [1.0] * geo.d, shift=float(H) ** -2, scale=scale)


def fd_setup_geo_interior(geo: GeometryBlocks, l: int) -> FdFactorization:
    """``(A_tilde_l)_II``."""
    return fd_setup([k[1:-1, 1:-1] for k in geo.K[l]], [m[1:-1, 1:-1] for m in geo.M[l]],
                    [1.0] * geo.d)
