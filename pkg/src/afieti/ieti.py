"""All-floating IETI saddle system and its block-diagonal preconditioner.

The unknowns are ``x = (w, chi)`` with ``w`` in ``range(A)`` and ``chi`` in
``ker(G^T)``.  The saddle operator is

    [ A         B^T P_chi ] [ w   ]
    [ P_chi B   0         ] [ chi ]

and the preconditioner is ``diag(P_u P_A^{-1} P_u, P_chi P_S P_chi)``.

Local solver families:

* ``exact``: ``P_A = A + H^{-2} M`` per patch, ``P_S = B_G S B_G^T`` with
  the true Schur complement;
* ``inexact``: per component ``H^{d-2} (A_hat_l + M_hat_l)`` and
  ``H^{d-2} S_hat_l``, both in the parametric domain and solved by fast
  diagonalization;
* ``geo``: separable geometry-aware blocks ``A_tilde_l + H^{-2} M_tilde_l``
  and ``S_tilde_l`` with diagonal rescaling.

The ``-nr`` forms sandwich ``P_S`` between ``(B B^T)^{-1}`` solves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import dense_la
from .assembly import (ElasticityCoefficients, PatchMatrices, PatchQuadrature, geometry_blocks,
                       parametric_blocks)
from .constraints import ConstraintSystem, DofLayout, Projectors, rigid_basis
from .errors import SubspaceError
from .fdsolver import (fd_setup_full, fd_setup_geo, fd_setup_geo_interior, fd_setup_interior)
from .geometry import DofPartition, MultiPatch, patch_diameter

__all__ = [
    "VARIANTS",
    "IetiSystem",
    "Preconditioner",
    "parse_variant",
    "spectral_probe",
    "ProbeResult",
    "DENSE_LIMIT",
]

VARIANTS = ("exact-nr", "inexact-nr", "geo-nr", "exact-s", "inexact-s", "geo-s")

# largest local system factored densely; larger ones use a sparse LU
DENSE_LIMIT = 6000


def parse_variant(name: str):
    """Split a variant name into ``(family, non_redundant)``."""
    name = name.lower()
    if name not in VARIANTS:
        raise ValueError("unknown variant %r (choose from %s)" % (name, ", ".join(VARIANTS)))
    family, form = name.split("-")
    return family, form == "nr"


class _SPDSolve:
    """Dense Cholesky for small matrices, sparse LU otherwise."""

    def __init__(self, A):
        n = A.shape[0]
        if n <= DENSE_LIMIT:
            dense = A.toarray() if sparse.issparse(A) else np.asarray(A)
            self._chol = dense_la.CholeskyFactor(0.5 * (dense + dense.T))
            self._lu = None
        else:
            self._chol = None
            self._lu = splinalg.splu(sparse.csc_matrix(A), permc_spec="MMD_AT_PLUS_A")

    def solve(self, b):
        if self._chol is not None:
            return self._chol.solve(b)
        return self._lu.solve(np.asarray(b, dtype=float))

    __call__ = solve


class IetiSystem:
    """Assembled all-floating system for a multi-patch problem.

    Parameters
    ----------
    mp : MultiPatch
    coeffs : ElasticityCoefficients
    mats : list of PatchMatrices
    cs : ConstraintSystem
    """

    def __init__(self, mp: MultiPatch, coeffs: ElasticityCoefficients, mats, cs: ConstraintSystem,
                 check_rigid: bool = True):
        self.mp = mp
        self.coeffs = coeffs
        self.mats: list[PatchMatrices] = list(mats)
        self.cs = cs
        self.layout: DofLayout = cs.layout
        self.d = mp.d
        self.parts = [DofPartition(p) for p in mp.patches]
        self.H = [patch_diameter(p) for p in mp.patches]
        self.A = sparse.block_diag([m.A for m in self.mats], format="csr")
        self.f = np.concatenate([m.f for m in self.mats])
        self.R = rigid_basis(mp, self.layout, [m.A for m in self.mats] if check_rigid else None)
        self.proj = Projectors(cs, self.R)
        self.B = cs.B
        self.Bt = sparse.csr_matrix(cs.B.T)

    @property
    def N(self) -> int:
        return self.layout.N

    @property
    def N_c(self) -> int:
        return self.cs.n_rows

    @property
    def size(self) -> int:
        return self.N + self.N_c

    def split(self, x):
        return x[:self.N], x[self.N:]

    def apply_saddle(self, x):
        """``(A w + B^T P_chi chi, P_chi B w)``; ``x`` may hold columns."""
        w, chi = self.split(x)
        top = self.A @ w + self.Bt @ self.proj.apply_P_chi(chi)
        bot = self.proj.apply_P_chi(self.B @ w)
        return np.concatenate([top, bot], axis=0)

    def rhs(self):
        """Projected right-hand side and the initial multiplier ``lambda_0``."""
        lam0 = self.proj.initial_multiplier(self.f)
        b = np.concatenate([self.f - self.Bt @ lam0, self.proj.apply_P_chi(self.cs.c)])
        return b, lam0

    def recover(self, x, lam0):
        w, chi = self.split(x)
        return self.proj.recover_solution(w, chi, lam0, self.cs.c)

    def project(self, x):
        """Orthogonal projection onto ``range(A) x ker(G^T)``."""
        w, chi = self.split(x)
        return np.concatenate([self.proj.apply_P_u(w), self.proj.apply_P_chi(chi)], axis=0)


def _component_slices(n, d):
    return [slice(l * n, (l + 1) * n) for l in range(d)]


class _ExactLocal:
    def __init__(self, sys: IetiSystem, k: int):
        m = sys.mats[k]
        part = sys.parts[k]
        H = sys.H[k]
        self.PA = _SPDSolve(m.A + H ** -2 * m.vector_mass())
        g, i = part.vector_gamma(), part.vector_interior()
        A = m.A.tocsr()
        self.A_GG = A[g][:, g]
        self.A_GI = A[g][:, i]
        self.A_IG = A[i][:, g]
        self.A_II = _SPDSolve(A[i][:, i]) if i.size else None

    def solve_PA(self, r):
        return self.PA.solve(r)

    def apply_S(self, theta):
        out = self.A_GG @ theta
        if self.A_II is not None:
            out = out - self.A_GI @ self.A_II.solve(self.A_IG @ theta)
        return out


class _KroneckerLocal:
    """Shared Schur application for the inexact and geometry-aware families."""

    def _setup_schur(self, part: DofPartition, ops, interior_fds, outer: float, scale=None):
        self.part = part
        self.ops = ops
        self.interior_fds = interior_fds
        self.outer = outer
        self.sqrt_scale = None if scale is None else [np.sqrt(s) for s in scale]

    def apply_S(self, theta):
        part = self.part
        n, ng = part.n, part.n_gamma
        out = np.empty_like(theta, dtype=float)
        for l in range(part.d):
            t = theta[l * ng:(l + 1) * ng]
            if self.sqrt_scale is not None:
                sc = self.sqrt_scale[l] if t.ndim == 1 else self.sqrt_scale[l][:, None]
                t = t * sc
            ext = np.zeros((n,) + t.shape[1:])
            ext[part.gamma] = t
            y = self.ops[l].apply(ext)
            if part.interior.size:
                s = self.interior_fds[l].apply(y[part.interior])
                ext2 = np.zeros_like(ext)
                ext2[part.interior] = s
                y = y - self.ops[l].apply(ext2)
            res = self.outer * y[part.gamma]
            if self.sqrt_scale is not None:
                res = res * sc
            out[l * ng:(l + 1) * ng] = res
        return out


class _InexactLocal(_KroneckerLocal):
    def __init__(self, sys: IetiSystem, k: int):
        patch = sys.mp.patches[k]
        H, d = sys.H[k], sys.d
        blocks = parametric_blocks(patch, sys.coeffs)
        self.n = patch.n
        self.fd = [fd_setup_full(blocks, l, H) for l in range(d)]
        ops = [blocks.A_hat(l) for l in range(d)]
        ints = [fd_setup_interior(blocks, l) for l in range(d)] if sys.parts[k].interior.size else None
        self._setup_schur(sys.parts[k], ops, ints, H ** (d - 2))

    def solve_PA(self, r):
        return np.concatenate([self.fd[l].apply(r[s]) for l, s in enumerate(_component_slices(self.n, len(self.fd)))],
                              axis=0)


class _GeoLocal(_KroneckerLocal):
    def __init__(self, sys: IetiSystem, k: int):
        patch = sys.mp.patches[k]
        H, d = sys.H[k], sys.d
        m = sys.mats[k]
        part = sys.parts[k]
        self.n = n = patch.n
        self.geo = geometry_blocks(patch, sys.coeffs, quad=PatchQuadrature(patch))
        Adiag = m.A.diagonal()
        Mdiag = m.M.diagonal()
        self.D_A, self.D_S, self.fd = [], [], []
        ops = []
        for l in range(d):
            At = self.geo.A_tilde(l)
            ops.append(At)
            at_diag = At.diagonal()
            num = Adiag[l * n:(l + 1) * n] + H ** -2 * Mdiag
            den = at_diag + H ** -2 * self.geo.M_tilde(l).diagonal()
            self.D_A.append(num / den)
            self.D_S.append(Adiag[l * n:(l + 1) * n][part.gamma] / at_diag[part.gamma])
            self.fd.append(fd_setup_geo(self.geo, l, H, scale=self.D_A[l]))
        ints = [fd_setup_geo_interior(self.geo, l) for l in range(d)] if part.interior.size else None
        self._setup_schur(part, ops, ints, 1.0, scale=self.D_S)

    def solve_PA(self, r):
        return np.concatenate([self.fd[l].apply(r[s]) for l, s in enumerate(_component_slices(self.n, len(self.fd)))],
                              axis=0)


_FAMILIES = {"exact": _ExactLocal, "inexact": _InexactLocal, "geo": _GeoLocal}


class Preconditioner:
    """Block-diagonal preconditioner ``diag(P_u P_A^{-1} P_u, P_chi P_S P_chi)``."""

    def __init__(self, sys: IetiSystem, variant: str = "inexact-nr"):
        self.sys = sys
        self.variant = variant
        self.family, self.nr = parse_variant(variant)
        cls = _FAMILIES[self.family]
        self.local = [cls(sys, k) for k in range(sys.mp.n_patch)]
        lay = sys.layout
        self._slices = [lay.patch_slice(k) for k in range(lay.n_patch)]
        self._gamma = [sys.layout.offsets[k] + sys.parts[k].vector_gamma() for k in range(lay.n_patch)]

    def apply_PA_inv(self, r):
        out = np.empty_like(r, dtype=float)
        for loc, s in zip(self.local, self._slices):
            out[s] = loc.solve_PA(r[s])
        return out

    def apply_BSBt(self, lam):
        """``sum_k B_G^(k) S^(k) B_G^(k)^T lam`` with the family's local ``S``."""
        v = self.sys.Bt @ lam
        out = np.zeros_like(v)
        for loc, g in zip(self.local, self._gamma):
            out[g] = loc.apply_S(v[g])
        return self.sys.B @ out

    def apply_PS(self, lam):
        if not self.nr:
            return self.apply_BSBt(lam)
        solve = self.sys.cs.solve_BBt
        return solve(self.apply_BSBt(solve(lam)))

    def apply(self, x):
        sys = self.sys
        rw, rc = sys.split(x)
        top = sys.proj.apply_P_u(self.apply_PA_inv(sys.proj.apply_P_u(rw)))
        bot = sys.proj.apply_P_chi(self.apply_PS(sys.proj.apply_P_chi(rc)))
        return np.concatenate([top, bot], axis=0)

    __call__ = apply


@dataclass
class ProbeResult:
    eig_min: float
    eig_max: float
    kappa: float
    dim: int


def _complement_basis(V: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ``range(V)`` in R^n."""
    if V.shape[1] == 0:
        return np.eye(n)
    Q, Rf = np.linalg.qr(V, mode="complete")
    diag = np.abs(np.diag(Rf))
    rank = int(np.sum(diag > 1e-10 * diag.max()))
    if rank != V.shape[1]:
        raise SubspaceError("subspace generator is rank deficient (%d < %d)" % (rank, V.shape[1]))
    return Q[:, rank:]


def spectral_probe(sys: IetiSystem, prec: Preconditioner, reverse: bool = False) -> ProbeResult:
    """Extreme eigenvalue magnitudes of the preconditioned saddle operator on
    ``range(A) x ker(G^T)``.

    Both operators are materialized on an orthonormal basis ``Q`` of the
    subspace; with ``Q^T B^{-1} Q = L L^T`` the spectrum is that of the
    symmetric matrix ``L^T (Q^T K Q) L``.  ``reverse`` flips the basis
    order (the result must not depend on it).
    """
    Qw = _complement_basis(sys.R.toarray(), sys.N)
    Qc = _complement_basis(sys.proj.G, sys.N_c)
    if reverse:
        Qw, Qc = Qw[:, ::-1], Qc[:, ::-1]
    nw, nc = Qw.shape[1], Qc.shape[1]
    Q = np.zeros((sys.size, nw + nc))
    Q[:sys.N, :nw] = Qw
    Q[sys.N:, nw:] = Qc
    K = Q.T @ sys.apply_saddle(Q)
    P = Q.T @ prec.apply(Q)
    K = 0.5 * (K + K.T)
    P = 0.5 * (P + P.T)
    L = dense_la.cholesky(P)
    S = L.T @ K @ L
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    mags = np.abs(ev)
    return ProbeResult(float(mags.min()), float(mags.max()), float(mags.max() / mags.min()), Q.shape[1])
