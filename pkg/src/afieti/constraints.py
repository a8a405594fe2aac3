"""All-floating constraints, rigid-body modes and the two projectors.

Every patch is treated as floating: Dirichlet conditions are imposed by
constraint rows exactly like interface continuity.  The multiplier set is
non-redundant (``ker(B^T) = {0}``):

* a DOF shared by several patches through conforming faces gets a chain of
  ``u_i - u_{i+1} = 0`` rows along ascending patch index;
* a nested (refined) face gets one row per fine-side DOF,
  ``u_fine - sum_c T[f, c] u_coarse = 0``;
* every DOF on a Dirichlet face gets a pinning row ``u = g``; continuity
  rows whose DOFs are all pinned are implied and dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from . import dense_la
from .errors import NotPositiveDefinite, RedundantConstraints, RigidModeError
from .geometry import MultiPatch, Patch, face_dofs, match_interface_dofs

__all__ = [
    "DofLayout",
    "ConstraintSystem",
    "Projectors",
    "rigid_modes",
    "rigid_basis",
    "build_constraints",
    "BlockSPDSolver",
]

_WEIGHT_TOL = 1e-14


def rigid_modes(patch: Patch, A=None, tol: float = 1e-10) -> np.ndarray:
    """Spline coefficient vectors of translations and infinitesimal rotations.

    Rotations use the control points, which are the coefficients of the
    coordinate functions in the (isoparametric) discrete space.  When ``A``
    is given, every column is checked: ``||A r|| <= tol ||A||_F``.

    Returns
    -------
    ndarray, shape (d n, d (d + 1) / 2)
    """
    d, n = patch.d, patch.n
    X = patch.control
    cols = []
    for l in range(d):
        r = np.zeros(d * n)
        r[l * n:(l + 1) * n] = 1.0
        cols.append(r)
    pairs = [(0, 1)] if d == 2 else [(0, 1), (1, 2), (2, 0)]
    for a, b in pairs:
        r = np.zeros(d * n)
        # (x_a, x_b) -> (x_b, -x_a): rotation in the (a, b) plane
        r[a * n:(a + 1) * n] = X[:, b]
        r[b * n:(b + 1) * n] = -X[:, a]
        cols.append(r)
    R = np.stack(cols, axis=1)
    if A is not None:
        normA = splinalg.norm(A) if sparse.issparse(A) else np.linalg.norm(A)
        res = np.linalg.norm(A @ R, axis=0)
        if np.any(res > tol * normA):
            raise RigidModeError("rigid mode not in the stiffness kernel (residual %.3e)" % res.max())
    return R


class DofLayout:
    """Global numbering: patches in order, each as ``[u_1, ..., u_d]`` blocks."""

    def __init__(self, sizes, d: int):
        self.sizes = [int(s) for s in sizes]
        self.d = d
        self.offsets = np.concatenate([[0], np.cumsum([d * s for s in self.sizes])]).astype(int)

    @property
    def n_patch(self) -> int:
        return len(self.sizes)

    @property
    def N(self) -> int:
        return int(self.offsets[-1])

    def index(self, k: int, l: int, i):
        return self.offsets[k] + l * self.sizes[k] + np.asarray(i)

    def patch_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    def split(self, v):
        return [v[self.patch_slice(k)] for k in range(self.n_patch)]

    def join(self, parts) -> np.ndarray:
        return np.concatenate(parts)


def rigid_basis(mp: MultiPatch, layout: DofLayout, stiffness=None) -> sparse.csr_matrix:
    """Block-diagonal ``R`` with one rigid-mode block per patch."""
    blocks = []
    for k, p in enumerate(mp.patches):
        A = None if stiffness is None else stiffness[k]
        blocks.append(sparse.csr_matrix(rigid_modes(p, A)))
    return sparse.block_diag(blocks, format="csr")


class BlockSPDSolver:
    """Solver for a sparse SPD matrix via dense Cholesky of its connected blocks."""

    def __init__(self, S: sparse.spmatrix):
        S = sparse.csr_matrix(S)
        self.n = S.shape[0]
        n_comp, labels = csgraph.connected_components(abs(S) > 0, directed=False)
        self.blocks = []
        for c in range(n_comp):
            idx = np.nonzero(labels == c)[0]
            sub = S[idx][:, idx].toarray()
            self.blocks.append((idx, dense_la.cholesky(sub)))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        out = np.zeros_like(b)
        for idx, L in self.blocks:
            out[idx] = dense_la.cho_solve(L, b[idx])
        return out

    __call__ = solve


@dataclass
class ConstraintSystem:
    """Sparse constraint matrix with row provenance.

    Attributes
    ----------
    B : csr_matrix, shape (N_c, N)
    c : ndarray
        Constraint values (Dirichlet data; zero on continuity rows).
    kinds : list of str
        ``"dirichlet"`` or ``"continuity"`` per row.
    sources : list of tuple
        ``(patch, face)`` for Dirichlet rows, ``("interface", index)`` or
        ``("shared", members)`` for continuity rows.
    slaves : ndarray of int
        One distinct global DOF per row, eliminated by the monolithic solver.
    """

    B: sparse.csr_matrix
    c: np.ndarray
    kinds: list
    sources: list
    slaves: np.ndarray
    layout: DofLayout
    BBt: BlockSPDSolver = field(repr=False, default=None)

    @property
    def n_rows(self) -> int:
        return self.B.shape[0]

    def solve_BBt(self, v):
        return self.BBt.solve(v)

    def gamma_columns(self) -> np.ndarray:
        return np.unique(self.B.indices)


def build_constraints(mp: MultiPatch, dirichlet_values=None) -> ConstraintSystem:
    """Assemble ``B`` and the constraint values ``c``.

    Parameters
    ----------
    mp : MultiPatch
    dirichlet_values : list of ndarray, optional
        Per patch, a vector of length ``d n`` whose entries on Dirichlet
        faces are the prescribed coefficients; zero data when omitted.

    Raises
    ------
    RedundantConstraints
        If ``B B^T`` is singular.
    """
    d = mp.d
    layout = DofLayout([p.n for p in mp.patches], d)

    pinned = [set() for _ in mp.patches]
    dir_source = {}
    for k, p in enumerate(mp.patches):
        for f in mp.dirichlet_faces(k):
            for i in face_dofs(p, f):
                if int(i) not in pinned[k]:
                    pinned[k].add(int(i))
                    dir_source[(k, int(i))] = (k, f)

    # scalar templates: (entries [(patch, idx, weight)], kind, source, slave (patch, idx))
    templates = []
    for (k, i), src in sorted(dir_source.items()):
        templates.append(([(k, i, 1.0)], "dirichlet", src, (k, i)))

    # conforming faces: equivalence classes of shared scalar DOFs
    parent = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    nested = []
    for t, it in enumerate(mp.interfaces):
        cp = match_interface_dofs(mp, it)
        if it.nesting == "conforming":
            perm = np.argmax(cp.weights, axis=1)
            for s, m in zip(cp.slaves, cp.masters[perm]):
                a, b = find((cp.slave_patch, int(s))), find((cp.master_patch, int(m)))
                if a != b:
                    parent[max(a, b)] = min(a, b)
        else:
            nested.append((t, cp))

    classes = {}
    for x in list(parent):
        classes.setdefault(find(x), []).append(x)
    for members in sorted(classes.values()):
        members = sorted(members)
        if len(members) < 2:
            continue
        dirs = [m for m in members if m[1] in pinned[m[0]]]
        free = [m for m in members if m[1] not in pinned[m[0]]]
        chain = dirs[:1] + free
        for a, b in zip(chain[:-1], chain[1:]):
            templates.append(([(a[0], a[1], 1.0), (b[0], b[1], -1.0)], "continuity",
                              ("shared", tuple(members)), b))

    used_slaves = {tpl[3] for tpl in templates}
    for t, cp in nested:
        for r, s in enumerate(cp.slaves):
            s = int(s)
            w = cp.weights[r]
            nz = np.nonzero(np.abs(w) > _WEIGHT_TOL)[0]
            masters = [(cp.master_patch, int(cp.masters[j])) for j in nz]
            entries = [(cp.slave_patch, s, 1.0)] + [(m[0], m[1], -float(w[j])) for m, j in zip(masters, nz)]
            all_pinned = s in pinned[cp.slave_patch] and all(m[1] in pinned[m[0]] for m in masters)
            if all_pinned:
                continue
            cand = [(cp.slave_patch, s)] + masters
            slave = next((x for x in cand if x[1] not in pinned[x[0]] and x not in used_slaves), None)
            if slave is None:
                raise RedundantConstraints("no free DOF to eliminate in nested row")
            used_slaves.add(slave)
            templates.append((entries, "continuity", ("interface", t), slave))

    rows, cols, vals, kinds, sources, slaves = [], [], [], [], [], []
    r = 0
    for l in range(d):
        for entries, kind, src, slave in templates:
            for k, i, w in entries:
                rows.append(r)
                cols.append(layout.index(k, l, i))
                vals.append(w)
            kinds.append(kind)
            sources.append(src)
            slaves.append(layout.index(slave[0], l, slave[1]))
            r += 1
    B = sparse.csr_matrix((vals, (rows, cols)), shape=(r, layout.N))
    B.sum_duplicates()

    c = np.zeros(r)
    if dirichlet_values is not None:
        g = layout.join([np.asarray(v, float) for v in dirichlet_values])
        for j, kind in enumerate(kinds):
            if kind == "dirichlet":
                c[j] = g[slaves[j]]
    try:
        BBt = BlockSPDSolver(B @ B.T)
    except NotPositiveDefinite as exc:
        raise RedundantConstraints("B B^T is singular: %s" % exc) from None
    return ConstraintSystem(B, c, kinds, sources, np.asarray(slaves), layout, BBt)


class Projectors:
    """``G = B R`` with the projectors onto ``ker(G^T)`` and ``range(A)``.

    ``P_chi = I - G (G^T G)^{-1} G^T`` acts on multipliers and
    ``P_u = I - R (R^T R)^{-1} R^T`` on displacements.
    """

    def __init__(self, cs: ConstraintSystem, R: sparse.csr_matrix):
        self.B = cs.B
        self.R = sparse.csr_matrix(R)
        self.G = np.asarray((cs.B @ self.R).toarray())
        self.GtG = dense_la.CholeskyFactor(self.G.T @ self.G)
        self.RtR = BlockSPDSolver(self.R.T @ self.R)

    def apply_P_chi(self, v):
        return v - self.G @ self.GtG.solve(self.G.T @ v)

    def apply_P_u(self, v):
        return v - self.R @ self.RtR.solve(self.R.T @ v)

    def initial_multiplier(self, f):
        """``lambda_0 = G (G^T G)^{-1} R^T f``, so that ``G^T lambda_0 = R^T f``."""
        return self.G @ self.GtG.solve(self.R.T @ f)

    def recover_solution(self, w, chi, lam0, c=None):
        """Displacement and multiplier from the projected saddle solution.

        ``u = w + R (G^T G)^{-1} G^T (c - B w)`` and ``lambda = lambda_0 + chi``.
        """
        r = -(self.B @ w) if c is None else c - self.B @ w
        u = w + self.R @ self.GtG.solve(self.G.T @ r)
        return u, lam0 + chi
