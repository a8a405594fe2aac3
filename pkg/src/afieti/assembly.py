"""Per-patch matrices for compressible linear elasticity.

Physical matrices (stiffness, mass, load) are assembled by Gauss quadrature
on the tensor grid of element-wise rules.  Parametric Kronecker blocks use
univariate stiffness ``K`` and mass ``M`` matrices per direction.  The
geometry-aware variant fits the diagonal of the pulled-back coefficient
tensor by a separable product and rebuilds weighted univariate matrices.

Vector unknowns are ordered component by component:
``[u_1 (n), u_2 (n), ..., u_d (n)]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy import sparse

from .bspline import KnotVector, basis_derivatives, collocation_matrix, gauss_rule
from .errors import ApproximationDomainError, SingularGeometry
from .geometry import Face, Patch
from .kron import KroneckerOperator, KroneckerSum, MultiIndexMap, kron_apply

__all__ = [
    "ElasticityCoefficients",
    "PatchQuadrature",
    "PatchMatrices",
    "ParametricBlocks",
    "SeparableCoefficient",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_load",
    "assemble_patch",
    "univariate_matrices",
    "weighted_univariate",
    "parametric_blocks",
    "coefficient_tensor",
    "separable_fit",
    "geometry_blocks",
    "GeometryBlocks",
]


@dataclass(frozen=True)
class ElasticityCoefficients:
    lam: float = 0.3 / 0.52
    mu: float = 1.0 / 2.6

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")

    def weight(self, l: int, m: int) -> float:
        """Kronecker-sum coefficient of direction ``m`` in component ``l``."""
        return 2.0 * self.mu + self.lam if l == m else self.mu


class PatchQuadrature:
    """Tensor Gauss grid of a patch with map values and Jacobians.

    Grid points are ordered colexicographically (direction 1 fastest).
    """

    def __init__(self, patch: Patch, q=None):
        self.patch = patch
        self.d = patch.d
        self.rules = [gauss_rule(kv, q) for kv in patch.bases]
        self.points = [r.points.ravel() for r in self.rules]
        self.weights1d = [r.weights.ravel() for r in self.rules]
        self.index = MultiIndexMap([p.size for p in self.points])
        self.X, self.J = patch.grid_jacobian(self.points)
        self.det = np.linalg.det(self.J)
        if np.any(np.abs(self.det) < 1e-14):
            raise SingularGeometry("singular Jacobian at a quadrature point")
        s = np.sign(self.det)
        if not np.all(s == s[0]):
            raise SingularGeometry("Jacobian determinant changes sign")
        self.Jinv = np.linalg.inv(self.J)
        self.weights = reduce(np.kron, self.weights1d[::-1])

    @property
    def size(self) -> int:
        return self.index.size

    def values(self):
        """Basis-value collocation matrices per direction, direction 1 first."""
        return [collocation_matrix(kv, x) for kv, x in zip(self.patch.bases, self.points)]

    def derivatives(self):
        return [collocation_matrix(kv, x, 1) for kv, x in zip(self.patch.bases, self.points)]


def _element_tables(patch: Patch, q=None):
    """Per direction: (first index per element, ders (n_el, q, 2, p+1), points, weights)."""
    out = []
    for kv in patch.bases:
        rule = gauss_rule(kv, q)
        first, ders = basis_derivatives(kv, rule.points.ravel(), 1,
                                        span=np.repeat(rule.spans, rule.q))
        n_el, nq = rule.points.shape
        out.append((first.reshape(n_el, nq)[:, 0],
                    ders.reshape(n_el, nq, 2, kv.degree + 1),
                    rule.points, rule.weights))
    return out


def _local_tensor(tabs, elem, d, deriv):
    """Values (deriv=None) or derivative along ``deriv`` of all local functions
    at all local quadrature points; shape (nq_loc, n_loc), colex in both."""
    fac = []
    for l in range(d):
        ders = tabs[l][1][elem[l]]
        fac.append(ders[:, 1 if deriv == l else 0, :])
    return reduce(np.kron, fac[::-1])


class _BandAccumulator:
    """Banded storage of a tensor-product sparse matrix.

    Entry ``(i, j)`` lives at ``band[i, o]`` where ``o`` is the colex index of
    the per-direction offset ``j_l - i_l + p_l``.
    """

    def __init__(self, sizes, degrees):
        self.sizes = np.asarray(sizes)
        self.degrees = np.asarray(degrees)
        self.width = MultiIndexMap(2 * self.degrees + 1)
        self.index = MultiIndexMap(sizes)
        self.n = self.index.size
        self.band = np.zeros((self.n, self.width.size))
        loc = MultiIndexMap(self.degrees + 1).grid()
        off = loc[None, :, :] - loc[:, None, :] + self.degrees
        self.offsets = off @ np.asarray(self.width.strides)
        self.local_lin = loc @ np.asarray(self.index.strides)

    def add(self, first, local):
        base = int(np.dot(first, self.index.strides))
        rows = base + self.local_lin
        self.band[rows[:, None], self.offsets] += local

    def tocsr(self) -> sparse.csr_matrix:
        grid = self.index.grid()
        woff = self.width.grid() - self.degrees
        cols_multi = grid[:, None, :] + woff[None, :, :]
        valid = np.all((cols_multi >= 0) & (cols_multi < self.sizes), axis=2) & (self.band != 0.0)
        cols = cols_multi @ np.asarray(self.index.strides)
        rows = np.broadcast_to(np.arange(self.n)[:, None], cols.shape)
        A = sparse.csr_matrix((self.band[valid], (rows[valid], cols[valid])), shape=(self.n, self.n))
        A.sort_indices()
        return A


def _elements(patch: Patch):
    return MultiIndexMap([kv.n_el for kv in patch.bases])


def assemble_stiffness(patch: Patch, coeffs: ElasticityCoefficients, q=None) -> sparse.csr_matrix:
    """Elasticity stiffness ``2 mu eps(u):eps(v) + lam div u div v``.

    Returns the ``(d n) x (d n)`` CSR matrix, components outermost.
    """
    d, mu, lam = patch.d, coeffs.mu, coeffs.lam
    tabs = _element_tables(patch, q)
    acc = {(l, m): _BandAccumulator(patch.sizes, patch.degrees) for l in range(d) for m in range(l, d)}
    elems = _elements(patch)
    for e in range(elems.size):
        elem = elems.inverse(e)
        w1 = [tabs[l][3][elem[l]] for l in range(d)]
        pts = [tabs[l][2][elem[l]] for l in range(d)]
        _, J = patch.grid_jacobian([np.asarray(p) for p in pts])
        det = np.linalg.det(J)
        if np.any(np.abs(det) < 1e-14):
            raise SingularGeometry("singular Jacobian in element %s" % (elem,))
        Jinv = np.linalg.inv(J)
        w = reduce(np.kron, w1[::-1]) * np.abs(det)
        dN = np.stack([_local_tensor(tabs, elem, d, k) for k in range(d)], axis=2)
        G = np.einsum("qak,qki->qai", dN, Jinv)  # physical gradients
        nq, nloc = G.shape[:2]
        Gf = G.reshape(nq, nloc * d)
        GG = ((Gf * w[:, None]).T @ Gf).reshape(nloc, d, nloc, d)
        dot = np.einsum("aibi->ab", GG)
        first = [tabs[l][0][elem[l]] for l in range(d)]
        for (l, m), a in acc.items():
            loc = mu * GG[:, m, :, l] + lam * GG[:, l, :, m]
            if l == m:
                loc = loc + mu * dot
            a.add(first, loc)
    blocks = [[None] * d for _ in range(d)]
    for (l, m), a in acc.items():
        blocks[l][m] = a.tocsr()
        if l != m:
            blocks[m][l] = blocks[l][m].T
    return sparse.bmat(blocks, format="csr")


def assemble_mass(patch: Patch, q=None) -> sparse.csr_matrix:
    """Scalar mass matrix ``int N_a N_b dx`` (one block of the vector mass)."""
    d = patch.d
    tabs = _element_tables(patch, q)
    acc = _BandAccumulator(patch.sizes, patch.degrees)
    elems = _elements(patch)
    for e in range(elems.size):
        elem = elems.inverse(e)
        pts = [tabs[l][2][elem[l]] for l in range(d)]
        _, J = patch.grid_jacobian([np.asarray(p) for p in pts])
        w = reduce(np.kron, [tabs[l][3][elem[l]] for l in range(d)][::-1]) * np.abs(np.linalg.det(J))
        N = _local_tensor(tabs, elem, d, None)
        acc.add([tabs[l][0][elem[l]] for l in range(d)], (N * w[:, None]).T @ N)
    return acc.tocsr()


def _face_quadrature(patch: Patch, face: Face, q=None):
    """Points, weights (ds included), unit outward normals and basis-value
    factors of a face; the factor for the normal direction is a single row."""
    pts, wts, facs = [], [], []
    for l, kv in enumerate(patch.bases):
        if l == face.direction:
            x = np.array([float(face.side)])
            pts.append(x)
            wts.append(np.ones(1))
        else:
            rule = gauss_rule(kv, q)
            pts.append(rule.points.ravel())
            wts.append(rule.weights.ravel())
        facs.append(collocation_matrix(kv, pts[-1]))
    X, J = patch.grid_jacobian(pts)
    det = np.linalg.det(J)
    Jinv_T = np.transpose(np.linalg.inv(J), (0, 2, 1))
    nvec = Jinv_T[:, :, face.direction]
    nrm = np.linalg.norm(nvec, axis=1)
    sign = (1.0 if face.side == 1 else -1.0) * np.sign(det)
    normal = nvec / nrm[:, None] * sign[:, None]
    ds = np.abs(det) * nrm
    w = reduce(np.kron, wts[::-1]) * ds
    return X, w, normal, facs


def assemble_load(patch: Patch, f=None, neumann=(), q=None) -> np.ndarray:
    """Load vector ``int f.v dx + sum_faces int g.v ds``.

    Parameters
    ----------
    f : callable, optional
        ``f(X) -> (N, d)`` body force at physical points.
    neumann : iterable of (Face, g)
        ``g(X, normal) -> (N, d)`` traction on each listed face.
    """
    d = patch.d
    out = np.zeros(d * patch.n)
    if f is not None:
        quad = PatchQuadrature(patch, q)
        vals = np.asarray(f(quad.X), dtype=float) * (quad.weights * np.abs(quad.det))[:, None]
        out += kron_apply(quad.values()[::-1], vals, transpose=True).T.ravel()
    for face, g in neumann:
        X, w, normal, facs = _face_quadrature(patch, face, q)
        vals = np.asarray(g(X, normal), dtype=float) * w[:, None]
        out += kron_apply(facs[::-1], vals, transpose=True).T.ravel()
    return out


@dataclass
class PatchMatrices:
    """Assembled data of one patch.

    ``M`` is the scalar mass; the vector mass is ``kron(I_d, M)``.
    """

    A: sparse.csr_matrix
    M: sparse.csr_matrix
    f: np.ndarray
    d: int

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def component_block(self, l: int) -> sparse.csr_matrix:
        s = slice(l * self.n, (l + 1) * self.n)
        return self.A[s, s]

    def vector_mass(self) -> sparse.csr_matrix:
        return sparse.block_diag([self.M] * self.d, format="csr")


def assemble_patch(patch: Patch, coeffs: ElasticityCoefficients, f=None, neumann=(), q=None) -> PatchMatrices:
    return PatchMatrices(assemble_stiffness(patch, coeffs, q), assemble_mass(patch, q),
                         assemble_load(patch, f, neumann, q), patch.d)


# ---------------------------------------------------------------------------
# univariate and Kronecker-structured matrices

def univariate_matrices(kv: KnotVector, q=None):
    """Dense univariate stiffness ``K`` and mass ``M`` on [0, 1]."""
    return weighted_univariate(kv, None, None, q)


def weighted_univariate(kv: KnotVector, nu=None, beta=None, q=None):
    """Weighted univariate matrices.

    ``K[i,j] = int nu b_i' b_j'`` and ``M[i,j] = int beta b_i b_j`` with the
    weights given as values at the Gauss points of ``gauss_rule(kv, q)``
    (flattened element by element); ``None`` means weight 1.
    """
    rule = gauss_rule(kv, q)
    x = rule.points.ravel()
    w = rule.weights.ravel()
    B0 = collocation_matrix(kv, x, 0)
    B1 = collocation_matrix(kv, x, 1)
    wk = w if nu is None else w * np.asarray(nu, float)
    wm = w if beta is None else w * np.asarray(beta, float)
    K = (B1 * wk[:, None]).T @ B1
    M = (B0 * wm[:, None]).T @ B0
    return 0.5 * (K + K.T), 0.5 * (M + M.T)


def _kron_sum(K, M, weights):
    """``sum_m weights[m] * (X_d x ... x X_1)`` with ``X_m = K_m`` and ``M`` elsewhere.

    ``K``, ``M`` and ``weights`` are indexed by direction (direction 1 first).
    """
    d = len(K)
    terms = []
    for m in range(d):
        fac = [K[j] if j == m else M[j] for j in range(d)]
        terms.append((weights[m], KroneckerOperator(fac[::-1])))
    return KroneckerSum(terms)


@dataclass
class ParametricBlocks:
    """Univariate stiffness/mass pairs on [0,1] per direction plus their interior parts."""

    K: list
    M: list
    coeffs: ElasticityCoefficients
    K_int: list = field(init=False)
    M_int: list = field(init=False)

    def __post_init__(self):
        self.K_int = [k[1:-1, 1:-1] for k in self.K]
        self.M_int = [m[1:-1, 1:-1] for m in self.M]

    @property
    def d(self) -> int:
        return len(self.K)

    @property
    def sizes(self):
        return tuple(k.shape[0] for k in self.K)

    def A_hat(self, l: int) -> KroneckerSum:
        """Component block: ``(2mu+lam)`` on direction ``l``, ``mu`` on the others."""
        return _kron_sum(self.K, self.M, [self.coeffs.weight(l, m) for m in range(self.d)])

    def A_hat_interior(self, l: int) -> KroneckerSum:
        return _kron_sum(self.K_int, self.M_int, [self.coeffs.weight(l, m) for m in range(self.d)])

    def M_hat(self) -> KroneckerOperator:
        return KroneckerOperator(self.M[::-1])


def parametric_blocks(patch: Patch, coeffs: ElasticityCoefficients, q=None) -> ParametricBlocks:
    pairs = [univariate_matrices(kv, q) for kv in patch.bases]
    return ParametricBlocks([k for k, _ in pairs], [m for _, m in pairs], coeffs)


def coefficient_tensor(quad: PatchQuadrature, coeffs: ElasticityCoefficients, l: int) -> np.ndarray:
    """``[mu J^-1 J^-T + (mu+lam) J^-1 e_l e_l^T J^-T] |det J|`` on the quadrature grid.

    Returns an array of shape (N_q, d, d).
    """
    Ji = quad.Jinv
    JJ = Ji @ np.transpose(Ji, (0, 2, 1))
    col = Ji[:, :, l]
    C = coeffs.mu * JJ + (coeffs.mu + coeffs.lam) * col[:, :, None] * col[:, None, :]
    return C * np.abs(quad.det)[:, None, None]


@dataclass
class SeparableCoefficient:
    """Separable model of a diagonal: entry ``i`` is ``nu[i](eta_i) prod_{j != i} beta[j](eta_j)``.

    ``nu[i]`` and ``beta[j]`` hold values at the 1D quadrature points.
    """

    nu: list
    beta: list
    residual: float

    def entry(self, i: int) -> np.ndarray:
        """Model values of diagonal entry ``i`` on the colex grid."""
        d = len(self.beta)
        fac = [self.nu[j] if j == i else self.beta[j] for j in range(d)]
        return reduce(np.kron, fac[::-1])

    def product(self) -> np.ndarray:
        return reduce(np.kron, self.beta[::-1])


def _axis_mean_except(T, axis):
    """Mean of tensor ``T`` over every axis except ``axis`` (numpy axis)."""
    other = tuple(a for a in range(T.ndim) if a != axis)
    return T.mean(axis=other)


def separable_fit(diag, shape, sweeps: int = 3, gauge=None) -> SeparableCoefficient:
    """Fit a separable product to the diagonal entries of a coefficient tensor.

    Parameters
    ----------
    diag : array_like, shape (N_q, d)
        Diagonal entries ``C_ii`` on the colex quadrature grid.
    shape : sequence of int
        Grid sizes ``(n_1, ..., n_d)``.
    sweeps : int
        Alternating sweeps in log space.
    gauge : float, optional
        Target mean of ``log beta_j`` for every ``j``; by default 0, i.e.
        every ``beta_j`` has unit geometric mean.  Any gauge describes the
        same fitted diagonal.

    Returns
    -------
    SeparableCoefficient
        ``residual`` is the relative root-mean-square deviation of the
        model from the samples.
    """
    diag = np.asarray(diag, dtype=float)
    d = len(shape)
    if diag.shape != (int(np.prod(shape)), d):
        raise ValueError("diag must have shape (N_q, d)")
    if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
        raise ApproximationDomainError("separable fit needs positive samples")
    tshape = tuple(shape)[::-1]
    L = [np.log(diag[:, i]).reshape(tshape) for i in range(d)]

    def expand(v, j):
        s = [1] * d
        s[d - 1 - j] = v.size
        return v.reshape(s)

    a = [np.zeros(n) for n in shape]
    b = [np.zeros(n) for n in shape]
    for _ in range(sweeps):
        for i in range(d):
            r = L[i] - sum(expand(b[j], j) for j in range(d) if j != i)
            a[i] = _axis_mean_except(r, d - 1 - i)
        for j in range(d):
            acc = np.zeros(shape[j])
            for i in range(d):
                if i == j:
                    continue
                r = L[i] - expand(a[i], i) - sum(expand(b[k], k) for k in range(d) if k not in (i, j))
                acc += _axis_mean_except(r, d - 1 - j)
            b[j] = acc / (d - 1)
    target = 0.0 if gauge is None else float(gauge)
    shift = [bj.mean() - target for bj in b]
    b = [bj - s for bj, s in zip(b, shift)]
    a = [ai + sum(shift[j] for j in range(d) if j != i) for i, ai in enumerate(a)]
    fit = SeparableCoefficient([np.exp(x) for x in a], [np.exp(x) for x in b], 0.0)
    model = np.stack([fit.entry(i) for i in range(d)], axis=1)
    fit.residual = float(np.linalg.norm(model - diag) / np.linalg.norm(diag))
    return fit


@dataclass
class GeometryBlocks:
    """Weighted univariate matrices ``K~_{l,m}``, ``M~_{l,m}`` per component ``l``."""

    K: list
    M: list
    fits: list

    @property
    def d(self) -> int:
        return len(self.K)

    def A_tilde(self, l: int) -> KroneckerSum:
        return _kron_sum(self.K[l], self.M[l], [1.0] * self.d)

    def A_tilde_interior(self, l: int) -> KroneckerSum:
        return _kron_sum([k[1:-1, 1:-1] for k in self.K[l]], [m[1:-1, 1:-1] for m in self.M[l]],
                         [1.0] * self.d)

    def M_tilde(self, l: int) -> KroneckerOperator:
        return KroneckerOperator(self.M[l][::-1])


def geometry_blocks(patch: Patch, coeffs: ElasticityCoefficients, q=None,
                    quad: PatchQuadrature | None = None, match_volume: bool = True) -> GeometryBlocks:
    """Separable approximation of each component's coefficient tensor.

    With ``match_volume`` the gauge makes ``prod_j beta_j`` carry the mean
    of ``log |det J|``, so the weighted mass reproduces the physical mass
    whenever ``|det J|`` is constant.
    """
    quad = PatchQuadrature(patch, q) if quad is None else quad
    d = patch.d
    shape = [p.size for p in quad.points]
    gauge = float(np.mean(np.log(np.abs(quad.det)))) / d if match_volume else None
    Ks, Ms, fits = [], [], []
    for l in range(d):
        C = coefficient_tensor(quad, coeffs, l)
        fit = separable_fit(np.einsum("nii->ni", C), shape, gauge=gauge)
        pairs = [weighted_univariate(kv, fit.nu[m], fit.beta[m], q) for m, kv in enumerate(patch.bases)]
        Ks.append([k for k, _ in pairs])
        Ms.append([m for _, m in pairs])
        fits.append(fit)
    return GeometryBlocks(Ks, Ms, fits)
