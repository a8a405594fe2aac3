"""Tensor-product B-spline patches and multi-patch topology.

A patch stores one :class:`~afieti.bspline.KnotVector` per parametric
direction and a control net in colexicographic order.  The same bases are
used for the geometry map and for the discrete displacement space
(isoparametric setting), so coordinate functions are exactly representable.

Faces are identified by ``(direction, side)`` with ``side`` 0 at
``eta_direction = 0`` and 1 at ``eta_direction = 1``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from . import dense_la
from .bspline import KnotVector, basis_derivatives, collocation_matrix, knot_insertion_matrix
from .errors import SingularGeometry
from .kron import MultiIndexMap, kron_apply

__all__ = [
    "Face",
    "Patch",
    "Interface",
    "MultiPatch",
    "DofPartition",
    "InterfaceCoupling",
    "jacobian",
    "patch_diameter",
    "face_dofs",
    "match_interface_dofs",
    "interface_mismatch",
    "dump_multipatch",
    "load_multipatch",
    "save_multipatch",
]

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass(frozen=True, order=True)
class Face:
    direction: int
    side: int

    def __post_init__(self):
        if self.side not in (0, 1):
            raise ValueError("side must be 0 or 1")


class Patch:
    """B-spline patch ``F: [0,1]^d -> R^d``.

    Parameters
    ----------
    bases : sequence of KnotVector
        One knot vector per parametric direction, direction 1 first.
    control : array_like, shape (n, d)
        Control points, colexicographic order (direction 1 fastest).
    """

    def __init__(self, bases, control):
        self.bases = tuple(bases)
        self.d = len(self.bases)
        if self.d not in (2, 3):
            raise ValueError("only 2D and 3D patches are supported")
        self.index = MultiIndexMap([kv.m for kv in self.bases])
        control = np.asarray(control, dtype=float)
        if control.shape != (self.index.size, self.d):
            raise ValueError("control net must have shape (%d, %d)" % (self.index.size, self.d))
        self.control = control

    @classmethod
    def from_map(cls, bases, F):
        """Interpolate the map ``F`` at the tensor Greville points.

        Exact whenever every component of ``F`` lies in the spline space.
        """
        bases = tuple(bases)
        grev = [kv.greville() for kv in bases]
        mesh = np.meshgrid(*grev[::-1], indexing="ij")
        pts = np.stack([g.ravel() for g in mesh[::-1]], axis=1)
        X = np.asarray(F(pts), dtype=float)
        inverses = [dense_la.solve_lu(collocation_matrix(kv, g), np.eye(kv.m))
                    for kv, g in zip(bases, grev)]
        control = kron_apply(inverses[::-1], X)
        return cls(bases, control)

    @property
    def sizes(self) -> tuple:
        return self.index.sizes

    @property
    def n(self) -> int:
        """Number of scalar basis functions."""
        return self.index.size

    @property
    def degrees(self) -> tuple:
        return tuple(kv.degree for kv in self.bases)

    def tensor_tables(self, points, order: int = 1):
        """Per-direction collocation tables at arbitrary 1D point sets.

        Returns a list (direction 1 first) of dense arrays ``(k+1, n_pts, m)``
        holding values and derivatives up to ``order``.
        """
        out = []
        for kv, x in zip(self.bases, points):
            out.append(np.stack([collocation_matrix(kv, x, k) for k in range(order + 1)]))
        return out

    def grid_jacobian(self, points):
        """Map values and Jacobians on the tensor grid of 1D ``points``.

        Returns ``X`` of shape (N, d) and ``J`` of shape (N, d, d) with
        ``J[:, i, k] = dX_i / d eta_k``; grid points are colexicographic.
        """
        tabs = self.tensor_tables(points, 1)
        X = kron_apply([t[0] for t in tabs[::-1]], self.control)
        J = np.empty((X.shape[0], self.d, self.d))
        for k in range(self.d):
            fac = [tabs[l][1 if l == k else 0] for l in range(self.d)]
            J[:, :, k] = kron_apply(fac[::-1], self.control)
        return X, J

    def evaluate(self, eta) -> np.ndarray:
        """Physical points for parameter points ``eta`` of shape (n, d)."""
        return self._eval(eta, 0)[0]

    def _eval(self, eta, order):
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        npts = eta.shape[0]
        firsts, ders = [], []
        for l, kv in enumerate(self.bases):
            f, dd = basis_derivatives(kv, eta[:, l], order)
            firsts.append(f)
            ders.append(dd)
        # local tensor of active functions for every point
        X = np.zeros((npts, self.d))
        J = np.zeros((npts, self.d, self.d))
        ranges = [np.arange(kv.degree + 1) for kv in self.bases]
        loc = np.stack(np.meshgrid(*ranges[::-1], indexing="ij"), 0).reshape(self.d, -1)[::-1]
        for i in range(npts):
            gidx = sum((firsts[l][i] + loc[l]) * self.index.strides[l] for l in range(self.d))
            cp = self.control[gidx]
            vals = reduce(np.multiply, [ders[l][i, 0, loc[l]] for l in range(self.d)])
            X[i] = vals @ cp
            if order:
                for k in range(self.d):
                    g = reduce(np.multiply, [ders[l][i, 1 if l == k else 0, loc[l]] for l in range(self.d)])
                    J[i, :, k] = g @ cp
        return X, J

    def jacobian(self, eta):
        return self._eval(eta, 1)[1]

    def refined(self, new_bases) -> "Patch":
        """Same geometry represented on nested finer bases."""
        T = [knot_insertion_matrix(c, f) for c, f in zip(self.bases, new_bases)]
        return Patch(new_bases, kron_apply(T[::-1], self.control))

    def faces(self):
        return [Face(l, s) for l in range(self.d) for s in (0, 1)]

    def __repr__(self):
        return "Patch(d=%d, sizes=%s, degrees=%s)" % (self.d, self.sizes, self.degrees)


def jacobian(patch: Patch, eta):
    """Jacobian, determinant and inverse at a single parametric point.

    Raises
    ------
    SingularGeometry
        If ``|det J| < 1e-14``.
    """
    eta = np.asarray(eta, dtype=float).reshape(1, -1)
    if np.any(eta < 0) or np.any(eta > 1):
        raise ValueError("parametric point outside [0,1]^d")
    J = patch.jacobian(eta)[0]
    det = float(np.linalg.det(J))
    if abs(det) < 1e-14:
        raise SingularGeometry("singular Jacobian (det = %.3e)" % det)
    return J, det, np.linalg.inv(J)


def patch_diameter(patch: Patch) -> float:
    """Largest distance between two control points (bounds the patch diameter)."""
    P = patch.control
    best = 0.0
    for i in range(P.shape[0] - 1):
        dist = np.sqrt(((P[i + 1:] - P[i]) ** 2).sum(axis=1)).max()
        best = max(best, float(dist))
    return best


def face_dofs(patch: Patch, face: Face) -> np.ndarray:
    """Scalar DOF indices on ``face``, colexicographic over the remaining directions."""
    idx = np.arange(patch.n).reshape(patch.index.shape)
    axis = patch.d - 1 - face.direction
    sl = [slice(None)] * patch.d
    sl[axis] = 0 if face.side == 0 else patch.sizes[face.direction] - 1
    return idx[tuple(sl)].ravel()


@dataclass(frozen=True)
class Interface:
    """Shared face between two patches.

    ``perm[i]`` gives the position, among the face directions of patch b
    (ascending), of face direction ``i`` of patch a; ``flip[i]`` marks a
    reversed parameter along it.  ``nesting`` is ``"conforming"`` or
    ``"nested"``; for nested faces ``refiner`` names the finer side.
    """

    patch_a: int
    face_a: Face
    patch_b: int
    face_b: Face
    perm: tuple = ()
    flip: tuple = ()
    nesting: str = "conforming"
    refiner: str | None = None

    def __post_init__(self):
        if self.nesting not in ("conforming", "nested"):
            raise ValueError("nesting must be 'conforming' or 'nested'")
        if self.nesting == "nested" and self.refiner not in ("a", "b"):
            raise ValueError("nested interface needs refiner 'a' or 'b'")


@dataclass
class MultiPatch:
    patches: list
    interfaces: list = field(default_factory=list)
    boundary: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {p.d for p in self.patches}
        if len(dims) != 1:
            raise ValueError("patches must share the spatial dimension")
        self.d = dims.pop()
        used = set()
        for it in self.interfaces:
            for key in ((it.patch_a, it.face_a), (it.patch_b, it.face_b)):
                if key in used:
                    raise ValueError("face %s used by more than one interface" % (key,))
                used.add(key)
        for k, p in enumerate(self.patches):
            for f in p.faces():
                tag = self.boundary.get((k, f))
                if (k, f) in used:
                    if tag is not None:
                        raise ValueError("interface face %s also tagged as boundary" % ((k, f),))
                elif tag not in (DIRICHLET, NEUMANN):
                    raise ValueError("boundary face %s needs a dirichlet/neumann tag" % ((k, f),))

    @property
    def n_patch(self) -> int:
        return len(self.patches)

    def dirichlet_faces(self, k: int):
        return [f for f in self.patches[k].faces() if self.boundary.get((k, f)) == DIRICHLET]

    def neumann_faces(self, k: int):
        return [f for f in self.patches[k].faces() if self.boundary.get((k, f)) == NEUMANN]


class DofPartition:
    """Interface (boundary layer) and interior scalar DOFs of one patch."""

    def __init__(self, patch: Patch):
        grid = patch.index.grid()
        sizes = np.asarray(patch.sizes)
        on_bdry = np.any((grid == 0) | (grid == sizes - 1), axis=1)
        self.gamma = np.nonzero(on_bdry)[0]
        self.interior = np.nonzero(~on_bdry)[0]
        self.n = patch.n
        self.d = patch.d
        self.interior_sizes = tuple(int(s) - 2 for s in sizes)

    @property
    def n_gamma(self) -> int:
        return self.gamma.size

    def vector_gamma(self) -> np.ndarray:
        return np.concatenate([self.gamma + l * self.n for l in range(self.d)])

    def vector_interior(self) -> np.ndarray:
        return np.concatenate([self.interior + l * self.n for l in range(self.d)])


def _face_dirs(d: int, face: Face):
    return [l for l in range(d) if l != face.direction]


def _face_param_map(d, it: Interface):
    """Return a function mapping face-a parameters (n, d-1) to face-b parameters."""
    nf = d - 1
    perm = it.perm if it.perm else tuple(range(nf))
    flip = it.flip if it.flip else (False,) * nf

    def fmap(t):
        s = np.empty_like(t)
        for i in range(nf):
            s[:, perm[i]] = 1.0 - t[:, i] if flip[i] else t[:, i]
        return s
    return fmap, perm, flip


def _embed(face: Face, t, d):
    eta = np.empty((t.shape[0], d))
    eta[:, face.direction] = float(face.side)
    for i, l in enumerate(_face_dirs(d, face)):
        eta[:, l] = t[:, i]
    return eta


def interface_mismatch(mp: MultiPatch, it: Interface, n: int = 10) -> float:
    """Max distance between the two mapped faces on an ``n^(d-1)`` parameter grid."""
    d = mp.d
    g = np.linspace(0.0, 1.0, n)
    t = np.stack([a.ravel() for a in np.meshgrid(*([g] * (d - 1)), indexing="ij")], axis=1)
    fmap, _, _ = _face_param_map(d, it)
    xa = mp.patches[it.patch_a].evaluate(_embed(it.face_a, t, d))
    xb = mp.patches[it.patch_b].evaluate(_embed(it.face_b, fmap(t), d))
    return float(np.abs(xa - xb).max())


@dataclass
class InterfaceCoupling:
    """Face DOF relations of one interface.

    Every row expresses a slave DOF as a weighted combination of master DOFs:
    ``u[slave_patch][slaves[r]] = sum_j weights[r, j] * u[master_patch][masters[j]]``.
    For conforming faces the weight matrix is a permutation.
    """

    slave_patch: int
    master_patch: int
    slaves: np.ndarray
    masters: np.ndarray
    weights: np.ndarray


def _flipped_kv(kv: KnotVector) -> KnotVector:
    return KnotVector((1.0 - kv.knots)[::-1], kv.degree)


def match_interface_dofs(mp: MultiPatch, it: Interface) -> InterfaceCoupling:
    """Relate the face DOFs of the two sides of an interface.

    Conforming faces give a one-to-one pairing (b is the slave side);
    nested faces express each fine-side face DOF through the coarse-side
    face DOFs by the tensor product of univariate refinement matrices.
    """
    d = mp.d
    pa, pb = mp.patches[it.patch_a], mp.patches[it.patch_b]
    dirs_a, dirs_b = _face_dirs(d, it.face_a), _face_dirs(d, it.face_b)
    _, perm, flip = _face_param_map(d, it)
    dofs_a = face_dofs(pa, it.face_a)
    dofs_b = face_dofs(pb, it.face_b)
    sizes_b = [pb.sizes[l] for l in dirs_b]
    map_b = MultiIndexMap(sizes_b)

    # univariate relations expressed in face-a coordinates: T_i maps
    # coarse coefficients along face direction i to fine ones
    mats = []
    for i in range(d - 1):
        kva = pa.bases[dirs_a[i]]
        kvb = pb.bases[dirs_b[perm[i]]]
        if flip[i]:
            kvb = _flipped_kv(kvb)
        if it.nesting == "conforming":
            if kva != kvb:
                raise ValueError("conforming interface with different knot vectors")
            mats.append(np.eye(kva.m))
        elif it.refiner == "b":
            mats.append(knot_insertion_matrix(kva, kvb))
        else:
            mats.append(knot_insertion_matrix(kvb, kva))

    # index of every b-face DOF in face-a coordinate order
    b_sizes_in_a = [sizes_b[perm[i]] for i in range(d - 1)]
    grid_b_in_a = MultiIndexMap(b_sizes_in_a).grid()
    b_multi = np.empty_like(grid_b_in_a)
    for i in range(d - 1):
        j = grid_b_in_a[:, i]
        b_multi[:, perm[i]] = sizes_b[perm[i]] - 1 - j if flip[i] else j
    b_lin = b_multi @ np.asarray(map_b.strides)
    dofs_b_in_a = dofs_b[b_lin]

    T = reduce(np.kron, mats[::-1])
    if it.nesting == "conforming" or it.refiner == "b":
        return InterfaceCoupling(it.patch_b, it.patch_a, dofs_b_in_a, dofs_a, T)
    return InterfaceCoupling(it.patch_a, it.patch_b, dofs_a, dofs_b_in_a, T)


# ---------------------------------------------------------------------------
# text format

_HEADER = "# afieti multipatch v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_multipatch(mp: MultiPatch) -> str:
    """Serialize to the line-oriented text format (see README)."""
    out = io.StringIO()
    out.write(_HEADER + "\n")
    out.write("dim %d\n" % mp.d)
    out.write("patches %d\n" % mp.n_patch)
    for k, p in enumerate(mp.patches):
        out.write("patch %d\n" % k)
        for kv in p.bases:
            out.write("knots %d %s\n" % (kv.degree, " ".join(_fmt(x) for x in kv.knots)))
        out.write("control %d\n" % p.n)
        for row in p.control:
            out.write(" ".join(_fmt(x) for x in row) + "\n")
        out.write("end\n")
    for it in mp.interfaces:
        nf = mp.d - 1
        perm = it.perm if it.perm else tuple(range(nf))
        flip = it.flip if it.flip else (False,) * nf
        out.write("interface %d %d %d %d %d %d perm %s flip %s %s%s\n" % (
            it.patch_a, it.face_a.direction, it.face_a.side,
            it.patch_b, it.face_b.direction, it.face_b.side,
            ",".join(str(int(x)) for x in perm), ",".join(str(int(bool(x))) for x in flip),
            it.nesting, "" if it.refiner is None else " " + it.refiner))
    for (k, f), tag in sorted(mp.boundary.items()):
        out.write("boundary %d %d %d %s\n" % (k, f.direction, f.side, tag))
    return out.getvalue()


def save_multipatch(mp: MultiPatch, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_multipatch(mp))


def load_multipatch(source) -> MultiPatch:
    """Parse the text format from a path or an open file / string buffer."""
    if isinstance(source, (str, bytes)) and not str(source).lstrip().startswith("#"):
        with open(source) as fh:
            text = fh.read()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    pos = 0

    def take():
        nonlocal pos
        ln = lines[pos]
        pos += 1
        return ln.split()

    tok = take()
    if tok[0] != "dim":
        raise ValueError("expected 'dim'")
    d = int(tok[1])
    tok = take()
    n_patch = int(tok[1])
    patches = []
    for k in range(n_patch):
        tok = take()
        if tok[:2] != ["patch", str(k)]:
            raise ValueError("expected 'patch %d'" % k)
        bases = []
        for _ in range(d):
            tok = take()
            if tok[0] != "knots":
                raise ValueError("expected 'knots'")
            bases.append(KnotVector([float(x) for x in tok[2:]], int(tok[1])))
        tok = take()
        n = int(tok[1])
        ctrl = np.array([[float(x) for x in take()] for _ in range(n)])
        if take() != ["end"]:
            raise ValueError("expected 'end'")
        patches.append(Patch(bases, ctrl))
    interfaces, boundary = [], {}
    while pos < len(lines):
        tok = take()
        if tok[0] == "interface":
            a, la, sa, b, lb, sb = (int(x) for x in tok[1:7])
            perm = tuple(int(x) for x in tok[8].split(","))
            flip = tuple(bool(int(x)) for x in tok[10].split(","))
            nesting = tok[11]
            refiner = tok[12] if len(tok) > 12 else None
            interfaces.append(Interface(a, Face(la, sa), b, Face(lb, sb), perm, flip, nesting, refiner))
        elif tok[0] == "boundary":
            k, l, s = (int(x) for x in tok[1:4])
            boundary[(k, Face(l, s))] = tok[4]
        else:
            raise ValueError("unknown record %r" % tok[0])
    return MultiPatch(patches, interfaces, boundary)

