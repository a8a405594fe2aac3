"""Problem presets, manufactured solutions, oracles and experiment runs.

Presets
-------
``square-2patch``
    ``[0,1]^2`` and ``[1,2] x [0,1]``, conforming; Dirichlet on ``x = 0``
    and ``y = 0``, Neumann elsewhere.
``square-2patch-nc``
    Same domain, the right patch refined by a factor 2 (nested interface).
``distorted-2patch``
    Two curved quadrilaterals with a shared straight edge, conforming;
    Dirichlet on the left and bottom sides.
``parallelepiped-nc``
    ``(0,1) x (0,3) x (0,1)`` in three unit patches with ``n_el``,
    ``2 n_el`` and ``4 n_el`` elements per direction; Dirichlet everywhere.
``cube-scal``
    ``(0,1)^3`` split into ``N^3`` equal cubes; Neumann on ``x = 0`` and
    ``x = 1``, Dirichlet elsewhere.

All presets use manufactured solutions, with body force and tractions
derived by hand.
"""
from __future__ import annotations

import configparser
import csv
import io
import itertools
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import dense_la
from .assembly import ElasticityCoefficients, PatchQuadrature, assemble_patch
from .bspline import KnotVector, collocation_matrix
from .constraints import build_constraints
from .geometry import (DIRICHLET, NEUMANN, Face, Interface, MultiPatch, Patch, face_dofs,
                       load_multipatch)
from .ieti import VARIANTS, IetiSystem, Preconditioner
from .kron import kron_apply
from .minres import minres

__all__ = [
    "PRESETS",
    "Manufactured",
    "Problem",
    "RunConfig",
    "ExperimentRow",
    "CSV_COLUMNS",
    "preset",
    "manufactured_2d",
    "manufactured_3d",
    "dirichlet_values",
    "build_system",
    "monolithic_solve",
    "error_norms",
    "solve_problem",
    "run_experiment",
    "sweep_configs",
    "write_csv",
    "read_csv",
    "load_config",
]

PRESETS = ("square-2patch", "square-2patch-nc", "distorted-2patch", "parallelepiped-nc", "cube-scal")

CSV_COLUMNS = ("preset", "p", "n_el", "n_patch", "variant", "iters", "relres", "l2_err", "h1_err", "seconds")


# ---------------------------------------------------------------------------
# manufactured solutions

@dataclass
class Manufactured:
    """Exact displacement with its gradient and the induced data.

    ``grad(X)[:, i, j]`` is ``d u_i / d x_j``; ``f`` is the body force
    ``-div sigma(u)``; ``traction(X, n) = sigma(u) n``.
    """

    d: int
    u: callable
    grad: callable
    f: callable
    coeffs: ElasticityCoefficients

    def stress(self, X):
        G = self.grad(X)
        eps = 0.5 * (G + np.transpose(G, (0, 2, 1)))
        tr = np.trace(eps, axis1=1, axis2=2)
        return 2.0 * self.coeffs.mu * eps + self.coeffs.lam * tr[:, None, None] * np.eye(self.d)

    def traction(self, X, normal):
        return np.einsum("nij,nj->ni", self.stress(X), normal)


def manufactured_2d(coeffs: ElasticityCoefficients) -> Manufactured:
    """``u = (sin x cos y, x^2 sin y)``."""
    mu, lam = coeffs.mu, coeffs.lam

    def u(X):
        x, y = X[:, 0], X[:, 1]
        return np.stack([np.sin(x) * np.cos(y), x ** 2 * np.sin(y)], axis=1)

    def grad(X):
        x, y = X[:, 0], X[:, 1]
        return np.stack([np.stack([np.cos(x) * np.cos(y), -np.sin(x) * np.sin(y)], axis=1),
                         np.stack([2 * x * np.sin(y), x ** 2 * np.cos(y)], axis=1)], axis=1)

    def f(X):
        x, y = X[:, 0], X[:, 1]
        f1 = 2 * mu * np.sin(x) * np.cos(y) - (mu + lam) * (-np.sin(x) * np.cos(y) + 2 * x * np.cos(y))
        f2 = -mu * (2 * np.sin(y) - x ** 2 * np.sin(y)) - (mu + lam) * (-np.cos(x) * np.sin(y) - x ** 2 * np.sin(y))
        return np.stack([f1, f2], axis=1)

    return Manufactured(2, u, grad, f, coeffs)


def manufactured_3d(coeffs: ElasticityCoefficients) -> Manufactured:
    """``u = (cos x, z sin y, (x y z)^2)``."""
    mu, lam = coeffs.mu, coeffs.lam

    def u(X):
        x, y, z = X.T
        return np.stack([np.cos(x), z * np.sin(y), (x * y * z) ** 2], axis=1)

    def grad(X):
        x, y, z = X.T
        zero = np.zeros_like(x)
        return np.stack([np.stack([-np.sin(x), zero, zero], axis=1),
                         np.stack([zero, z * np.cos(y), np.sin(y)], axis=1),
                         np.stack([2 * x * y ** 2 * z ** 2, 2 * x ** 2 * y * z ** 2, 2 * x ** 2 * y ** 2 * z], axis=1)],
                        axis=1)

    def f(X):
        x, y, z = X.T
        f1 = mu * np.cos(x) - (mu + lam) * (-np.cos(x) + 4 * x * y ** 2 * z)
        f2 = mu * z * np.sin(y) - (mu + lam) * (-z * np.sin(y) + 4 * x ** 2 * y * z)
        f3 = (-2 * mu * (y ** 2 * z ** 2 + x ** 2 * z ** 2 + x ** 2 * y ** 2)
              - (mu + lam) * (np.cos(y) + 2 * x ** 2 * y ** 2))
        return np.stack([f1, f2, f3], axis=1)

    return Manufactured(3, u, grad, f, coeffs)


# ---------------------------------------------------------------------------
# geometry presets

@dataclass
class Problem:
    name: str
    mp: MultiPatch
    exact: Manufactured
    coeffs: ElasticityCoefficients
    p: int
    n_el: int

    @property
    def n_patch(self) -> int:
        return self.mp.n_patch

    @property
    def d(self) -> int:
        return self.mp.d


def _box(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return lambda eta: lo + eta * (hi - lo)


def _bilinear(c00, c10, c01, c11, bubble=(0.0, 0.0)):
    c00, c10, c01, c11, bub = (np.asarray(c, float) for c in (c00, c10, c01, c11, bubble))

    def F(eta):
        s, t = eta[:, :1], eta[:, 1:2]
        base = (1 - s) * (1 - t) * c00 + s * (1 - t) * c10 + (1 - s) * t * c01 + s * t * c11
        return base + 16.0 * s * (1 - s) * t * (1 - t) * bub
    return F


def _conforming(a, fa, b, fb, d):
    return Interface(a, fa, b, fb, tuple(range(d - 1)), (False,) * (d - 1))


def _square_2patch(p, n_el, refine_right=1, distorted=False):
    kv = KnotVector.uniform(p, n_el)
    kv_r = KnotVector.uniform(p, n_el * refine_right)
    if distorted:
        maps = [_bilinear((0, 0), (1, 0.1), (-0.1, 1), (1.2, 1.2), bubble=(0.06, -0.05)),
                _bilinear((1, 0.1), (2.1, 0), (1.2, 1.2), (2, 1), bubble=(0.05, 0.06))]
    else:
        maps = [_box((0, 0), (1, 1)), _box((1, 0), (2, 1))]
    patches = [Patch.from_map([kv, kv], maps[0]), Patch.from_map([kv_r, kv_r], maps[1])]
    if refine_right == 1:
        it = _conforming(0, Face(0, 1), 1, Face(0, 0), 2)
    else:
        it = Interface(0, Face(0, 1), 1, Face(0, 0), (0,), (False,), "nested", "b")
    bc = {(0, Face(0, 0)): DIRICHLET, (0, Face(1, 0)): DIRICHLET, (1, Face(1, 0)): DIRICHLET,
          (0, Face(1, 1)): NEUMANN, (1, Face(0, 1)): NEUMANN, (1, Face(1, 1)): NEUMANN}
    return MultiPatch(patches, [it], bc)


def _parallelepiped(p, n_el):
    patches, its, bc = [], [], {}
    for k in range(3):
        kv = KnotVector.uniform(p, n_el * 2 ** k)
        patches.append(Patch.from_map([kv] * 3, _box((0, k, 0), (1, k + 1, 1))))
        for f in patches[-1].faces():
            if not ((f == Face(1, 1) and k < 2) or (f == Face(1, 0) and k > 0)):
                bc[(k, f)] = DIRICHLET
    for k in range(2):
        its.append(Interface(k, Face(1, 1), k + 1, Face(1, 0), (0, 1), (False, False), "nested", "b"))
    return MultiPatch(patches, its, bc)


def _cube(p, n_el, N):
    kv = KnotVector.uniform(p, n_el)
    idx = {}
    patches = []
    for k, (i, j, l) in enumerate((i, j, l) for l in range(N) for j in range(N) for i in range(N)):
        idx[(i, j, l)] = k
        lo = np.array([i, j, l], float) / N
        patches.append(Patch.from_map([kv] * 3, _box(lo, lo + 1.0 / N)))
    its, bc = [], {}
    for (i, j, l), k in idx.items():
        pos = (i, j, l)
        for dirn in range(3):
            for side in (0, 1):
                nb = list(pos)
                nb[dirn] += 1 if side else -1
                if 0 <= nb[dirn] < N:
                    if side == 1:
                        its.append(_conforming(k, Face(dirn, 1), idx[tuple(nb)], Face(dirn, 0), 3))
                else:
                    bc[(k, Face(dirn, side))] = NEUMANN if dirn == 0 else DIRICHLET
    return MultiPatch(patches, its, bc)


_DEFAULTS = {
    "square-2patch": dict(p=2, n_el=4, n_patch=2),
    "square-2patch-nc": dict(p=2, n_el=4, n_patch=2),
    "distorted-2patch": dict(p=2, n_el=4, n_patch=2),
    "parallelepiped-nc": dict(p=2, n_el=2, n_patch=3),
    "cube-scal": dict(p=2, n_el=4, n_patch=8),
}


def preset(name: str, p: int | None = None, n_el: int | None = None, n_patch: int | None = None,
           coeffs: ElasticityCoefficients | None = None) -> Problem:
    """Build a named problem.

    ``n_el`` is the number of elements per direction of the coarsest patch;
    ``n_patch`` only varies for ``cube-scal`` (a perfect cube).
    """
    if name not in _DEFAULTS:
        raise ValueError("unknown preset %r (choose from %s)" % (name, ", ".join(PRESETS)))
    dflt = _DEFAULTS[name]
    p = dflt["p"] if p is None else int(p)
    n_el = dflt["n_el"] if n_el is None else int(n_el)
    coeffs = ElasticityCoefficients() if coeffs is None else coeffs
    if p < 1 or n_el < 1:
        raise ValueError("p and n_el must be positive")
    if name == "cube-scal":
        n_patch = dflt["n_patch"] if n_patch is None else int(n_patch)
        N = int(round(n_patch ** (1.0 / 3.0)))
        if N ** 3 != n_patch:
            raise ValueError("cube-scal needs a cubic number of patches, got %d" % n_patch)
        mp = _cube(p, n_el, N)
    else:
        if n_patch is not None and n_patch != dflt["n_patch"]:
            raise ValueError("preset %s has %d patches" % (name, dflt["n_patch"]))
        if name == "square-2patch":
            mp = _square_2patch(p, n_el)
        elif name == "square-2patch-nc":
            mp = _square_2patch(p, n_el, refine_right=2)
        elif name == "distorted-2patch":
            mp = _square_2patch(p, n_el, distorted=True)
        else:
            mp = _parallelepiped(p, n_el)
    exact = manufactured_2d(coeffs) if mp.d == 2 else manufactured_3d(coeffs)
    return Problem(name, mp, exact, coeffs, p, n_el)


def problem_from_file(path, coeffs: ElasticityCoefficients | None = None) -> Problem:
    """Problem on a geometry file with the default manufactured solution."""
    coeffs = ElasticityCoefficients() if coeffs is None else coeffs
    mp = load_multipatch(path)
    exact = manufactured_2d(coeffs) if mp.d == 2 else manufactured_3d(coeffs)
    p = max(kv.p for pt in mp.patches for kv in pt.bases)
    n_el = min(kv.n_el for pt in mp.patches for kv in pt.bases)
    return Problem(str(path), mp, exact, coeffs, p, n_el)


# ---------------------------------------------------------------------------
# system construction and oracles

def dirichlet_values(mp: MultiPatch, u) -> list:
    """Per patch, coefficients interpolating ``u`` at the Greville points of
    each Dirichlet face (zero elsewhere)."""
    out = []
    for k, patch in enumerate(mp.patches):
        d, n = patch.d, patch.n
        vals = np.zeros(d * n)
        for face in mp.dirichlet_faces(k):
            dirs = [l for l in range(d) if l != face.direction]
            pts = [np.array([float(face.side)]) if l == face.direction else patch.bases[l].greville()
                   for l in range(d)]
            X, _ = patch.grid_jacobian(pts)
            U = np.asarray(u(X), dtype=float)
            inv = [dense_la.solve_lu(collocation_matrix(patch.bases[l], pts[l]), np.eye(patch.bases[l].m))
                   for l in dirs]
            coef = kron_apply(inv[::-1], U)
            idx = face_dofs(patch, face)
            for l in range(d):
                vals[l * n + idx] = coef[:, l]
        out.append(vals)
    return out


def build_system(problem: Problem) -> IetiSystem:
    mp, ex = problem.mp, problem.exact
    mats = []
    for k, patch in enumerate(mp.patches):
        neu = [(f, ex.traction) for f in mp.neumann_faces(k)]
        mats.append(assemble_patch(patch, problem.coeffs, ex.f, neu))
    cs = build_constraints(mp, dirichlet_values(mp, ex.u))
    return IetiSystem(mp, problem.coeffs, mats, cs)


def monolithic_solve(sys: IetiSystem) -> np.ndarray:
    """Direct solve of the constrained problem by eliminating one DOF per row.

    Every constraint row owns a distinct DOF (``slaves``); solving the rows
    for those DOFs expresses the whole vector through the remaining ones,
    ``u = T u_M + u_0``, and the reduced system ``T^T A T`` is SPD.
    """
    B = sys.B.tocsc()
    N = sys.N
    S = sys.cs.slaves
    is_slave = np.zeros(N, bool)
    is_slave[S] = True
    Mi = np.nonzero(~is_slave)[0]
    lu = splinalg.splu(B[:, S].tocsc())
    BM = B[:, Mi].toarray() if len(Mi) * len(S) < 4e6 else B[:, Mi]
    if sparse.issparse(BM):
        X = sparse.csc_matrix(splinalg.spsolve(B[:, S].tocsc(), BM.tocsc()))
    else:
        X = sparse.csc_matrix(lu.solve(BM))
    t = lu.solve(sys.cs.c)
    E_M = sparse.csr_matrix((np.ones(len(Mi)), (Mi, np.arange(len(Mi)))), shape=(N, len(Mi)))
    E_S = sparse.csr_matrix((np.ones(len(S)), (S, np.arange(len(S)))), shape=(N, len(S)))
    T = (E_M - E_S @ X).tocsr()
    u0 = E_S @ t
    K = (T.T @ sys.A @ T).tocsc()
    rhs = T.T @ (sys.f - sys.A @ u0)
    uM = splinalg.spsolve(K, rhs)
    return T @ uM + u0


def error_norms(problem: Problem, u, extra_points: int = 2):
    """``L^2`` and ``H^1``-seminorm errors against the manufactured solution."""
    mp, ex = problem.mp, problem.exact
    off = 0
    e0 = e1 = 0.0
    for patch in mp.patches:
        d, n = patch.d, patch.n
        up = np.asarray(u[off:off + d * n]).reshape(d, n).T
        off += d * n
        q = max(kv.p for kv in patch.bases) + 1 + extra_points
        quad = PatchQuadrature(patch, q)
        vals = quad.values()
        ders = quad.derivatives()
        Uh = kron_apply(vals[::-1], up)
        dU = np.empty((quad.size, d, d))
        for k in range(d):
            fac = [ders[l] if l == k else vals[l] for l in range(d)]
            dU[:, :, k] = kron_apply(fac[::-1], up)
        Gh = np.einsum("nik,nkj->nij", dU, quad.Jinv)
        w = quad.weights * np.abs(quad.det)
        e0 += float(np.sum(w * np.sum((Uh - ex.u(quad.X)) ** 2, axis=1)))
        e1 += float(np.sum(w * np.sum((Gh - ex.grad(quad.X)) ** 2, axis=(1, 2))))
    return np.sqrt(e0), np.sqrt(e1)


# ---------------------------------------------------------------------------
# experiments

@dataclass
class RunConfig:
    """One solve.  ``geometry`` (a file path) overrides ``preset``."""

    preset: str = "square-2patch"
    geometry: str | None = None
    p: int | None = None
    n_el: int | None = None
    n_patch: int | None = None
    variant: str = "inexact-nr"
    lam: float = 0.3 / 0.52
    mu: float = 1.0 / 2.6
    tol: float = 1e-8
    max_iter: int | None = None
    csv: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError("unknown variant %r" % self.variant)
        if self.geometry is None and self.preset not in PRESETS:
            raise ValueError("unknown preset %r" % self.preset)
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    @property
    def coeffs(self) -> ElasticityCoefficients:
        return ElasticityCoefficients(self.lam, self.mu)

    def problem(self) -> Problem:
        if self.geometry:
            return problem_from_file(self.geometry, self.coeffs)
        return preset(self.preset, self.p, self.n_el, self.n_patch, self.coeffs)


@dataclass
class ExperimentRow:
    preset: str
    p: int
    n_el: int
    n_patch: int
    variant: str
    iters: int
    relres: float
    l2_err: float
    h1_err: float
    seconds: float
    converged: bool = field(default=True, compare=False)

    def as_csv(self):
        return [self.preset, str(self.p), str(self.n_el), str(self.n_patch), self.variant,
                str(self.iters), repr(float(self.relres)), repr(float(self.l2_err)),
                repr(float(self.h1_err)), "%.6f" % self.seconds]


@dataclass
class SolveResult:
    row: ExperimentRow
    u: np.ndarray
    lam: np.ndarray
    report: object
    system: IetiSystem


def solve_problem(problem: Problem, variant: str = "inexact-nr", tol: float = 1e-8,
                  max_iter: int | None = None, system: IetiSystem | None = None, callback=None) -> SolveResult:
    """Assemble (unless ``system`` is given), precondition and solve with MINRES."""
    sys = build_system(problem) if system is None else system
    prec = Preconditioner(sys, variant)
    b, lam0 = sys.rhs()
    max_iter = 10 * sys.N_c + 100 if max_iter is None else max_iter
    x, rep = minres(sys.apply_saddle, prec.apply, b, tol=tol, max_iter=max_iter, callback=callback)
    u, lam = sys.recover(x, lam0)
    l2, h1 = error_norms(problem, u)
    row = ExperimentRow(problem.name, problem.p, problem.n_el, problem.n_patch, variant,
                        rep.iterations, float(rep.relres_true), float(l2), float(h1), rep.elapsed, rep.converged)
    return SolveResult(row, u, lam, rep, sys)


def run_experiment(configs, csv_path=None):
    """Solve every configuration in order; write CSV if a path is given.

    Non-convergence is recorded in the row, not raised.
    """
    if isinstance(configs, RunConfig):
        configs = [configs]
    rows = []
    systems = {}
    for cfg in configs:
        prob = cfg.problem()
        key = (cfg.geometry, cfg.preset, prob.p, prob.n_el, prob.n_patch, cfg.lam, cfg.mu)
        if key not in systems:
            systems.clear()
            systems[key] = build_system(prob)
        res = solve_problem(prob, cfg.variant, cfg.tol, cfg.max_iter, system=systems[key])
        rows.append(res.row)
    if csv_path is not None:
        write_csv(rows, csv_path)
    return rows


def sweep_configs(base: RunConfig, p_values=None, n_el_values=None, n_patch_values=None, variants=None):
    """Cartesian grid over degrees, refinements, patch counts and variants (variants innermost)."""
    p_values = [base.p] if not p_values else list(p_values)
    n_el_values = [base.n_el] if not n_el_values else list(n_el_values)
    n_patch_values = [base.n_patch] if not n_patch_values else list(n_patch_values)
    variants = [base.variant] if not variants else list(variants)
    return [replace(base, p=p, n_el=ne, n_patch=npch, variant=v)
            for npch, p, ne, v in itertools.product(n_patch_values, p_values, n_el_values, variants)]


def write_csv(rows, path):
    text = io.StringIO()
    w = csv.writer(text, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.as_csv())
    if hasattr(path, "write"):
        path.write(text.getvalue())
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text.getvalue())


def read_csv(path):
    """Read rows written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError("unexpected CSV header")
        out = []
        for rec in rd:
            out.append(ExperimentRow(rec["preset"], int(rec["p"]), int(rec["n_el"]), int(rec["n_patch"]),
                                     rec["variant"], int(rec["iters"]), float(rec["relres"]),
                                     float(rec["l2_err"]), float(rec["h1_err"]), float(rec["seconds"])))
        return out


# ---------------------------------------------------------------------------
# configuration files

_SECTIONS = {
    "problem": {"preset": str, "geometry": str, "p": int, "n_el": int, "n_patch": int,
                "lam": float, "mu": float},
    "solver": {"variant": str, "tol": float, "max_iter": int},
    "output": {"csv": str, "seed": int},
    "sweep": {"p": "ints", "n_el": "ints", "n_patch": "ints", "variants": "strs"},
}


def _ints(s):
    return [int(x) for x in s.replace(",", " ").split()]


def _strs(s):
    return [x for x in s.replace(",", " ").split()]


def load_config(path):
    """Parse an INI-style configuration.

    Returns ``(RunConfig, sweep)`` where ``sweep`` maps ``p``, ``n_el``,
    ``n_patch``, ``variants`` to lists (possibly empty).  Unknown sections
    or keys raise ``ValueError``.
    """
    cp = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        cp.read_file(fh)
    kw, sweep = {}, {}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ValueError("unknown config section [%s]" % sec)
        for key, raw in cp.items(sec):
            if key not in _SECTIONS[sec]:
                raise ValueError("unknown key %r in [%s]" % (key, sec))
            typ = _SECTIONS[sec][key]
            if sec == "sweep":
                sweep[key] = _ints(raw) if typ == "ints" else _strs(raw)
            else:
                kw[key] = typ(raw)
    valid = {f.name for f in fields(RunConfig)}
    assert set(kw) <= valid
    return RunConfig(**kw), sweep
