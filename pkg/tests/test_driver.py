from dataclasses import replace

import numpy as np
import pytest
import sympy as sp

from afieti import cli, driver
from afieti.assembly import ElasticityCoefficients
from afieti.bspline import collocation_matrix
from afieti.constraints import rigid_modes
from afieti.geometry import DIRICHLET, NEUMANN, MultiPatch, face_dofs, interface_mismatch

from conftest import cached_system

C = ElasticityCoefficients()


def field_at(patch, coef, eta):
    """Vector field values of a patch at parametric points."""
    d, n = patch.d, patch.n
    cols = [collocation_matrix(kv, eta[:, l]) for l, kv in enumerate(patch.bases)]
    W = cols[0]
    for l in range(1, d):
        W = np.einsum("pi,pj->pji", W, cols[l]).reshape(len(eta), -1)
    return W @ coef.reshape(d, n).T


def sym_fields(d):
    X = sp.symbols("x y z")[:d]
    x = X
    if d == 2:
        U = sp.Matrix([sp.sin(x[0]) * sp.cos(x[1]), x[0] ** 2 * sp.sin(x[1])])
    else:
        U = sp.Matrix([sp.cos(x[0]), x[2] * sp.sin(x[1]), (x[0] * x[1] * x[2]) ** 2])
    G = U.jacobian(X)
    E = (G + G.T) / 2
    S = 2 * C.mu * E + C.lam * E.trace() * sp.eye(d)
    f = [-sum(sp.diff(S[i, j], X[j]) for j in range(d)) for i in range(d)]
    return X, U, G, S, f


@pytest.mark.parametrize("d", [2, 3])
def test_manufactured_data_symbolic(d):
    X, U, G, S, f = sym_fields(d)
    ex = driver.manufactured_2d(C) if d == 2 else driver.manufactured_3d(C)
    pts = np.random.default_rng(d).random((20, d)) * 2
    num = lambda expr: np.array([[float(e.subs(dict(zip(X, p)))) for e in expr] for p in pts])
    np.testing.assert_allclose(ex.u(pts), num(list(U)), atol=1e-13)
    np.testing.assert_allclose(ex.grad(pts).reshape(20, -1), num(list(G)), atol=1e-13)
    np.testing.assert_allclose(ex.f(pts), num(f), atol=1e-12)
    nrm = np.random.default_rng(0).standard_normal((20, d))
    t = ex.traction(pts, nrm)
    Sn = np.array([np.array(S.subs(dict(zip(X, p))), dtype=float) @ n for p, n in zip(pts, nrm)])
    np.testing.assert_allclose(t, Sn, atol=1e-12)


def test_preset_shapes():
    pp = driver.preset("parallelepiped-nc", p=1, n_el=1)
    assert pp.n_patch == 3 and all(it.nesting == "nested" for it in pp.mp.interfaces)
    m = [P.bases[0].n_el for P in pp.mp.patches]
    assert m == [1, 2, 4]
    cube = driver.preset("cube-scal", p=1, n_el=1, n_patch=8)
    assert cube.n_patch == 8
    neu = [(k, f) for (k, f), t in cube.mp.boundary.items() if t == NEUMANN]
    assert len(neu) == 8 and all(f.direction == 0 for _, f in neu)
    with pytest.raises(ValueError):
        driver.preset("sphere")
    with pytest.raises(ValueError):
        driver.preset("cube-scal", n_patch=6)


def test_square_interface_count():
    prob, sys = cached_system("square-2patch")
    m = prob.mp.patches[0].sizes[1]
    n_dir = sum(np.unique(np.concatenate([face_dofs(P, f) for f in prob.mp.dirichlet_faces(k)])).size
                for k, P in enumerate(prob.mp.patches))
    # per component: one pin per Dirichlet DOF and one continuity row per
    # interface DOF except the one already pinned at y = 0
    assert sys.N_c == 2 * ((m - 1) + n_dir)


@pytest.mark.parametrize("name", ["square-2patch", "square-2patch-nc", "distorted-2patch"])
def test_preset_invariants(name):
    prob, sys = cached_system(name)
    for it in prob.mp.interfaces:
        assert interface_mismatch(prob.mp, it) < 1e-12
    for P, m in zip(prob.mp.patches, sys.mats):
        rigid_modes(P, m.A)
    K = (sys.A + sys.Bt @ sys.B).toarray()
    assert np.linalg.eigvalsh(K).min() > 1e-10


def test_single_patch_oracle():
    from afieti.assembly import assemble_patch
    from afieti.constraints import build_constraints
    from afieti.ieti import IetiSystem
    from scipy.sparse.linalg import spsolve
    prob = driver.preset("square-2patch", p=2, n_el=3)
    P = prob.mp.patches[0]
    bc = {(0, f): DIRICHLET if f.side == 0 else NEUMANN for f in P.faces()}
    mp = MultiPatch([P], [], bc)
    ex = prob.exact
    mats = [assemble_patch(P, C, ex.f, [(f, ex.traction) for f in mp.neumann_faces(0)])]
    g = driver.dirichlet_values(mp, ex.u)
    sys = IetiSystem(mp, C, mats, build_constraints(mp, g))
    u = driver.monolithic_solve(sys)
    # classical route: keep the Dirichlet coefficients, solve for the rest
    fixed = np.zeros(sys.N, bool)
    fixed[sys.cs.slaves] = True
    A = mats[0].A.tocsr()
    ref = g[0].copy()
    free = ~fixed
    ref[free] = spsolve(A[free][:, free].tocsc(), mats[0].f[free] - A[free][:, fixed] @ ref[fixed])
    np.testing.assert_allclose(u, ref, atol=1e-10)


def test_error_norms_trivial_cases():
    prob = driver.preset("square-2patch", p=2, n_el=2)
    zero = driver.Manufactured(2, lambda X: np.zeros_like(X), lambda X: np.zeros((len(X), 2, 2)), None, C)
    zp = driver.Problem("zero", prob.mp, zero, C, 2, 2)
    N = sum(2 * P.n for P in prob.mp.patches)
    assert driver.error_norms(zp, np.zeros(N)) == (0.0, 0.0)
    # a quadratic field is reproduced exactly by its Greville interpolant
    quad = driver.Manufactured(2, lambda X: np.stack([X[:, 0] ** 2, X[:, 0] * X[:, 1]], 1),
                               lambda X: np.stack([np.stack([2 * X[:, 0], 0 * X[:, 0]], 1),
                                                   np.stack([X[:, 1], X[:, 0]], 1)], 1), None, C)
    qp = driver.Problem("quad", prob.mp, quad, C, 2, 2)
    from afieti.geometry import Patch
    coef = np.concatenate([Patch.from_map(P.bases, lambda e, P=P: quad.u(P.evaluate(e))).control.T.ravel()
                           for P in prob.mp.patches])
    l2, h1 = driver.error_norms(qp, coef)
    assert l2 <= 1e-10 and h1 <= 1e-10


@pytest.mark.parametrize("name", ["square-2patch", "square-2patch-nc", "distorted-2patch"])
def test_recovered_solution_satisfies_constraints(name):
    prob, sys = cached_system(name)
    res = driver.solve_problem(prob, "inexact-nr", system=sys)
    assert res.report.converged
    off = sys.layout.offsets
    rng = np.random.default_rng(0)
    # interface jump sampled in physical space through the parametric faces
    s = rng.random(50)
    ea = np.stack([np.ones(50), s], 1)
    eb = np.stack([np.zeros(50), s], 1)
    Pa, Pb = prob.mp.patches
    np.testing.assert_allclose(Pa.evaluate(ea), Pb.evaluate(eb), atol=1e-12)
    ua = field_at(Pa, res.u[off[0]:off[1]], ea)
    ub = field_at(Pb, res.u[off[1]:off[2]], eb)
    assert np.abs(ua - ub).max() <= 1e-7
    # Dirichlet trace equals the interpolated data
    g = driver.dirichlet_values(prob.mp, prob.exact.u)
    for k, P in enumerate(prob.mp.patches):
        for f in prob.mp.dirichlet_faces(k):
            e = np.zeros((50, 2))
            e[:, f.direction] = f.side
            e[:, 1 - f.direction] = s
            uh = field_at(P, res.u[off[k]:off[k + 1]], e)
            gh = field_at(P, g[k], e)
            assert np.abs(uh - gh).max() <= 1e-7
    # multiplier: A u + B^T lambda = f
    r = sys.A @ res.u + sys.Bt @ res.lam - sys.f
    assert np.linalg.norm(r) <= 1e-6 * np.linalg.norm(sys.f)


def test_csv_roundtrip(tmp_path):
    rows = driver.run_experiment([driver.RunConfig(preset="square-2patch", n_el=2, variant=v)
                                  for v in ("exact-nr", "inexact-nr")], tmp_path / "r.csv")
    back = driver.read_csv(tmp_path / "r.csv")
    assert [replace(r, seconds=0.0) for r in back] == [replace(r, seconds=0.0) for r in rows]
    assert all(abs(a.seconds - b.seconds) <= 1e-6 for a, b in zip(back, rows))
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "preset,p,n_el,n_patch,variant,iters,relres,l2_err,h1_err,seconds"


def test_sweep_configs_grid():
    cfgs = driver.sweep_configs(driver.RunConfig(preset="parallelepiped-nc", n_el=2), p_values=[1, 2, 3, 4],
                                variants=["exact-nr", "inexact-nr"])
    assert len(cfgs) == 8
    assert [c.variant for c in cfgs[:2]] == ["exact-nr", "inexact-nr"]


def test_config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[problem]\npreset = square-2patch-nc\np = 3\n[solver]\nvariant = geo-s\ntol = 1e-9\n"
                    "[sweep]\nn_el = 2, 4\nvariants = exact-nr inexact-nr\n")
    cfg, sweep = driver.load_config(path)
    assert (cfg.preset, cfg.p, cfg.variant, cfg.tol) == ("square-2patch-nc", 3, "geo-s", 1e-9)
    assert sweep == {"n_el": [2, 4], "variants": ["exact-nr", "inexact-nr"]}
    path.write_text("[problem]\npresett = square-2patch\n")
    with pytest.raises(ValueError):
        driver.load_config(path)
    path.write_text("[extras]\na = 1\n")
    with pytest.raises(ValueError):
        driver.load_config(path)
    with pytest.raises(ValueError):
        driver.RunConfig(variant="gmres")


def test_cli_exit_codes(tmp_path, capsys):
    csv = tmp_path / "out.csv"
    assert cli.main(["solve", "--preset", "square-2patch", "--n-el", "2", "--csv", str(csv)]) == 0
    assert driver.read_csv(csv)[0].preset == "square-2patch"
    assert cli.main(["solve", "--preset", "square-2patch", "--max-iter", "2"]) == 2
    assert cli.main(["solve", "--preset", "cube-scal", "--n-patch", "5"]) == 1
    assert cli.main(["verify", "--preset", "square-2patch-nc", "--n-el", "2"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out
    cfg = tmp_path / "c.ini"
    cfg.write_text("[problem]\npreset = square-2patch\nn_el = 2\n[sweep]\nvariants = exact-nr,geo-nr\n")
    assert cli.main(["sweep", "--config", str(cfg)]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 3


def test_geometry_file_problem(tmp_path):
    from afieti.geometry import save_multipatch
    prob = driver.preset("distorted-2patch", p=2, n_el=2)
    save_multipatch(prob.mp, tmp_path / "g.txt")
    a = driver.run_experiment(driver.RunConfig(geometry=str(tmp_path / "g.txt"), variant="exact-nr"))[0]
    b = driver.run_experiment(driver.RunConfig(preset="distorted-2patch", p=2, n_el=2, variant="exact-nr"))[0]
    assert (a.iters, a.l2_err) == (b.iters, b.l2_err)
