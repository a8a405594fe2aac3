"""Command line interface: ``afieti solve | sweep | verify``.

Exit status is 0 when every solve converges, 2 when any solve stops
without converging and 1 on errors.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import driver
from .errors import AfietiError
from .ieti import VARIANTS, Preconditioner
from .geometry import interface_mismatch

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def _int_list(s):
    return [int(x) for x in s.replace(",", " ").split()]


def _str_list(s):
    return [x for x in s.replace(",", " ").split()]


def _parser():
    ap = argparse.ArgumentParser(prog="afieti", description="All-floating IETI solver for multi-patch IGA elasticity")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--preset", choices=driver.PRESETS)
    common.add_argument("--geometry", help="multipatch geometry file (overrides --preset)")
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iter", type=int)
    common.add_argument("--csv", help="write result rows to this CSV file")
    common.add_argument("--seed", type=int)
    common.add_argument("--p", type=int, help="spline degree")
    common.add_argument("--n-el", type=int, help="elements per direction (coarsest patch)")
    common.add_argument("--n-patch", type=int, help="number of patches (cube-scal only)")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="run one configuration")
    sw = sub.add_parser("sweep", parents=[common], help="run a grid of configurations")
    sw.add_argument("--ps", type=_int_list, help="degrees, e.g. 1,2,3")
    sw.add_argument("--n-els", type=_int_list, help="refinements, e.g. 2,4")
    sw.add_argument("--n-patches", type=_int_list, help="patch counts (cube-scal)")
    sw.add_argument("--variants", type=_str_list, help="variant names")
    sub.add_parser("verify", parents=[common], help="run invariant checks and oracles on a small problem")
    return ap


def _config(args):
    if args.config:
        cfg, sweep = driver.load_config(args.config)
    else:
        cfg, sweep = driver.RunConfig(), {}
    over = {k: getattr(args, k) for k in ("preset", "geometry", "variant", "tol", "max_iter", "csv", "seed",
                                          "p", "n_el", "n_patch")}
    cfg = replace(cfg, **{k: v for k, v in over.items() if v is not None})
    return cfg, sweep


def _print_rows(rows, out):
    out.write(",".join(driver.CSV_COLUMNS) + "\n")
    for r in rows:
        out.write(",".join(r.as_csv()) + ("" if r.converged else "  # not converged") + "\n")


def _verify(cfg, out):
    """Invariant checks on one problem; returns the number of failures."""
    rng = np.random.default_rng(cfg.seed)
    prob = cfg.problem()
    sysm = driver.build_system(prob)
    prec = Preconditioner(sysm, cfg.variant)
    checks = []

    mism = max([interface_mismatch(prob.mp, it) for it in prob.mp.interfaces], default=0.0)
    checks.append(("interface coincidence", mism, 1e-10))
    normA = max(np.sqrt((m.A.multiply(m.A)).sum()) for m in sysm.mats)
    checks.append(("rigid modes in ker(A)", float(np.abs(sysm.A @ sysm.R.toarray()).max()) / normA, 1e-10))
    p = sysm.proj
    v = rng.standard_normal(sysm.N_c)
    checks.append(("P_chi idempotent", float(np.linalg.norm(p.apply_P_chi(p.apply_P_chi(v)) - p.apply_P_chi(v))
                                              / np.linalg.norm(v)), 1e-11))
    w = rng.standard_normal(sysm.N)
    checks.append(("P_u idempotent", float(np.linalg.norm(p.apply_P_u(p.apply_P_u(w)) - p.apply_P_u(w))
                                           / np.linalg.norm(w)), 1e-11))
    lam0 = p.initial_multiplier(sysm.f)
    rtf = sysm.R.T @ sysm.f
    checks.append(("G^T lambda0 = R^T f", float(np.linalg.norm(p.G.T @ lam0 - rtf) / max(np.linalg.norm(rtf), 1e-300)),
                   1e-11))
    x, y = rng.standard_normal((2, sysm.size))
    a, b = y @ prec.apply(x), x @ prec.apply(y)
    checks.append(("preconditioner symmetric", abs(a - b) / max(abs(a), abs(b), 1e-300), 1e-10))

    res = driver.solve_problem(prob, cfg.variant, cfg.tol, cfg.max_iter, system=sysm)
    ud = driver.monolithic_solve(sysm)
    checks.append(("MINRES converged", 0.0 if res.report.converged else 1.0, 0.5))
    checks.append(("agreement with direct solve", float(np.linalg.norm(res.u - ud) / np.linalg.norm(ud)), 1e-6))
    checks.append(("constraint residual", float(np.abs(sysm.B @ res.u - sysm.cs.c).max()), 1e-7))

    fails = 0
    for name, val, tol in checks:
        ok = val <= tol
        fails += not ok
        out.write("%-4s %-30s %.3e (<= %.0e)\n" % ("PASS" if ok else "FAIL", name, val, tol))
    return fails


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg, sweep = _config(args)
        if args.command == "solve":
            rows = driver.run_experiment(cfg, cfg.csv)
        elif args.command == "sweep":
            cfgs = driver.sweep_configs(
                cfg,
                p_values=args.ps or sweep.get("p"),
                n_el_values=args.n_els or sweep.get("n_el"),
                n_patch_values=args.n_patches or sweep.get("n_patch"),
                variants=args.variants or sweep.get("variants"),
            )
            rows = driver.run_experiment(cfgs, cfg.csv)
        else:
            return EXIT_ERROR if _verify(cfg, sys.stdout) else EXIT_OK
    except (AfietiError, ValueError, OSError) as exc:
        sys.stderr.write("afieti: error: %s\n" % exc)
        return EXIT_ERROR
    _print_rows(rows, sys.stdout)
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
