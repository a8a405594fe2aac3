"""Solve the conforming two-patch square with every preconditioner variant.

Each AF-IETI solution is compared with the direct solve of the globally
constrained system, and the discretization error against the manufactured
solution is printed.
"""
import numpy as np

from afieti import driver
from afieti.ieti import VARIANTS


def main(p=2, n_el=8):
    prob = driver.preset("square-2patch", p=p, n_el=n_el)
    sys = driver.build_system(prob)
    u_direct = driver.monolithic_solve(sys)
    print("square-2patch  p=%d  n_el=%d  dofs=%d  multipliers=%d" % (p, n_el, sys.N, sys.N_c))
    print("%-11s %6s %12s %12s %12s" % ("variant", "iters", "rel.res", "vs direct", "L2 error"))
    for v in VARIANTS:
        res = driver.solve_problem(prob, v, system=sys)
        diff = np.linalg.norm(res.u - u_direct) / np.linalg.norm(u_direct)
        print("%-11s %6d %12.2e %12.2e %12.3e" % (v, res.row.iters, res.row.relres, diff, res.row.l2_err))


if __name__ == "__main__":
    main()
