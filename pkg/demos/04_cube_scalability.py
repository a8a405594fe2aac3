"""Weak scalability: the unit cube split into N^3 patches of fixed size.

Neumann data on x = 0 and x = 1, clamped elsewhere.  Iteration counts
should stay nearly flat as the number of patches grows.
"""
from afieti import driver


def main(p=2, n_el=4, counts=(8, 27)):
    print("%7s %-11s %6s %8s" % ("patches", "variant", "iters", "seconds"))
    for n_patch in counts:
        prob = driver.preset("cube-scal", p=p, n_el=n_el, n_patch=n_patch)
        sys = driver.build_system(prob)
        for v in ("exact-nr", "inexact-nr"):
            r = driver.solve_problem(prob, v, system=sys).row
            print("%7d %-11s %6d %8.2f" % (n_patch, v, r.iters, r.seconds))


if __name__ == "__main__":
    main()
