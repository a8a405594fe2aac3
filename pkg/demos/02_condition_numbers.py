"""Condition number of the preconditioned saddle operator under h-refinement.

The patch size H is fixed and h = H / n_el shrinks; the growth should be
no worse than polylogarithmic in H/h.
"""
import numpy as np

from afieti import driver
from afieti.ieti import Preconditioner, spectral_probe


def main(p=2, levels=(4, 8, 16)):
    print("%-6s %-11s %9s %9s %9s" % ("H/h", "variant", "lam_min", "lam_max", "kappa"))
    for n_el in levels:
        prob = driver.preset("square-2patch", p=p, n_el=n_el)
        sys = driver.build_system(prob)
        for v in ("exact-nr", "inexact-nr", "geo-nr"):
            r = spectral_probe(sys, Preconditioner(sys, v))
            print("%-6d %-11s %9.4f %9.4f %9.3f" % (n_el, v, r.eig_min, r.eig_max, r.kappa))
    print("reference growth (1 + log H/h)^2:", ["%.2f" % (1 + np.log(n)) ** 2 for n in levels])


if __name__ == "__main__":
    main()
