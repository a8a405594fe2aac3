"""Iteration counts on the non-conforming parallelepiped for degrees 1 to 4.

Three stacked unit cubes refined by factors 1, 2 and 4; all boundaries
are clamped.  Writes ``parallelepiped.csv`` next to the working directory.
"""
from afieti import driver


def main(n_el=2, csv_path="parallelepiped.csv"):
    base = driver.RunConfig(preset="parallelepiped-nc", n_el=n_el)
    cfgs = driver.sweep_configs(base, p_values=[1, 2, 3, 4], variants=["exact-nr", "inexact-nr", "geo-nr"])
    rows = driver.run_experiment(cfgs, csv_path)
    print("%2s %-11s %6s %10s %8s" % ("p", "variant", "iters", "L2 error", "seconds"))
    for r in rows:
        print("%2d %-11s %6d %10.3e %8.2f" % (r.p, r.variant, r.iters, r.l2_err, r.seconds))


if __name__ == "__main__":
    main()
