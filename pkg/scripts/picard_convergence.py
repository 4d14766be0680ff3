"""Picard increments, their ratios, and the majorant bound for a few amplitudes.

    python scripts/picard_convergence.py --amplitudes 0.05 0.15 0.2 --M 32
"""
import argparse
import csv
import math
import warnings

from mildns import TimeMesh, derive_constants, existence_time, make_datum, picard_solve
from mildns.fields import GridSpec
from mildns.picard import mild_residual, theoretical_bound, verify_iteration_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--M", type=int, default=64)
    ap.add_argument("--amplitudes", type=float, nargs="+", default=[0.05, 0.15, 0.2])
    ap.add_argument("--t-final", type=float, default=None, help="default: scale^2 / 4")
    ap.add_argument("--tol", type=float, default=1e-10)
    ap.add_argument("--out", default="picard.csv")
    args = ap.parse_args()

    const = derive_constants()
    grid = GridSpec(args.n, 2 * math.pi)
    scale = grid.extent / 16
    t_final = scale**2 / 4 if args.t_final is None else args.t_final
    rows = []
    for amp in args.amplitudes:
        u = make_datum("curl_gaussian", amp, scale, grid)
        cert = existence_time(u, const)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            res, trace = picard_solve(u, cert, TimeMesh.graded(t_final, args.M), tol=args.tol)
        for w in caught:
            print(f"  warning: {w.message}")
        report = verify_iteration_bound(trace, cert)
        # ratios start at w^2 / w^1
        ratios = [math.nan, math.nan, *trace.ratios()]
        for rec, ratio in zip(trace.records, ratios):
            bound = theoretical_bound(rec.m, const.c1, trace.A)
            rows.append([amp, rec.m, rec.w.value, ratio, bound, rec.u.value])
        resid = mild_residual(res).value if res.converged else math.nan
        print(f"amp {amp:5.3f}  T {cert.T:.3e}  {res.status} at m={res.iterations}  "
              f"bound check {report.status} (slack {report.slack:.2f})  residual {resid:.2e}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["amplitude", "m", "increment", "ratio", "theoretical_bound", "iterate_norm"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
