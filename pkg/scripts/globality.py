"""Integrate small data far past their nominal existence time.

    python scripts/globality.py --amplitudes 0.05 0.08 --factor 10
"""
import argparse
import math

from mildns import make_datum
from mildns.diagnostics import globality_run
from mildns.fields import GridSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--M", type=int, default=64)
    ap.add_argument("--amplitudes", type=float, nargs="+", default=[0.05, 0.08])
    ap.add_argument("--factor", type=float, default=10.0)
    args = ap.parse_args()

    grid = GridSpec(args.n, 2 * math.pi)
    for amp in args.amplitudes:
        u = make_datum("curl_gaussian", amp, grid.extent / 16, grid)
        try:
            rep, _ = globality_run(u, factor=args.factor, M=args.M)
        except ValueError as exc:
            print(f"amp {amp:5.3f}  skipped: {exc}")
            continue
        print(f"amp {amp:5.3f}  margin {rep.margin:.3f}  horizon {rep.horizon:.3e}  "
              f"max |U|_3/|U0|_3 {rep.l3_ratio:.4f}  tail decreasing {rep.tail_decreasing}  "
              f"{'PASS' if rep.passed else 'FAIL'}")


if __name__ == "__main__":
    main()
