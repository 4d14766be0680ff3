"""Small-time decay of weighted sup and L^q norms for one solved datum.

Fits the domination constants on a separate training datum before checking.

    python scripts/decay_scans.py --n 32 --amplitude 0.05
"""
import argparse
import json
import math

from mildns import TimeMesh, derive_constants, existence_time, make_datum, picard_solve
from mildns.diagnostics import fit_domination_constants, limit_scan, lq_decay_scan
from mildns.fields import GridSpec


def solve(u, const, mesh):
    res, _ = picard_solve(u, existence_time(u, const), mesh, tol=1e-10)
    if not res.converged:
        raise SystemExit(f"solve did not converge: {res.status}")
    return res


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--M", type=int, default=64)
    ap.add_argument("--amplitude", type=float, default=0.05)
    ap.add_argument("--halvings", type=int, default=3)
    ap.add_argument("--out", default="scans.json")
    args = ap.parse_args()

    const = derive_constants()
    grid = GridSpec(args.n, 2 * math.pi)
    scale = grid.extent / 16
    mesh = TimeMesh.graded(scale**2 / 32, args.M)
    res = solve(make_datum("curl_gaussian", args.amplitude, scale, grid), const, mesh)
    train = solve(make_datum("curl_gaussian", 0.08, 0.85 * scale, grid, axis=(1.0, 0.0, 0.0)), const, mesh)
    fitted = fit_domination_constants([train], min_halvings=args.halvings)

    scans = limit_scan(res, args.halvings) + lq_decay_scan(res, constants=fitted, min_halvings=args.halvings)
    for sc in scans:
        dom = "" if sc.dominated is None else f"  dominated={sc.dominated}"
        print(f"{sc.name:26s} slope {sc.slope:+.3f}  {sc.verdict}{dom}")
    with open(args.out, "w") as fh:
        json.dump([sc.to_dict() for sc in scans], fh, indent=2)


if __name__ == "__main__":
    main()
