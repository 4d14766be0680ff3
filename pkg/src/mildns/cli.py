"""``mildns`` command line: certify, solve, audit, scan, unique, gen.

Exit codes: 0 pass, 2 configuration error, 3 nonconvergence or violated check.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics
from .certificate import existence_time
from .config import ConfigError, RunConfig
from .fields import make_datum
from .kernels import TimeMesh
from .picard import picard_solve, save_result, verify_iteration_bound
from .snapshot import save_field

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAIL = 3

log = logging.getLogger("mildns")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_report(cfg: RunConfig, name: str, body: dict, wall_time: float) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "command": name,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "constants": cfg.constants_obj().to_dict(),
        **body,
        "wall_time": wall_time,
    }
    path = out / f"{name}.json"
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_certify(cfg: RunConfig) -> int:
    start = time.perf_counter()
    datum = cfg.make_datum()
    cert = existence_time(datum, cfg.constants_obj(), cfg.rho_ladder(), refine=cfg.ladder.refine)
    path = _write_report(cfg, "certify", {"certificate": cert.to_dict()}, time.perf_counter() - start)
    _write_csv(
        Path(cfg.output) / "datum_norms.csv",
        ["rho", "localized_l3", "t_of_rho"],
        [[r, v, t] for r, v, t in zip(cert.datum_norms.rhos, cert.datum_norms.localized, cert.t_of_rho)],
    )
    print(f"T = {cert.T:.6e}  rho* = {cert.rho_star}  global = {cert.global_flag}  [{cert.status}]  -> {path}")
    return EXIT_OK if cert.T > 0 else EXIT_FAIL


def cmd_solve(cfg: RunConfig) -> int:
    start = time.perf_counter()
    datum = cfg.make_datum()
    cert = existence_time(datum, cfg.constants_obj(), cfg.rho_ladder(), refine=cfg.ladder.refine)
    mesh = TimeMesh.graded(cfg.t_final(), cfg.mesh.M, cfg.mesh.gamma)
    result, trace = picard_solve(datum, cert, mesh, tol=cfg.solver.tol, max_m=cfg.solver.max_m, order=cfg.solver.order)
    directory = save_result(result, trace, Path(cfg.output) / "solution")
    bound = verify_iteration_bound(trace, cert)
    body = {"result": result.summary(), "trace": trace.to_dict(include_wall_time=False), "bound_check": bound.to_dict()}
    _write_report(cfg, "solve", body, time.perf_counter() - start)
    print(f"{result.status} after m = {result.iterations}, final increment {result.final_increment:.3e} -> {directory}")
    return EXIT_OK if result.converged else EXIT_FAIL


def cmd_audit(cfg: RunConfig) -> int:
    start = time.perf_counter()
    a = cfg.audit
    if not a.train_seeds or not a.test_seeds:
        raise ConfigError("audit families must be nonempty")
    grid = cfg.grid_spec()
    train = diagnostics.DatumFamily(grid, tuple(a.train_seeds), tuple(a.amplitude), "train")
    test = diagnostics.DatumFamily(grid, tuple(a.test_seeds), tuple(a.amplitude), "test")
    lemmas = tuple(a.lemmas) if a.lemmas else diagnostics.LEMMAS
    try:
        report = diagnostics.estimate_audit(
            train, test, lemmas=lemmas, constants=cfg.constants_obj(), M=a.M, theta=a.theta, n_pairs=a.n_pairs
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    body = {"passed": report.passed, "constants_fitted": report.constants, "summary": report.summary(), "settings": report.settings}
    _write_report(cfg, "audit", body, time.perf_counter() - start)
    header = ["lemma", "datum_id", "split", "rho", "t", "lhs", "rhs_base", "constant", "rhs", "margin", "passed"]
    _write_csv(
        Path(cfg.output) / "audit_rows.csv",
        header,
        [[r.lemma, r.datum_id, r.split, r.rho, r.t, r.lhs, r.rhs_base, r.constant, r.rhs, r.margin, r.passed] for r in report.rows],
    )
    for lemma, s in report.summary().items():
        print(f"{lemma:7s} c={s['constant']:.4g} rows={s['rows']:4d} {'PASS' if s['passed'] else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_scan(cfg: RunConfig) -> int:
    start = time.perf_counter()
    constants = cfg.constants_obj()
    grid = cfg.grid_spec()
    mesh = TimeMesh.graded(cfg.t_final(), cfg.mesh.M, cfg.mesh.gamma)
    datum = cfg.make_datum()
    cert = existence_time(datum, constants, cfg.rho_ladder())
    result, _ = picard_solve(datum, cert, mesh, tol=cfg.solver.tol, max_m=cfg.solver.max_m)
    s = cfg.scan
    train = make_datum("curl_gaussian", s.train_amplitude, s.train_scale_factor * cfg.datum_scale(), grid, axis=tuple(s.train_axis))
    tcert = existence_time(train, constants, cfg.rho_ladder())
    tres, _ = picard_solve(train, tcert, mesh, tol=cfg.solver.tol, max_m=cfg.solver.max_m)
    fitted = diagnostics.fit_domination_constants([tres], tuple(s.q_list), s.min_halvings)
    limits = diagnostics.limit_scan(result, s.min_halvings)
    decays = diagnostics.lq_decay_scan(result, tuple(s.q_list), fitted, s.min_halvings)
    ok = all(sc.verdict == "vanishing" for sc in limits + decays) and all(sc.dominated for sc in decays)
    body = {
        "passed": ok,
        "converged": result.converged,
        "fitted_constants": {f"q={q},order={o}": c for (q, o), c in fitted.items()},
        "limit_scans": [sc.to_dict() for sc in limits],
        "lq_scans": [sc.to_dict() for sc in decays],
    }
    _write_report(cfg, "scan", body, time.perf_counter() - start)
    for sc in limits + decays:
        print(f"{sc.name:26s} slope={sc.slope:+.3f} {sc.verdict}" + ("" if sc.dominated is None else f" dominated={sc.dominated}"))
    return EXIT_OK if ok and result.converged else EXIT_FAIL


def cmd_unique(cfg: RunConfig) -> int:
    start = time.perf_counter()
    datum = cfg.make_datum()
    u = cfg.unique
    a = diagnostics.SolverConfig(cfg.t_final(), cfg.mesh.M, cfg.mesh.gamma, cfg.solver.tol, cfg.solver.max_m, cfg.solver.order)
    b = diagnostics.SolverConfig(
        cfg.t_final(),
        u.M_b if u.M_b is not None else 2 * cfg.mesh.M,
        u.gamma_b if u.gamma_b is not None else cfg.mesh.gamma,
        u.tol_b if u.tol_b is not None else cfg.solver.tol,
        cfg.solver.max_m,
        cfg.solver.order,
    )
    try:
        report = diagnostics.uniqueness_check(datum, a, b, cfg.constants_obj(), u.budget_factor)
    except RuntimeError as exc:
        print(f"nonconvergent: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _write_report(cfg, "unique", {"report": report.to_dict()}, time.perf_counter() - start)
    print(f"gap {report.gap:.3e}  budget {report.budget:.3e}  {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_gen(cfg: RunConfig) -> int:
    datum = cfg.make_datum()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    path = save_field(out / "datum.mnsf", datum, {"config_hash": cfg.hash(), "datum": cfg.to_dict()["datum"]})
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "solve": cmd_solve,
    "audit": cmd_audit,
    "scan": cmd_scan,
    "unique": cmd_unique,
    "gen": cmd_gen,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mildns", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", ""))
        p.add_argument("-c", "--config", help="JSON run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. --set datum.amplitude=0.1")
        p.add_argument("-o", "--output", help="output directory (overrides config)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        overrides = list(args.overrides) + ([f"output={json.dumps(args.output)}"] if args.output else [])
        cfg = cfg.with_overrides(overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
