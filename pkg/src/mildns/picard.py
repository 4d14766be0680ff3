"""Successive approximations ``U^m = H*U0 - N(U^(m-1), U^(m-1))`` with contraction tracking."""
from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certificate import Certificate
from .fields import GridSpec, Trajectory, VelocityField, max_divergence_ratio
from .kernels import TimeMesh, heat_trajectory, nonlinear_history, pressure_samples
from .norms import NormTriple, triple_norm
from .snapshot import load_field, save_field

log = logging.getLogger(__name__)

GROWTH_LIMIT = 3


@dataclass(frozen=True)
class IterationRecord:
    m: int
    u: NormTriple
    w: NormTriple
    bound: float | None
    wall_time: float

    def to_dict(self) -> dict:
        return {"m": self.m, "u": self.u.to_dict(), "w": self.w.to_dict(), "bound": self.bound, "wall_time": self.wall_time}


@dataclass
class IterationTrace:
    """Per-iterate triple norms of ``U^m`` and ``w^m = U^m - U^(m-1)`` (``w^0 = U^0``).

    ``bound`` is ``2^(m-1) c1^m A^(m+1)`` for ``m >= 1`` and ``A`` for ``m = 0``.
    """

    mesh: dict
    rho: float
    A: float | None
    c1: float
    records: list = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        if self.records and record.m != self.records[-1].m + 1:
            raise ValueError("iterations must be appended in order")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def increments(self) -> np.ndarray:
        return np.array([r.w.value for r in self.records])

    def ratios(self) -> np.ndarray:
        """``|||w^(m+1)||| / |||w^m|||`` for ``m >= 1``."""
        w = self.increments()[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(w[:-1] > 0, w[1:] / np.where(w[:-1] > 0, w[:-1], 1.0), 0.0)

    def to_dict(self, include_wall_time: bool = True) -> dict:
        recs = [r.to_dict() for r in self.records]
        if not include_wall_time:
            for r in recs:
                r.pop("wall_time")
        return {"mesh": self.mesh, "rho": self.rho, "A": self.A, "c1": self.c1, "iterations": recs}

    @classmethod
    def from_dict(cls, d: dict) -> "IterationTrace":
        trace = cls(d["mesh"], d["rho"], d["A"], d["c1"])
        for r in d["iterations"]:
            u = {k: v for k, v in r["u"].items() if k != "value"}
            w = {k: v for k, v in r["w"].items() if k != "value"}
            trace.append(IterationRecord(r["m"], NormTriple(**u), NormTriple(**w), r["bound"], r.get("wall_time", 0.0)))
        return trace


def theoretical_bound(m: int, c1: float, A: float | None) -> float | None:
    if A is None:
        return None
    if m == 0:
        return A
    return 2.0 ** (m - 1) * c1**m * A ** (m + 1)


@dataclass
class SolveResult:
    trajectory: Trajectory
    pressure: np.ndarray
    mesh: TimeMesh
    iterations: int
    converged: bool
    diverged: bool
    final_increment: float
    rho: float
    tol: float
    certificate: Certificate | None
    out_of_certificate: bool
    status: str

    @property
    def grid(self) -> GridSpec:
        return self.trajectory.grid

    @property
    def datum(self) -> VelocityField:
        return VelocityField(self.grid, self.trajectory.initial, 0.0)

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "diverged": self.diverged,
            "final_increment": self.final_increment,
            "rho": self.rho,
            "tol": self.tol,
            "out_of_certificate": self.out_of_certificate,
            "status": self.status,
            "mesh": self.mesh.descriptor(),
        }


def _pressure_history(traj: Trajectory) -> np.ndarray:
    return np.stack([pressure_samples(traj.samples[j], traj.grid) for j in range(len(traj))])


def _difference(a: Trajectory, b: Trajectory) -> Trajectory:
    return Trajectory(a.grid, a.times, a.samples - b.samples, initial=a.initial - b.initial)


def picard_solve(
    datum: VelocityField,
    certificate: Certificate | None,
    mesh: TimeMesh,
    tol: float = 1e-8,
    max_m: int = 20,
    rho: float | None = None,
    order: int = 2,
    c1: float | None = None,
) -> tuple[SolveResult, IterationTrace]:
    """Iterate until ``|||w^m|||_(t_final, rho) <= tol`` or ``m = max_m``.

    ``rho`` defaults to the certificate's best radius.  Runs past the
    certified time are allowed and labelled.  Growth of the increment over
    ``GROWTH_LIMIT`` consecutive steps, or a non-finite norm, stops the run as
    diverged.
    """
    if tol < 0 or max_m < 1:
        raise ValueError("need tol >= 0 and max_m >= 1")
    ratio = max_divergence_ratio(datum)
    if ratio > 1e-8:
        raise ValueError(f"datum is not divergence-free (ratio {ratio:.2e})")
    grid = datum.grid
    if rho is None:
        rho = certificate.rho_star if certificate is not None and certificate.rho_star else 0.5 * grid.extent
    out_of_cert = certificate is not None and mesh.t_final > certificate.T
    if out_of_cert:
        warnings.warn(f"t_final {mesh.t_final:.3e} exceeds certified T {certificate.T:.3e}", RuntimeWarning, stacklevel=2)
    if c1 is None:
        c1 = certificate.constants.c1 if certificate is not None else 1.0
    A = None
    if certificate is not None and certificate.rho_star is not None:
        try:
            A = certificate.majorant(mesh.t_final, rho)
        except KeyError:
            A = None

    trace = IterationTrace(mesh.descriptor(), float(rho), A, float(c1))
    start = time.perf_counter()
    heat = heat_trajectory(datum, mesh)
    u_norm = triple_norm(heat, rho)
    trace.append(IterationRecord(0, u_norm, u_norm, theoretical_bound(0, c1, A), time.perf_counter() - start))

    current = heat
    converged = diverged = False
    growth = 0
    m = 0
    w_value = u_norm.value
    for m in range(1, max_m + 1):
        start = time.perf_counter()
        N = nonlinear_history(current, current, mesh, order=order, check_solenoidal=(m == 1))
        nxt = Trajectory(grid, mesh.nodes, heat.samples - N.samples, initial=datum.samples)
        w_norm = triple_norm(_difference(nxt, current), rho)
        u_norm = triple_norm(nxt, rho)
        trace.append(IterationRecord(m, u_norm, w_norm, theoretical_bound(m, c1, A), time.perf_counter() - start))
        log.info("picard m=%d |||U|||=%.6e |||w|||=%.6e", m, u_norm.value, w_norm.value)
        if not (math.isfinite(w_norm.value) and math.isfinite(u_norm.value)):
            diverged = True
            current = nxt
            break
        growth = growth + 1 if m > 1 and w_norm.value > w_value else 0
        w_value = w_norm.value
        current = nxt
        if w_value <= tol:
            converged = True
            break
        if growth >= GROWTH_LIMIT:
            diverged = True
            break

    if converged:
        status = "converged"
    elif diverged:
        status = "diverged"
    else:
        status = "max_m reached"
    finite = np.all(np.isfinite(current.samples))
    pressure = _pressure_history(current) if finite else np.full((mesh.M,) + (grid.n,) * 3, np.nan)
    result = SolveResult(
        trajectory=current,
        pressure=pressure,
        mesh=mesh,
        iterations=m,
        converged=converged,
        diverged=diverged,
        final_increment=float(w_value),
        rho=float(rho),
        tol=float(tol),
        certificate=certificate,
        out_of_certificate=out_of_cert,
        status=status,
    )
    return result, trace


@dataclass(frozen=True)
class BoundCheck:
    m: int
    u_ratio: float
    w_ratio: float | None
    passed: bool


@dataclass(frozen=True)
class BoundReport:
    status: str
    slack: float
    allowed_slack: float
    checks: tuple

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "passed": self.passed,
            "slack": self.slack,
            "allowed_slack": self.allowed_slack,
            "checks": [vars(c) for c in self.checks],
        }


def _ratio(value: float, bound: float) -> float:
    if value == 0:
        return 0.0
    return value / bound if bound > 0 else math.inf


def verify_iteration_bound(trace: IterationTrace, certificate: Certificate | None = None, allowed_slack: float = 1.0) -> BoundReport:
    """Compare ``|||U^m|||`` with ``A`` and ``|||w^m|||`` with ``2^(m-1) c1^m A^(m+1)``.

    ``slack`` is the largest measured/theoretical ratio.  A trace whose
    majorant is undefined (criterion violated) is reported as out of range.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    A = trace.A
    if certificate is not None and certificate.rho_star is not None:
        A = certificate.majorant(trace.mesh["t_final"], trace.rho)
    if A is None:
        return BoundReport("criterion-out-of-range", math.nan, allowed_slack, ())
    checks = []
    for r in trace.records:
        u_ratio = _ratio(r.u.value, A)
        w_ratio = None if r.m == 0 else _ratio(r.w.value, theoretical_bound(r.m, trace.c1, A))
        worst = max(u_ratio, w_ratio or 0.0)
        checks.append(BoundCheck(r.m, u_ratio, w_ratio, worst <= allowed_slack))
    slack = max(max(c.u_ratio, c.w_ratio or 0.0) for c in checks)
    status = "pass" if all(c.passed for c in checks) else "fail"
    return BoundReport(status, slack, allowed_slack, tuple(checks))


def mild_residual(result: SolveResult, order: int = 2) -> NormTriple:
    """Triple norm of ``U - H*U0 + N(U, U)`` on the solver's mesh."""
    U = result.trajectory
    heat = heat_trajectory(result.datum, result.mesh)
    N = nonlinear_history(U, U, result.mesh, order=order, check_solenoidal=False)
    resid = Trajectory(U.grid, U.times, U.samples - heat.samples + N.samples, initial=np.zeros_like(U.initial))
    return triple_norm(resid, result.rho)


def save_result(result: SolveResult, trace: IterationTrace, directory) -> Path:
    """Write snapshots ``u_0000.mnsf`` (datum) .. ``u_MMMM.mnsf``, ``pressure.npy`` and JSON."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_field(out / "u_0000.mnsf", result.datum)
    for j in range(len(result.trajectory)):
        save_field(out / f"u_{j + 1:04d}.mnsf", result.trajectory.at(j))
    np.save(out / "pressure.npy", result.pressure)
    meta = result.summary()
    meta["mesh_nodes"] = result.mesh.nodes.tolist()
    meta["certificate"] = result.certificate.to_dict() if result.certificate is not None else None
    (out / "result.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out / "trace.json").write_text(json.dumps(trace.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def load_result(directory) -> tuple[SolveResult, IterationTrace]:
    src = Path(directory)
    meta = json.loads((src / "result.json").read_text())
    nodes = np.array(meta["mesh_nodes"])
    md = meta["mesh"]
    mesh = TimeMesh(md["t_final"], nodes, md["gamma"])
    datum = load_field(src / "u_0000.mnsf")
    samples = np.stack([load_field(src / f"u_{j + 1:04d}.mnsf").samples for j in range(nodes.size)])
    traj = Trajectory(datum.grid, nodes, samples, initial=datum.samples)
    cert = Certificate.from_dict(meta["certificate"]) if meta["certificate"] is not None else None
    result = SolveResult(
        trajectory=traj,
        pressure=np.load(src / "pressure.npy"),
        mesh=mesh,
        iterations=meta["iterations"],
        converged=meta["converged"],
        diverged=meta["diverged"],
        final_increment=meta["final_increment"],
        rho=meta["rho"],
        tol=meta["tol"],
        certificate=cert,
        out_of_certificate=meta["out_of_certificate"],
        status=meta["status"],
    )
    trace = IterationTrace.from_dict(json.loads((src / "trace.json").read_text()))
    return result, trace
