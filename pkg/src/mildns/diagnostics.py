"""Numerical audits: small-time decay scans, estimate inequalities, uniqueness.

Estimate audits follow one protocol.  Each inequality is written as
``lhs <= c * rhs``.  Where the constant is known exactly it is used as is;
otherwise ``c`` is fitted as ``FIT_SAFETY`` times the largest ratio on a
training family, then checked on a disjoint test family.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import spectral
from .certificate import Certificate, Constants, derive_constants, existence_time, global_margin
from .fields import GridSpec, Trajectory, VelocityField, random_datum, spectral_derivatives
from .kernels import TimeMesh, heat_trajectory, nonlinear_history, oseen_point_eval, pressure_samples
from .norms import (
    holder_quotient_array,
    localized_of_magnitude,
    lq_of_magnitude,
    magnitude,
    triple_norm,
)
from .picard import SolveResult, picard_solve

FIT_SAFETY = 1.25
ROUNDOFF = 1e-12


# --- small-time scans ------------------------------------------------------------

def mu_exponent(q: float) -> float:
    """``(q - 3) / (2q)``, with the ``q = inf`` limit ``1/2``."""
    return 0.5 if math.isinf(q) else (q - 3) / (2 * q)


def dyadic_ladder(times: np.ndarray, t_start: float, min_halvings: int = 3, max_halvings: int = 10) -> np.ndarray:
    """Node indices nearest to ``t_start / 2^k``, strictly decreasing in time."""
    targets = [t_start / 2**k for k in range(max_halvings + 1) if t_start / 2**k >= times[0]]
    picked: list[int] = []
    for target in targets:
        j = int(np.argmin(np.abs(np.log(times / target))))
        if not picked or times[j] < times[picked[-1]]:
            picked.append(j)
    if len(picked) < min_halvings + 1:
        raise ValueError(f"ladder too short: {len(picked)} levels, need {min_halvings + 1}")
    return np.array(picked)


@dataclass
class DecayScan:
    """Compensated quantity ``t^exponent * ||grad^order U(t)||_q`` on a dyadic ladder.

    ``slope`` is ``d log(value) / d log(1/t)``; negative means the quantity
    shrinks as ``t -> 0``.  ``rhs`` holds the fitted domination bound when one
    is checked.
    """

    name: str
    q: float
    order: int
    exponent: float
    times: np.ndarray
    values: np.ndarray
    slope: float
    verdict: str
    rhs: np.ndarray | None = None
    constant: float | None = None

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) < 0))

    @property
    def dominated(self) -> bool | None:
        if self.rhs is None:
            return None
        return bool(np.all(self.values <= self.rhs * (1 + ROUNDOFF)))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "q": "inf" if math.isinf(self.q) else self.q,
            "order": self.order,
            "exponent": self.exponent,
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "slope": None if math.isnan(self.slope) else self.slope,
            "verdict": self.verdict,
            "rhs": None if self.rhs is None else self.rhs.tolist(),
            "constant": self.constant,
            "dominated": self.dominated,
        }


def _derivative_magnitude(samples: np.ndarray, grid: GridSpec, order: int) -> np.ndarray:
    if order == 0:
        return magnitude(samples, 1)
    return magnitude(spectral_derivatives(samples, grid, order), 1 + order)


def _fit_slope(times: np.ndarray, values: np.ndarray) -> float:
    if np.any(values <= 0):
        return math.nan
    return float(np.polyfit(np.log(1 / times), np.log(values), 1)[0])


def _verdict(values: np.ndarray, slope: float, rhs: np.ndarray | None) -> str:
    if np.all(values == 0):
        return "vanishing"
    if np.all(np.diff(values) < 0) and slope < 0:
        return "vanishing"
    if rhs is not None and not np.all(values <= rhs * (1 + ROUNDOFF)):
        return "violated"
    return "bounded" if np.all(np.isfinite(values)) else "violated"


def _scan(traj: Trajectory, idx: np.ndarray, q: float, order: int, name: str, rhs_base=None, constant=None) -> DecayScan:
    times = traj.times[idx]
    exponent = mu_exponent(q) + order / 2
    norms = np.array([float(lq_of_magnitude(_derivative_magnitude(traj.samples[j], traj.grid, order), q, traj.grid)) for j in idx])
    values = times**exponent * norms
    slope = _fit_slope(times, values)
    rhs = None if rhs_base is None or constant is None else constant * rhs_base
    return DecayScan(name, q, order, exponent, times, values, slope, _verdict(values, slope, rhs), rhs, constant)


def _ladder_for(solve: SolveResult, min_halvings: int) -> np.ndarray:
    traj = solve.trajectory
    return dyadic_ladder(traj.times, 0.5 * traj.times[-1], min_halvings)


def limit_scan(solve: SolveResult, min_halvings: int = 3) -> list[DecayScan]:
    """``t^(1/2)||U||_inf``, ``t||grad U||_inf``, ``t^(3/2)||grad grad U||_inf`` toward ``t = 0``."""
    idx = _ladder_for(solve, min_halvings)
    names = ("t^1/2 |U|_inf", "t |grad U|_inf", "t^3/2 |grad grad U|_inf")
    return [_scan(solve.trajectory, idx, math.inf, order, names[order]) for order in range(3)]


def domination_rhs(l3: float, A: np.ndarray, q: float, order: int) -> np.ndarray:
    """Datum/majorant factor bounding ``t^(order/2 + mu) ||grad^order U||_q``."""
    base = A ** ((q - 3) / q)
    extra = {0: 0.0, 1: A**3, 2: A**6}[order]
    return l3 ** (3 / q) * (base + extra)


def _majorants(solve: SolveResult, times: np.ndarray) -> np.ndarray:
    cert = solve.certificate
    if cert is None or cert.rho_star is None:
        raise ValueError("decay scan needs a solve with a certificate")
    vals = [cert.majorant(float(t)) for t in times]
    return np.array([math.nan if v is None else v for v in vals])


def lq_decay_scan(
    solve: SolveResult, q_list=(4, 6, 12), constants: dict | None = None, min_halvings: int = 3
) -> list[DecayScan]:
    """Compensated ``L^q`` scans for orders 0, 1, 2.

    ``constants`` maps ``(q, order)`` to a fitted constant; when given, each
    scan also carries the domination bound ``c * domination_rhs``.
    """
    if solve.certificate is None:
        raise ValueError("missing certificate")
    idx = _ladder_for(solve, min_halvings)
    traj = solve.trajectory
    A = _majorants(solve, traj.times[idx])
    l3 = solve.certificate.datum_norms.l3
    scans = []
    for q in q_list:
        if q < 3:
            raise ValueError(f"q must be >= 3, got {q}")
        for order in range(3):
            c = None if constants is None else constants.get((q, order))
            rhs_base = domination_rhs(l3, A, q, order)
            scans.append(_scan(traj, idx, float(q), order, f"q={q} order={order}", rhs_base, c))
    return scans


def fit_domination_constants(solves, q_list=(4, 6, 12), min_halvings: int = 3) -> dict:
    """``FIT_SAFETY`` times the worst ratio to ``domination_rhs`` over training solves."""
    worst: dict = {}
    for solve in solves:
        for scan in lq_decay_scan(solve, q_list, None, min_halvings):
            A = _majorants(solve, scan.times)
            base = domination_rhs(solve.certificate.datum_norms.l3, A, scan.q, scan.order)
            ratio = float(np.max(scan.values / base)) if np.all(base > 0) else 0.0
            key = (int(scan.q), scan.order)
            worst[key] = max(worst.get(key, 0.0), ratio)
    return {k: FIT_SAFETY * v for k, v in worst.items()}


# --- estimate audit ------------------------------------------------------------------

EXACT = {"KR-I": 1.0, "LI-I0": 1.0, "CSLT0": 1.0}
LEMMAS = (
    "KR-I", "LI-I0", "LI-I", "GG1", "GG2", "LP-I",
    "NLII-I", "LII-I", "KR-II", "KW-I", "GLT", "GGLT", "GW", "GGW",
    "CSLT0", "CSLT", "HPU",
)
SOLUTION_LEMMAS = ("CSLT0", "CSLT", "HPU")


@dataclass
class AuditRow:
    lemma: str
    datum_id: str
    rho: float | None
    t: float | None
    lhs: float
    rhs_base: float
    constant: float | None = None
    split: str = "test"

    @property
    def rhs(self) -> float:
        return math.nan if self.constant is None else self.constant * self.rhs_base

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.margin >= -ROUNDOFF * max(self.rhs, self.lhs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(rhs=self.rhs, margin=self.margin, passed=self.passed)
        return d


@dataclass(frozen=True)
class DatumFamily:
    """Random solenoidal data ``random_datum(grid, default_rng(seed))`` for each seed."""

    grid: GridSpec
    seeds: tuple
    amplitude: tuple = (0.02, 0.1)
    label: str = "family"

    def pairs(self):
        for seed in self.seeds:
            rng = np.random.default_rng(seed)
            a = random_datum(self.grid, rng, amplitude=self.amplitude)
            b = random_datum(self.grid, rng, amplitude=self.amplitude)
            yield f"{self.label}:{seed}", a, b


@dataclass
class AuditReport:
    rows: list
    constants: dict
    lemmas: tuple
    settings: dict = field(default_factory=dict)

    def by_lemma(self) -> dict:
        out: dict = {}
        for r in self.rows:
            if r.split == "test":
                out.setdefault(r.lemma, []).append(r)
        return out

    def lemma_passed(self, lemma: str) -> bool:
        return all(r.passed for r in self.by_lemma().get(lemma, []))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows if r.split == "test")

    def summary(self) -> dict:
        out = {}
        for lemma, rows in self.by_lemma().items():
            out[lemma] = {
                "constant": self.constants.get(lemma),
                "rows": len(rows),
                "passed": bool(all(r.passed for r in rows)),
                "min_margin": float(min(r.margin for r in rows)),
                "worst_ratio": float(max((r.lhs / r.rhs_base for r in rows if r.rhs_base > 0), default=0.0)),
            }
        return out


def default_audit_radii(grid: GridSpec, count: int = 4) -> np.ndarray:
    return np.geomspace(2 * grid.spacing, 0.5 * grid.extent, count)


def default_audit_times(grid: GridSpec, count: int = 5) -> np.ndarray:
    """``h^2 .. 16 h^2``: resolved heat kernels, far from periodic images."""
    h2 = grid.spacing**2
    return np.geomspace(h2, 16 * h2, count)


# Exact-constant heat rows need a nonnegative discrete heat kernel.
EXACT_MIN_T_OVER_H2 = 4.0


class _History:
    """Per-node norms of a pair of histories ``a, b`` with ``t = 0`` included at index 0."""

    def __init__(self, a: Trajectory, b: Trajectory, radii, theta: float, n_pairs: int, seed: int):
        g = a.grid
        self.grid = g
        self.times = np.concatenate(([0.0], a.times))
        sa = np.concatenate((a.initial[None], a.samples))
        sb = np.concatenate((b.initial[None], b.samples))
        self.a, self.b = sa, sb
        ma, mb = magnitude(sa, 1), magnitude(sb, 1)
        prod = ma * mb
        self.prod = prod
        self.a_inf = lq_of_magnitude(ma, np.inf, g)
        self.b_l3 = lq_of_magnitude(mb, 3.0, g)
        self.b_loc = {r: localized_of_magnitude(mb, 3.0, r, g) for r in radii}
        self.prod_inf = lq_of_magnitude(prod, np.inf, g)
        self.prod_l32 = lq_of_magnitude(prod, 1.5, g)
        self.prod_loc = {r: localized_of_magnitude(prod, 1.5, r, g) for r in radii}
        self.w_l3 = lq_of_magnitude(prod, 3.0, g)  # |a (x) b| = |a||b|
        self.theta, self.n_pairs, self.seed = theta, n_pairs, seed
        self._div = {}

    def sup(self, values: np.ndarray, lo: float, hi: float, weight: float = 0.0) -> float:
        mask = (self.times >= lo * (1 - 1e-12)) & (self.times <= hi * (1 + 1e-12))
        return float(np.max(self.times[mask] ** weight * values[mask]))

    def flux(self, j: int) -> np.ndarray:
        return self.a[j][:, None] * self.b[j][None, :]

    def div_flux(self, j: int) -> np.ndarray:
        """``sum_k d_k(a_k b_i)``."""
        if j not in self._div:
            d = spectral_derivatives(self.flux(j), self.grid, 1)
            self._div[j] = np.einsum("kikxyz->ixyz", d.reshape(3, 3, 3, *d.shape[-3:]))
        return self._div[j]

    def holder(self, samples: np.ndarray) -> float:
        return holder_quotient_array(samples, self.grid, self.theta, self.n_pairs, self.seed).quotient


def _nl2_lhs(h: _History, t: float) -> float:
    """``t^(1/2) max_x int_0^(t/2) int |a||b|(y) / (|x - y| + (t - s)^(1/2))^4 dy ds`` (trapezoid in ``s``)."""
    g = h.grid
    n = g.n
    idx = np.arange(n)
    d = np.minimum(idx, n - idx) * g.spacing
    r = np.sqrt(d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2)
    mask = h.times <= 0.5 * t * (1 + 1e-12)
    taus = h.times[mask]
    vals = []
    for j in np.flatnonzero(mask):
        kernel = (r + math.sqrt(t - h.times[j])) ** -4.0
        conv = spectral.irfft3(spectral.rfft3(h.prod[j]) * spectral.rfft3(kernel), n) * g.cell_volume
        vals.append(conv)
    if len(vals) == 1:
        total = vals[0] * 0.5 * t
    else:
        total = sum(0.5 * (taus[k + 1] - taus[k]) * (vals[k] + vals[k + 1]) for k in range(len(vals) - 1))
    return math.sqrt(t) * float(np.max(total))


def _solution_rows(datum_id, a0, constants, mesh, radii, theta, n_pairs, seed, tol, split, t_idx):
    cert = existence_time(a0, constants)
    with warnings.catch_warnings():
        # nodes past T get no majorant rows below; CSLT0 is valid everywhere
        warnings.simplefilter("ignore", RuntimeWarning)
        result, _ = picard_solve(a0, cert, mesh, tol=tol, max_m=12)
    U = result.trajectory
    rows = []
    for j in t_idx:
        t = float(U.times[j])
        mag = magnitude(U.samples[j], 1)
        u_inf = float(lq_of_magnitude(mag, np.inf, U.grid))
        u3 = float(lq_of_magnitude(mag, 3.0, U.grid))
        uu3 = float(lq_of_magnitude(mag * mag, 3.0, U.grid))
        A = cert.majorant(t) if cert.rho_star is not None else None
        rows.append(AuditRow("CSLT0", datum_id, None, t, math.sqrt(t) * uu3, math.sqrt(t) * u_inf * u3, split=split))
        if A is not None:
            rows.append(AuditRow("CSLT", datum_id, cert.rho_star, t, math.sqrt(t) * u_inf * u3, cert.datum_norms.l3 * A, split=split))
            hq = holder_quotient_array(U.samples[j], U.grid, theta, n_pairs, seed).quotient
            rows.append(AuditRow("HPU", datum_id, cert.rho_star, t, t ** ((1 + theta) / 2) * hq, A + A * A, split=split))
    return rows


def audit_pair(
    datum_id: str,
    a0: VelocityField,
    b0: VelocityField,
    radii,
    times,
    lemmas=LEMMAS,
    constants: Constants | None = None,
    M: int = 32,
    theta: float = 0.5,
    n_pairs: int = 2000,
    seed: int = 0,
    tol: float = 1e-10,
    split: str = "test",
) -> list[AuditRow]:
    """All audit rows for one datum pair; constants are attached later."""
    g = a0.grid
    constants = derive_constants() if constants is None else constants
    times = np.sort(np.asarray(times, dtype=float))
    mesh = TimeMesh.graded(float(times[-1]), M)
    t_idx = sorted({int(np.argmin(np.abs(np.log(mesh.nodes / t)))) for t in times})
    A = heat_trajectory(a0, mesh)
    rows: list[AuditRow] = []
    want = set(lemmas)

    a0_mag = magnitude(a0.samples, 1)
    a0_l3 = float(lq_of_magnitude(a0_mag, 3.0, g))
    a0_inf = float(lq_of_magnitude(a0_mag, np.inf, g))
    a0_loc = {r: float(localized_of_magnitude(a0_mag, 3.0, r, g)) for r in radii}
    h2 = g.spacing**2

    if "LP-I" in want:
        p = pressure_samples(a0.samples, g)
        rows.append(AuditRow("LP-I", datum_id, None, 0.0, float(lq_of_magnitude(np.abs(p), 3.0, g)), a0_inf * a0_l3, split=split))

    for j in t_idx:
        t = float(mesh.nodes[j])
        u = A.samples[j]
        mag = magnitude(u, 1)
        u_inf = float(lq_of_magnitude(mag, np.inf, g))
        d1 = spectral_derivatives(u, g, 1)
        d2 = spectral_derivatives(d1, g, 1)
        g1_inf = float(lq_of_magnitude(magnitude(d1, 2), np.inf, g))
        g2_inf = float(lq_of_magnitude(magnitude(d2, 3), np.inf, g))
        lap = np.einsum("ijjxyz->ixyz", d2)
        lap_inf = float(lq_of_magnitude(magnitude(lap, 1), np.inf, g))
        li_full = math.sqrt(t) * u_inf + t * g1_inf + t**1.5 * (lap_inf + g2_inf)
        if "GG1" in want:
            rows.append(AuditRow("GG1", datum_id, None, t, math.sqrt(t) * float(lq_of_magnitude(magnitude(d1, 2), 3.0, g)), a0_l3, split=split))
        if "GG2" in want:
            rows.append(AuditRow("GG2", datum_id, None, t, t * float(lq_of_magnitude(magnitude(d2, 3), 3.0, g)), a0_l3, split=split))
        if "LP-I" in want:
            p = pressure_samples(u, g)
            rhs = u_inf * float(lq_of_magnitude(mag, 3.0, g))
            rows.append(AuditRow("LP-I", datum_id, None, t, float(lq_of_magnitude(np.abs(p), 3.0, g)), rhs, split=split))
        for r in radii:
            base = constants.h0 * a0_loc[r] + constants.h1 * math.exp(-r * r / (8 * t)) * a0_l3
            exact_ok = t >= EXACT_MIN_T_OVER_H2 * h2 * (1 - 1e-9)
            if "KR-I" in want and exact_ok:
                lhs = float(localized_of_magnitude(mag, 3.0, r, g))
                rows.append(AuditRow("KR-I", datum_id, r, t, lhs, a0_loc[r], split=split))
            if "LI-I0" in want and exact_ok:
                rows.append(AuditRow("LI-I0", datum_id, r, t, math.sqrt(t) * u_inf, base, split=split))
            if "LI-I" in want:
                rows.append(AuditRow("LI-I", datum_id, r, t, li_full, base, split=split))

    nonlinear = want & {"NLII-I", "LII-I", "KR-II", "KW-I", "GLT", "GGLT", "GW", "GGW"}
    if nonlinear:
        B = heat_trajectory(b0, mesh)
        N = nonlinear_history(A, B, mesh)
        hist = _History(A, B, radii, theta, n_pairs, seed)
        for j in t_idx:
            t = float(mesh.nodes[j])
            Nt = N.samples[j]
            n_mag = magnitude(Nt, 1)
            dN = spectral_derivatives(Nt, g, 1)
            ddN = spectral_derivatives(dN, g, 1)
            dN_mag, ddN_mag = magnitude(dN, 2), magnitude(ddN, 3)
            early = lambda values, weight=0.0: hist.sup(values, 0.0, 0.5 * t, weight)
            late_idx = [k for k in range(1, len(hist.times)) if 0.5 * t * (1 - 1e-12) <= hist.times[k] <= t * (1 + 1e-12)]

            if "KW-I" in want:
                rhs = hist.sup(hist.a_inf * hist.b_l3, 0.0, t, 0.5)
                rows.append(AuditRow("KW-I", datum_id, None, t, float(lq_of_magnitude(n_mag, 3.0, g)), rhs, split=split))
            if "GLT" in want or "GGLT" in want:
                far = early(hist.w_l3, 0.5)
                if "GLT" in want:
                    near = max(hist.times[k] * float(lq_of_magnitude(magnitude(hist.div_flux(k), 1), 3.0, g)) for k in late_idx)
                    lhs = math.sqrt(t) * float(lq_of_magnitude(dN_mag, 3.0, g))
                    rows.append(AuditRow("GLT", datum_id, None, t, lhs, far + near, split=split))
                if "GGLT" in want:
                    near = max(
                        hist.times[k] ** 1.5 * float(lq_of_magnitude(magnitude(spectral_derivatives(hist.div_flux(k), g, 1), 2), 3.0, g))
                        for k in late_idx
                    )
                    lhs = t * float(lq_of_magnitude(ddN_mag, 3.0, g))
                    rows.append(AuditRow("GGLT", datum_id, None, t, lhs, far + near, split=split))
            if "GW" in want:
                gw_near = max(hist.times[k] ** (1 + theta / 2) * hist.holder(hist.flux(k)) for k in late_idx)
            if "GGW" in want:
                ggw_near = max(hist.times[k] ** (1.5 + theta / 2) * hist.holder(hist.div_flux(k)) for k in late_idx)
            nl2 = _nl2_lhs(hist, t) if "NLII-I" in want else None
            for r in radii:
                loc32 = hist.sup(hist.prod_loc[r], 0.0, t)
                l32 = hist.sup(hist.prod_l32, 0.0, t)
                far = loc32 + t / r**2 * l32
                if "NLII-I" in want:
                    rows.append(AuditRow("NLII-I", datum_id, r, t, nl2, far, split=split))
                if "LII-I" in want:
                    rhs = hist.sup(hist.prod_inf, 0.0, t, 1.0) + far
                    rows.append(AuditRow("LII-I", datum_id, r, t, math.sqrt(t) * float(lq_of_magnitude(n_mag, np.inf, g)), rhs, split=split))
                if "KR-II" in want:
                    rhs = hist.sup(hist.a_inf * hist.b_loc[r], 0.0, t, 0.5)
                    rows.append(AuditRow("KR-II", datum_id, r, t, float(localized_of_magnitude(n_mag, 3.0, r, g)), rhs, split=split))
                if "GW" in want or "GGW" in want:
                    far_early = hist.sup(hist.prod_loc[r], 0.0, 0.5 * t) + t / r**2 * hist.sup(hist.prod_l32, 0.0, 0.5 * t)
                    if "GW" in want:
                        lhs = t * float(lq_of_magnitude(dN_mag, np.inf, g))
                        rows.append(AuditRow("GW", datum_id, r, t, lhs, gw_near + far_early, split=split))
                    if "GGW" in want:
                        lhs = t**1.5 * float(lq_of_magnitude(ddN_mag, np.inf, g))
                        rows.append(AuditRow("GGW", datum_id, r, t, lhs, ggw_near + far_early, split=split))

    if want & set(SOLUTION_LEMMAS):
        sol = _solution_rows(datum_id, a0, constants, mesh, radii, theta, n_pairs, seed, tol, split, t_idx)
        rows.extend(r for r in sol if r.lemma in want)
    return rows


def fit_constants(rows: list[AuditRow]) -> dict:
    """``FIT_SAFETY * max(lhs / rhs_base)`` per lemma on training rows; exact lemmas keep their constant."""
    worst: dict = {}
    nonzero: set = set()
    for r in rows:
        if r.lemma in EXACT:
            continue
        if r.rhs_base > 0:
            nonzero.add(r.lemma)
            worst[r.lemma] = max(worst.get(r.lemma, 0.0), r.lhs / r.rhs_base)
    out = {lemma: FIT_SAFETY * v for lemma, v in worst.items() if lemma in nonzero}
    out.update(EXACT)
    return out


def estimate_audit(
    train: DatumFamily,
    test: DatumFamily,
    radii=None,
    times=None,
    lemmas=LEMMAS,
    constants: Constants | None = None,
    M: int = 32,
    theta: float = 0.5,
    n_pairs: int = 2000,
) -> AuditReport:
    """Fit constants on ``train``, then evaluate every inequality on ``test``."""
    if set(train.seeds) & set(test.seeds) and train.grid == test.grid and train.amplitude == test.amplitude:
        raise ValueError("training and test families must be disjoint")
    if not train.seeds or not test.seeds:
        raise ValueError("audit families must be nonempty")
    unknown = set(lemmas) - set(LEMMAS)
    if unknown:
        raise ValueError(f"unknown lemma ids: {sorted(unknown)}")
    grid = test.grid
    radii = default_audit_radii(grid) if radii is None else np.asarray(radii, dtype=float)
    times = default_audit_times(grid) if times is None else np.asarray(times, dtype=float)
    kw = dict(lemmas=lemmas, constants=constants, M=M, theta=theta, n_pairs=n_pairs)

    train_rows = []
    for k, (did, a, b) in enumerate(train.pairs()):
        train_rows += audit_pair(did, a, b, radii, times, seed=k, split="train", **kw)
    fitted = fit_constants(train_rows)
    missing = [l for l in lemmas if l not in fitted]
    if missing:
        raise ValueError(f"degenerate training family: no nonzero right-hand side for {missing}")

    test_rows = []
    for k, (did, a, b) in enumerate(test.pairs()):
        test_rows += audit_pair(did, a, b, radii, times, seed=k, split="test", **kw)
    for r in train_rows + test_rows:
        r.constant = fitted[r.lemma]
    settings = {
        "radii": list(map(float, radii)),
        "times": list(map(float, times)),
        "M": M,
        "theta": theta,
        "n_pairs": n_pairs,
        "fit_safety": FIT_SAFETY,
        "train": list(train.seeds),
        "test": list(test.seeds),
    }
    return AuditReport(train_rows + test_rows, fitted, tuple(lemmas), settings)


def pressure_constant(grid: GridSpec, seeds, amplitude=(0.02, 0.1)) -> float:
    """Largest ``||p||_3 / (||u||_inf ||u||_3)`` over a random family."""
    worst = 0.0
    for seed in seeds:
        u = random_datum(grid, np.random.default_rng(seed), amplitude=amplitude)
        mag = magnitude(u.samples, 1)
        p = pressure_samples(u.samples, grid)
        ratio = float(lq_of_magnitude(np.abs(p), 3.0, grid)) / float(lq_of_magnitude(mag, np.inf, grid) * lq_of_magnitude(mag, 3.0, grid))
        worst = max(worst, ratio)
    return worst


# --- bilinear constant -----------------------------------------------------------------

def fit_bilinear_constant(family: DatumFamily, t: float, radii, M: int = 32) -> float:
    """``FIT_SAFETY * max |||N(a, b)||| / (|||a||| |||b|||)`` over heat-flow pairs and radii."""
    mesh = TimeMesh.graded(t, M)
    worst = 0.0
    for _, a0, b0 in family.pairs():
        a, b = heat_trajectory(a0, mesh), heat_trajectory(b0, mesh)
        N = nonlinear_history(a, b, mesh)
        for r in radii:
            denom = triple_norm(a, r).value * triple_norm(b, r).value
            if denom > 0:
                worst = max(worst, triple_norm(N, r).value / denom)
    return FIT_SAFETY * worst


# --- Oseen tensor audits ------------------------------------------------------------------

@dataclass(frozen=True)
class OseenBoundReport:
    h: int
    constant: float
    samples: int
    decay_slope: float
    center_slope: float


def oseen_bound_audit(h: int = 0, seed: int = 0, samples: int = 400) -> OseenBoundReport:
    """Fit ``c`` in ``|D^h E(s, z)| <= c (|z| + s^(1/2))^(-3-h)`` and measure both decay rates."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        s = float(10 ** rng.uniform(-3, 2))
        direction = rng.normal(size=3)
        z = direction / np.linalg.norm(direction) * 10 ** rng.uniform(-3, 2)
        val = np.linalg.norm(oseen_point_eval(s, z, h).value)
        worst = max(worst, val * (np.linalg.norm(z) + math.sqrt(s)) ** (3 + h))
    e1 = np.array([1.0, 0.0, 0.0])
    radii = 2.0 ** np.arange(2, 9)
    ray = [np.linalg.norm(oseen_point_eval(1.0, r * e1, h).value) for r in radii]
    decay = float(np.polyfit(np.log(radii), np.log(ray), 1)[0])
    times = 2.0 ** np.arange(0, 8)
    center = [np.linalg.norm(oseen_point_eval(float(s), np.zeros(3) if h == 0 else 1e-3 * e1, h).value) for s in times]
    slope = float(np.polyfit(np.log(times), np.log(center), 1)[0])
    return OseenBoundReport(h, worst, samples, decay, slope)


def oseen_ball_mean(s: float, radius: float, h: int = 1, n_r: int = 64, n_ang: int = 32) -> tuple[np.ndarray, float]:
    """``int_{|z| < radius} D^h E(s, z) dz`` by Gauss-Legendre in ``(r, cos theta, phi)``.

    Returns the integral and the integral of the entrywise magnitude, the
    scale against which the mean is judged.
    """
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    xc, wc = np.polynomial.legendre.leggauss(n_ang)
    r = 0.5 * radius * (xr + 1)
    wr = 0.5 * radius * wr
    phi = (np.arange(2 * n_ang) + 0.5) * np.pi / n_ang
    wphi = np.pi / n_ang
    total = 0.0
    scale = 0.0
    for ri, wri in zip(r, wr):
        for ci, wci in zip(xc, wc):
            si = math.sqrt(1 - ci * ci)
            for ph in phi:
                z = ri * np.array([si * math.cos(ph), si * math.sin(ph), ci])
                v = oseen_point_eval(s, z, h).value
                w = wri * ri * ri * wci * wphi
                total = total + w * v
                scale += w * np.abs(v)
    return np.asarray(total), float(np.max(scale))


# --- uniqueness ------------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    t_final: float
    M: int = 64
    gamma: float = 2.0
    tol: float = 1e-10
    max_m: int = 20
    order: int = 2

    def mesh(self) -> TimeMesh:
        return TimeMesh.graded(self.t_final, self.M, self.gamma)


@dataclass
class UniquenessReport:
    gap: float
    budget: float
    common_nodes: int
    both_converged: bool
    limit_class: bool
    identical: bool
    passed: bool
    increments: tuple

    def to_dict(self) -> dict:
        return asdict(self)


def _solve(datum, cert, cfg: SolverConfig):
    return picard_solve(datum, cert, cfg.mesh(), tol=cfg.tol, max_m=cfg.max_m, order=cfg.order)


def uniqueness_check(
    datum: VelocityField,
    config_a: SolverConfig,
    config_b: SolverConfig,
    constants: Constants | None = None,
    budget_factor: float = 10.0,
) -> UniquenessReport:
    """Solve twice and compare ``sup_t ||U_a(t) - U_b(t)||_3`` over shared nodes.

    The budget is ``budget_factor`` times the final increment of the run with
    more nodes.  Both runs must also show decaying ``t^(1/2)||U||_inf``, the
    membership condition of the uniqueness class.
    """
    constants = derive_constants() if constants is None else constants
    cert = existence_time(datum, constants)
    ra, _ = _solve(datum, cert, config_a)
    rb, _ = _solve(datum, cert, config_b)
    if not (ra.converged and rb.converged):
        raise RuntimeError(f"nonconvergent run: {ra.status} / {rb.status}")
    ta, tb = ra.trajectory, rb.trajectory
    pairs = []
    for i, t in enumerate(ta.times):
        hits = np.flatnonzero(np.isclose(tb.times, t, rtol=1e-12, atol=0.0))
        if hits.size:
            pairs.append((i, int(hits[0])))
    if not pairs:
        raise ValueError("the two meshes share no nodes")
    gap = max(float(lq_of_magnitude(magnitude(ta.samples[i] - tb.samples[k], 1), 3.0, ta.grid)) for i, k in pairs)
    finer = ra if config_a.M >= config_b.M else rb
    budget = budget_factor * finer.final_increment
    in_class = True
    for r in (ra, rb):
        if np.any(r.trajectory.samples):
            in_class &= limit_scan(r)[0].verdict == "vanishing"
    identical = ta.samples.shape == tb.samples.shape and bool(np.array_equal(ta.samples, tb.samples))
    passed = in_class and gap <= budget
    return UniquenessReport(gap, budget, len(pairs), True, in_class, identical, passed, (ra.final_increment, rb.final_increment))


# --- small-data globality ---------------------------------------------------------------------

@dataclass
class GlobalityReport:
    margin: float
    nominal_T: float
    horizon: float
    converged: bool
    l3_ratio: float
    sup_weighted: float
    tail_decreasing: bool
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


TAIL_FLOOR = 1e-10


def _decreasing_to_floor(values: np.ndarray) -> bool:
    """Strictly decreasing while above ``TAIL_FLOOR * values[0]``, and never back above it."""
    above = values > TAIL_FLOOR * values[0]
    k = int(np.argmin(above)) if not np.all(above) else values.size
    return bool(np.all(np.diff(values[:k]) < 0) and not np.any(above[k:]))


def globality_run(
    datum: VelocityField,
    constants: Constants | None = None,
    factor: float = 10.0,
    M: int = 64,
    t_first: float | None = None,
    tol: float = 1e-10,
    threshold_factor: float = 8.0,
) -> tuple[GlobalityReport, SolveResult]:
    """Integrate a small datum to ``factor`` times its certified time on a log-spaced mesh.

    Bounded means ``sup ||U(t)||_3 <= 2 ||U0||_3`` with finite weighted sup
    norm; the tail (last half of the nodes) must be strictly decreasing in
    both ``||U||_3`` and ``||U||_inf`` until it reaches the round-off floor
    set by the conserved spatial mean.
    """
    constants = derive_constants() if constants is None else constants
    cert = existence_time(datum, constants)
    margin = global_margin(cert.datum_norms.l3, constants, threshold_factor)
    nominal = cert.T
    if not math.isfinite(nominal) or nominal <= 0:
        raise ValueError(f"datum has no finite nominal time (T = {nominal})")
    horizon = factor * nominal
    t_first = (datum.grid.spacing**2) / 16 if t_first is None else t_first
    mesh = TimeMesh.geometric(horizon, M, t_first)
    with warnings.catch_warnings():
        # running past the nominal time is the point of this check
        warnings.simplefilter("ignore", RuntimeWarning)
        result, _ = picard_solve(datum, cert, mesh, tol=tol, max_m=20)
    mag = magnitude(result.trajectory.samples, 1)
    l3 = lq_of_magnitude(mag, 3.0, datum.grid)
    linf = lq_of_magnitude(mag, np.inf, datum.grid)
    tail_dec = _decreasing_to_floor(l3[M // 2 :]) and _decreasing_to_floor(linf[M // 2 :])
    ratio = float(np.max(l3) / cert.datum_norms.l3) if cert.datum_norms.l3 > 0 else 0.0
    sup_w = float(np.max(np.sqrt(mesh.nodes) * linf))
    passed = margin < 1.0 and result.converged and ratio <= 2.0 and math.isfinite(sup_w) and tail_dec
    return GlobalityReport(margin, nominal, horizon, result.converged, ratio, sup_w, tail_dec, passed), result
