"""Existence-time certificate: the smallness criterion, t(rho), T(U0) and the majorant A.

Everything here is scalar arithmetic on a handful of datum norms.  The only
field operation is computing ``||U0||_3`` and the localized norms on the
radius ladder.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .fields import VelocityField
from .norms import localized_of_magnitude, lq_of_magnitude, magnitude

MIN_LADDER = 16


@dataclass(frozen=True)
class Constants:
    h0: float
    h1: float
    c1: float = 1.0
    source: str = "derived"

    def __post_init__(self):
        for name in ("h0", "h1", "c1"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"constant {name} must be positive and finite, got {value!r}")
        if self.source not in ("derived", "configured"):
            raise ValueError(f"source must be 'derived' or 'configured', got {self.source!r}")

    @property
    def threshold(self) -> float:
        """Right-hand side ``1 / (4 c1)`` of the criterion."""
        return 0.25 / self.c1

    def to_dict(self) -> dict:
        return asdict(self)


def _gaussian_l32(decay: float) -> float:
    """``(int_R3 ((4 pi)^(-3/2) exp(-decay |y|^2))^(3/2) dy)^(2/3)`` by radial quadrature."""
    pref = (4 * math.pi) ** -2.25
    val, _ = integrate.quad(
        lambda r: 4 * math.pi * r * r * pref * math.exp(-1.5 * decay * r * r), 0.0, np.inf, epsabs=0.0, epsrel=1e-13
    )
    return val ** (2.0 / 3.0)


def derive_constants(c1: float = 1.0) -> Constants:
    """Heat-decomposition constants from the Gaussian integrals.

    ``h0`` bounds the near-field part of ``t^(1/2) |H(t) * a|`` by the
    localized norm, ``h1`` the far field, where half of the Gaussian decay is
    spent on the factor ``exp(-rho^2 / 8t)``.
    """
    return Constants(h0=_gaussian_l32(0.25), h1=_gaussian_l32(0.125), c1=float(c1), source="derived")


@dataclass(frozen=True)
class DatumNorms:
    """``||U0||_3`` and ``||U0||_{3,rho}`` on a radius ladder."""

    l3: float
    rhos: tuple
    localized: tuple

    @classmethod
    def from_field(cls, datum: VelocityField, rhos) -> "DatumNorms":
        mag = magnitude(datum.samples, 1)
        rhos = tuple(float(r) for r in rhos)
        loc = tuple(float(localized_of_magnitude(mag, 3.0, r, datum.grid)) for r in rhos)
        return cls(float(lq_of_magnitude(mag, 3.0, datum.grid)), rhos, loc)

    def localized_at(self, rho: float) -> float:
        for r, v in zip(self.rhos, self.localized):
            if math.isclose(r, rho, rel_tol=1e-12):
                return v
        raise KeyError(f"radius {rho!r} is not on the ladder")

    def to_dict(self) -> dict:
        return {"l3": self.l3, "rhos": list(self.rhos), "localized": list(self.localized)}


def criterion_from_norms(loc: float, l3: float, constants: Constants, rho: float, t: float) -> float:
    if t == 0:
        return (constants.h0 + 1) * loc
    far = constants.h1 * math.exp(-rho * rho / (8 * t)) + math.sqrt(t) / rho
    return (constants.h0 + 1) * loc + far * l3


def criterion_value(datum_norms: DatumNorms, constants: Constants, rho: float, t: float) -> float:
    """``B(rho, t) = (h0 + 1) ||U0||_{3,rho} + (h1 exp(-rho^2/8t) + t^(1/2)/rho) ||U0||_3``."""
    if not (rho > 0 and t >= 0):
        raise ValueError("need rho > 0 and t >= 0")
    return criterion_from_norms(datum_norms.localized_at(rho), datum_norms.l3, constants, rho, t)


def recursion_fixed_point(xi0: float, c: float) -> float | None:
    """Smaller root of ``c xi^2 - xi + xi0 = 0``; ``None`` when ``1 - 4 c xi0 <= 0``.

    Iterating ``xi_m = xi0 + c xi_{m-1}^2`` from ``xi0`` increases toward this root.
    """
    if xi0 < 0 or c <= 0:
        raise ValueError("need xi0 >= 0 and c > 0")
    disc = 1.0 - 4.0 * c * xi0
    if disc <= 0:
        return None
    # (1 - sqrt(disc)) / 2c, rationalized: no cancellation and no underflow for tiny xi0
    return 2.0 * xi0 / (1.0 + math.sqrt(disc))


def majorant_from_criterion(B: float, c1: float) -> float | None:
    """``A = 2B / (1 + sqrt(1 - 4 c1 B))``; ``None`` outside the criterion region."""
    disc = 1.0 - 4.0 * c1 * B
    if disc <= 0:
        return None
    return 2.0 * B / (1.0 + math.sqrt(disc))


def majorant(datum_norms: DatumNorms, constants: Constants, rho: float, t: float) -> float | None:
    return majorant_from_criterion(criterion_value(datum_norms, constants, rho, t), constants.c1)


def _t_of_rho(loc: float, l3: float, constants: Constants, rho: float, rtol: float = 1e-10) -> float | None:
    target = constants.threshold
    if (constants.h0 + 1) * loc >= target:
        return None
    if l3 == 0:
        return math.inf

    def ok(t: float) -> bool:
        return criterion_from_norms(loc, l3, constants, rho, t) < target

    hi = rho * rho
    while ok(hi):
        hi *= 4.0
        if hi > 1e300:
            return math.inf
    lo = hi / 4.0
    while not ok(lo):
        lo /= 4.0
        if lo < 1e-300:
            return 0.0
    while hi / lo - 1.0 > rtol:
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def t_of_rho(datum_norms: DatumNorms, constants: Constants, rho: float) -> float | None:
    """Largest ``t`` with ``B(rho, t) < 1/(4 c1)``, by log-space bisection.

    ``None`` when the criterion fails already as ``t -> 0``; ``inf`` for a zero datum.
    """
    return _t_of_rho(datum_norms.localized_at(rho), datum_norms.l3, constants, rho)


def default_ladder(spacing: float, extent: float, count: int = 32) -> np.ndarray:
    return np.geomspace(2 * spacing, 0.5 * extent, count)


def global_margin(l3: float, constants: Constants, factor: float = 4.0) -> float:
    """Smallest over ``kappa`` of ``c1 factor (h0 + 1 + h1 exp(-kappa^2/8) + 1/kappa) ||U0||_3``.

    With ``rho = kappa t^(1/2)`` and ``||U0||_{3,rho} <= ||U0||_3`` this bounds
    ``c1 factor B`` for every ``t``; a value below 1 means the criterion (with
    threshold ``1/(factor c1)``) holds for all times.
    """
    kappa = np.geomspace(1.0, 1e3, 241)
    bound = (constants.h0 + 1 + constants.h1 * np.exp(-kappa**2 / 8) + 1 / kappa) * l3
    return float(np.min(bound) * constants.c1 * factor)


@dataclass
class Certificate:
    constants: Constants
    rho_star: float | None
    rhos: list
    t_of_rho: list
    T: float
    A_times: list
    A_values: list
    global_flag: bool
    datum_norms: DatumNorms
    status: str
    rho_cap: float
    notes: list = field(default_factory=list)

    def criterion(self, t: float, rho: float | None = None) -> float:
        rho = self.rho_star if rho is None else rho
        return criterion_value(self.datum_norms, self.constants, rho, t)

    def majorant(self, t: float, rho: float | None = None) -> float | None:
        rho = self.rho_star if rho is None else rho
        return majorant(self.datum_norms, self.constants, rho, t)

    def to_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            return "inf" if math.isinf(v) else v

        return {
            "constants": self.constants.to_dict(),
            "rho_star": self.rho_star,
            "rho_cap": self.rho_cap,
            "T": enc(self.T),
            "status": self.status,
            "global": self.global_flag,
            "table": [{"rho": r, "t": enc(t)} for r, t in zip(self.rhos, self.t_of_rho)],
            "A_table": [{"t": t, "A": a} for t, a in zip(self.A_times, self.A_values)],
            "datum_norms": self.datum_norms.to_dict(),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        def dec(v):
            return math.inf if v == "inf" else v

        dn = d["datum_norms"]
        return cls(
            constants=Constants(**d["constants"]),
            rho_star=d["rho_star"],
            rhos=[row["rho"] for row in d["table"]],
            t_of_rho=[dec(row["t"]) for row in d["table"]],
            T=dec(d["T"]),
            A_times=[row["t"] for row in d["A_table"]],
            A_values=[row["A"] for row in d["A_table"]],
            global_flag=d["global"],
            datum_norms=DatumNorms(dn["l3"], tuple(dn["rhos"]), tuple(dn["localized"])),
            status=d["status"],
            rho_cap=d["rho_cap"],
            notes=list(d.get("notes", [])),
        )


def _best(rhos, ts) -> tuple[int | None, float]:
    best, T = None, 0.0
    for i, t in enumerate(ts):
        if t is not None and t > T:
            best, T = i, t
    return best, T


def existence_time(
    datum: VelocityField,
    constants: Constants,
    rho_ladder=None,
    refine: bool = False,
    n_A: int = 16,
) -> Certificate:
    """``T(U0) = max over the ladder of t(rho)``, with the majorant table at the best radius."""
    grid = datum.grid
    cap = 0.5 * grid.extent
    rhos = default_ladder(grid.spacing, grid.extent) if rho_ladder is None else np.asarray(rho_ladder, dtype=float)
    if rhos.size < MIN_LADDER:
        raise ValueError(f"radius ladder needs at least {MIN_LADDER} entries, got {rhos.size}")
    if np.any(rhos <= 0) or np.any(rhos > cap * (1 + 1e-12)):
        raise ValueError(f"radii must lie in (0, {cap}]")
    rhos = np.sort(np.minimum(rhos, cap))

    dn = DatumNorms.from_field(datum, rhos)
    ts = [t_of_rho(dn, constants, r) for r in dn.rhos]
    best, T = _best(dn.rhos, ts)
    notes = []

    if refine and best is not None and math.isfinite(T):
        lo = dn.rhos[max(best - 1, 0)]
        hi = dn.rhos[min(best + 1, len(dn.rhos) - 1)]
        extra = [r for r in np.geomspace(lo, hi, 11)[1:-1] if not any(math.isclose(r, q) for q in dn.rhos)]
        all_rhos = np.sort(np.concatenate([rhos, extra]))
        dn = DatumNorms.from_field(datum, all_rhos)
        ts = [t_of_rho(dn, constants, r) for r in dn.rhos]
        best, T = _best(dn.rhos, ts)
        notes.append(f"ladder refined around rho index {best}")

    gflag = dn.l3 == 0 or global_margin(dn.l3, constants) < 1.0
    if best is None:
        status = "criterion violated at every radius"
        return Certificate(constants, None, list(dn.rhos), ts, 0.0, [], [], gflag, dn, status, cap, notes)

    rho_star = dn.rhos[best]
    if math.isinf(T):
        status = "criterion holds for all t"
        A_times = list(rho_star**2 * np.geomspace(1e-4, 1.0, n_A))
    else:
        status = "ok"
        A_times = list(T * np.geomspace(1e-4, 1 - 1e-6, n_A))
    A_values = [majorant(dn, constants, rho_star, t) for t in A_times]
    return Certificate(constants, rho_star, list(dn.rhos), ts, T, A_times, A_values, gflag, dn, status, cap, notes)
