"""Lebesgue, localized and trajectory norms of sampled fields.

Integrals are Riemann sums ``h^3 * sum``.  The localized norm takes a max over
grid centres of sharp-ball sums, computed as a circular convolution with the
ball indicator.  Suprema over time are maxima over trajectory nodes, hence
lower bounds of the continuum suprema.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import spectral
from .fields import GridSpec, ScalarField, Trajectory, VelocityField


def magnitude(samples: np.ndarray, ncomp: int) -> np.ndarray:
    """Pointwise Euclidean (Frobenius) size over the ``ncomp`` axes before the spatial ones."""
    if ncomp == 0:
        return np.abs(samples)
    axes = tuple(range(-3 - ncomp, -3))
    return np.sqrt(np.sum(samples * samples, axis=axes))


def _field_magnitude(f) -> tuple[np.ndarray, GridSpec]:
    if isinstance(f, VelocityField):
        return magnitude(f.samples, 1), f.grid
    if isinstance(f, ScalarField):
        return np.abs(f.samples), f.grid
    raise TypeError(f"expected VelocityField or ScalarField, got {type(f).__name__}")


def lq_of_magnitude(mag: np.ndarray, q: float, grid: GridSpec) -> np.ndarray:
    """``||.||_q`` over the last three axes of a nonnegative array."""
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q!r}")
    peak = np.max(mag, axis=(-3, -2, -1))
    if np.isinf(q):
        return peak
    safe = np.where(peak > 0, peak, 1.0)
    scaled = mag / safe[..., None, None, None]
    total = np.sum(scaled**q, axis=(-3, -2, -1)) * grid.cell_volume
    return np.where(peak > 0, safe * total ** (1.0 / q), 0.0)


def lq_norm(f, q: float) -> float:
    mag, grid = _field_magnitude(f)
    return float(lq_of_magnitude(mag, q, grid))


@lru_cache(maxsize=128)
def _ball_hat(n: int, extent: float, rho: float) -> np.ndarray:
    h = extent / n
    idx = np.arange(n)
    d = np.minimum(idx, n - idx) * h
    r2 = d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2
    hat = spectral.rfft3((r2 < rho * rho).astype(np.float64))
    hat.setflags(write=False)
    return hat


def ball_count(grid: GridSpec, rho: float) -> int:
    """Number of grid nodes strictly inside a ball of radius ``rho`` about a node."""
    return int(round(_ball_hat(grid.n, grid.extent, float(rho))[0, 0, 0].real))


def _check_rho(rho: float, grid: GridSpec) -> None:
    if not (rho > 0 and rho <= 0.5 * grid.extent):
        raise ValueError(f"rho must lie in (0, extent/2 = {0.5 * grid.extent}], got {rho!r}")


def localized_of_magnitude(mag: np.ndarray, q: float, rho: float, grid: GridSpec) -> np.ndarray:
    """``(max_x sum_{|y-x|<rho} mag^q h^3)^(1/q)`` over the last three axes."""
    _check_rho(rho, grid)
    if not 1 <= q < np.inf:
        raise ValueError(f"q must be in [1, inf), got {q!r}")
    peak = np.max(mag, axis=(-3, -2, -1))
    safe = np.where(peak > 0, peak, 1.0)
    power = (mag / safe[..., None, None, None]) ** q
    sums = spectral.irfft3(spectral.rfft3(power) * _ball_hat(grid.n, grid.extent, float(rho)), grid.n)
    best = np.max(sums, axis=(-3, -2, -1))
    # a ball sum of nonnegative terms lies in [0, total]; clip convolution round-off
    best = np.clip(best, 0.0, np.sum(power, axis=(-3, -2, -1)))
    return np.where(peak > 0, safe * (best * grid.cell_volume) ** (1.0 / q), 0.0)


def localized_l3(f, rho: float) -> float:
    mag, grid = _field_magnitude(f)
    return float(localized_of_magnitude(mag, 3.0, rho, grid))


def localized_lq(f, q: float, rho: float) -> float:
    mag, grid = _field_magnitude(f)
    return float(localized_of_magnitude(mag, q, rho, grid))


@dataclass(frozen=True)
class NormTriple:
    sup_weighted: float
    localized: float
    l3_weighted: float
    rho: float
    t: float

    @property
    def value(self) -> float:
        return self.sup_weighted + self.localized + self.l3_weighted

    def to_dict(self) -> dict:
        out = asdict(self)
        out["value"] = self.value
        return out


@dataclass(frozen=True)
class NodeNorms:
    """Per-node ingredients of the triple norm for one trajectory and radius."""

    times: np.ndarray
    sup: np.ndarray
    localized: np.ndarray
    l3: np.ndarray
    rho: float

    def triple(self, t: float | None = None) -> NormTriple:
        if t is None:
            t = float(self.times[-1])
        mask = self.times <= t * (1 + 1e-12)
        if not np.any(mask):
            raise ValueError(f"no trajectory node in (0, {t}]")
        return NormTriple(
            sup_weighted=float(np.max(np.sqrt(self.times[mask]) * self.sup[mask])),
            localized=float(np.max(self.localized[mask])),
            l3_weighted=float(np.sqrt(t) / self.rho * np.max(self.l3[mask])),
            rho=self.rho,
            t=float(t),
        )


def node_norms(history: Trajectory, rho: float) -> NodeNorms:
    mag = magnitude(history.samples, 1)
    grid = history.grid
    return NodeNorms(
        times=history.times,
        sup=lq_of_magnitude(mag, np.inf, grid),
        localized=localized_of_magnitude(mag, 3.0, rho, grid),
        l3=lq_of_magnitude(mag, 3.0, grid),
        rho=float(rho),
    )


def triple_norm(history: Trajectory, rho: float, t: float | None = None) -> NormTriple:
    """Discrete ``|||u|||_(t, rho)``: suprema over the nodes in ``(0, t]``."""
    if len(history) == 0:
        raise ValueError("empty history")
    if rho <= 0:
        raise ValueError("rho must be positive")
    return node_norms(history, rho).triple(t)


@dataclass(frozen=True)
class HolderSample:
    theta: float
    quotient: float
    pair_count: int


def holder_quotient_array(samples: np.ndarray, grid: GridSpec, theta: float, n_pairs: int, seed: int = 0) -> HolderSample:
    """Largest sampled ``|f(x) - f(y)| / |x - y|^theta`` over random node pairs.

    Distances use the minimal periodic image.  The pair stream for a given
    seed is prefix-stable, so more pairs never lower the estimate.
    """
    if not 0 <= theta < 1:
        raise ValueError(f"theta must be in [0, 1), got {theta!r}")
    if n_pairs < 100:
        raise ValueError("n_pairs must be >= 100")
    n = grid.n
    flat = samples.reshape(-1, n**3)
    pairs = np.random.default_rng(seed).integers(0, n**3, size=(n_pairs, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    i = np.stack(np.unravel_index(pairs[:, 0], (n, n, n)))
    j = np.stack(np.unravel_index(pairs[:, 1], (n, n, n)))
    step = np.abs(i - j)
    step = np.minimum(step, n - step) * grid.spacing
    dist = np.sqrt(np.sum(step**2, axis=0))
    diff = np.sqrt(np.sum((flat[:, pairs[:, 0]] - flat[:, pairs[:, 1]]) ** 2, axis=0))
    quotient = float(np.max(diff / dist**theta)) if diff.size else 0.0
    return HolderSample(theta=float(theta), quotient=quotient, pair_count=int(diff.size))


def holder_quotient(f: VelocityField | ScalarField, theta: float, n_pairs: int = 1000, seed: int = 0) -> HolderSample:
    return holder_quotient_array(np.asarray(f.samples), f.grid, theta, n_pairs, seed)
