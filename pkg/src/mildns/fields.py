"""Sampled velocity fields on a periodic cube standing in for R^3.

The cube is ``[-L/2, L/2)^3`` with ``n`` nodes per axis; node ``n/2`` sits at the
origin.  Sample arrays are indexed ``[component, i1, i2, i3]`` with ``i1`` along
``x1``.  Fields are immutable once built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import spectral

# Fraction of the cubed-magnitude mass allowed within extent/4 of the boundary.
BOUNDARY_MASS_TOL = 1e-8

# L^3 norm of curl(exp(-|x|^2/2) e3); a unit-potential bump has this size.
CURL_GAUSSIAN_L3 = (2.0 * np.pi**2 / 9.0) ** (1.0 / 3.0)


@dataclass(frozen=True)
class GridSpec:
    n: int
    extent: float

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n!r}")
        if not np.isfinite(self.extent) or self.extent <= 0:
            raise ValueError(f"extent must be positive and finite, got {self.extent!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "extent", float(self.extent))

    @property
    def spacing(self) -> float:
        return self.extent / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    def coordinates(self) -> np.ndarray:
        return -0.5 * self.extent + self.spacing * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays ``(x1, x2, x3)``."""
        x = self.coordinates()
        return x[:, None, None], x[None, :, None], x[None, None, :]

    def wavenumbers(self) -> spectral.Wavenumbers:
        return spectral.wavenumbers(self.n, self.extent)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _check_samples(samples, shape: tuple, what: str) -> np.ndarray:
    arr = np.array(samples, dtype=np.float64, copy=True)
    if arr.shape != shape:
        raise ValueError(f"{what}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.count_nonzero(~np.isfinite(arr)))
        raise ValueError(f"{what}: {bad} non-finite sample(s)")
    return _frozen(arr)


@dataclass(frozen=True, eq=False)
class VelocityField:
    grid: GridSpec
    samples: np.ndarray
    time_label: float = 0.0

    def __post_init__(self):
        n = self.grid.n
        object.__setattr__(self, "samples", _check_samples(self.samples, (3, n, n, n), "VelocityField"))
        if not np.isfinite(self.time_label) or self.time_label < 0:
            raise ValueError(f"time_label must be finite and >= 0, got {self.time_label!r}")
        object.__setattr__(self, "time_label", float(self.time_label))

    @classmethod
    def zeros(cls, grid: GridSpec, time_label: float = 0.0) -> "VelocityField":
        return cls(grid, np.zeros((3, grid.n, grid.n, grid.n)), time_label)

    def __add__(self, other: "VelocityField") -> "VelocityField":
        _same_grid(self.grid, other.grid)
        return VelocityField(self.grid, self.samples + other.samples, self.time_label)

    def __sub__(self, other: "VelocityField") -> "VelocityField":
        _same_grid(self.grid, other.grid)
        return VelocityField(self.grid, self.samples - other.samples, self.time_label)

    def scaled(self, factor: float) -> "VelocityField":
        return VelocityField(self.grid, factor * self.samples, self.time_label)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    samples: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        object.__setattr__(self, "samples", _check_samples(self.samples, (n, n, n), "ScalarField"))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier-series coefficients ``c_k`` with ``f(x) = sum_k c_k exp(i k.x)``."""

    grid: GridSpec
    coefficients: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        arr = np.array(self.coefficients, dtype=np.complex128, copy=True)
        if arr.shape != (3, n, n, n):
            raise ValueError(f"SpectralField: expected shape {(3, n, n, n)}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("SpectralField: non-finite coefficients")
        object.__setattr__(self, "coefficients", _frozen(arr))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Velocity samples at increasing times, optionally with the ``t = 0`` state.

    ``samples`` has shape ``(M, 3, n, n, n)``.  The array is frozen in place
    rather than copied; trajectories are large.
    """

    grid: GridSpec
    times: np.ndarray
    samples: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self):
        n = self.grid.n
        times = np.array(self.times, dtype=np.float64)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("Trajectory: times must be a nonempty 1-d array")
        if np.any(np.diff(times) <= 0) or times[0] <= 0:
            raise ValueError("Trajectory: times must be positive and strictly increasing")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.shape != (times.size, 3, n, n, n):
            raise ValueError(f"Trajectory: expected samples shape {(times.size, 3, n, n, n)}, got {samples.shape}")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "samples", _frozen(samples))
        if self.initial is not None:
            object.__setattr__(self, "initial", _check_samples(self.initial, (3, n, n, n), "Trajectory.initial"))

    def __len__(self) -> int:
        return self.times.size

    def at(self, j: int) -> VelocityField:
        return VelocityField(self.grid, self.samples[j], float(self.times[j]))

    def index_of(self, t: float, rtol: float = 1e-12) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=rtol, atol=0.0))
        if hits.size == 0:
            raise ValueError(f"time {t!r} is not a trajectory node")
        return int(hits[0])


def _same_grid(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def _require_finite(samples: np.ndarray) -> None:
    if not np.all(np.isfinite(samples)):
        raise ValueError("non-finite entries in field samples")


def to_spectral(f: VelocityField) -> SpectralField:
    _require_finite(f.samples)
    coeffs = np.fft.fftn(f.samples, axes=spectral.AXES, norm="forward")
    return SpectralField(f.grid, coeffs)


def from_spectral(F: SpectralField, time_label: float = 0.0, symmetry_tol: float = 1e-12) -> VelocityField:
    values = np.fft.ifftn(F.coefficients, axes=spectral.AXES, norm="forward")
    scale = max(float(np.max(np.abs(values.real))), np.finfo(float).tiny)
    if np.max(np.abs(values.imag)) > symmetry_tol * scale:
        raise ValueError("coefficients are not conjugate-symmetric; inverse transform is not real")
    return VelocityField(F.grid, values.real, time_label)


def leray_project(f: VelocityField) -> VelocityField:
    """Orthogonal projection onto discretely divergence-free fields; the mean passes through."""
    wn = f.grid.wavenumbers()
    u_hat = spectral.rfft3(f.samples)
    out = spectral.irfft3(spectral.leray_hat(u_hat, wn), f.grid.n)
    return VelocityField(f.grid, out, f.time_label)


def divergence(f: VelocityField) -> ScalarField:
    wn = f.grid.wavenumbers()
    d = spectral.irfft3(spectral.divergence_hat(spectral.rfft3(f.samples), wn), f.grid.n)
    return ScalarField(f.grid, d)


def max_divergence_ratio(f: VelocityField) -> float:
    """``max|div f| * spacing / max|f|``; 0 for the zero field."""
    peak = float(np.max(np.abs(f.samples)))
    if peak == 0.0:
        return 0.0
    return float(np.max(np.abs(divergence(f).samples))) * f.grid.spacing / peak


def spectral_derivatives(samples: np.ndarray, grid: GridSpec, order: int) -> np.ndarray:
    """Spectral derivative tensor of ``samples`` (leading axes kept).

    ``order=1`` appends one derivative axis (``[..., j, :, :, :] = d_j``),
    ``order=2`` appends two.
    """
    wn = grid.wavenumbers()
    a_hat = spectral.rfft3(samples)
    for _ in range(order):
        a_hat = spectral.gradient_hat(a_hat, wn)
    return spectral.irfft3(a_hat, grid.n)


def gradient(f: VelocityField) -> np.ndarray:
    """Jacobian ``J[i, j] = d_j u_i`` of shape ``(3, 3, n, n, n)``."""
    return spectral_derivatives(f.samples, f.grid, 1)


def hessian(f: VelocityField) -> np.ndarray:
    """Second derivatives ``H[i, j, k] = d_j d_k u_i``."""
    return spectral_derivatives(f.samples, f.grid, 2)


# --- datum generators -------------------------------------------------------

def _curl_bump(x, center, axis, width, potential):
    """``curl(potential * exp(-|x-c|^2 / 2 width^2) * axis)`` at coordinates ``x``."""
    d = [x[i] - center[i] for i in range(3)]
    g = potential * np.exp(-(d[0] ** 2 + d[1] ** 2 + d[2] ** 2) / (2.0 * width**2))
    grad = [-d[i] / width**2 * g for i in range(3)]
    e = axis
    return np.stack(
        np.broadcast_arrays(
            grad[1] * e[2] - grad[2] * e[1],
            grad[2] * e[0] - grad[0] * e[2],
            grad[0] * e[1] - grad[1] * e[0],
        )
    )


def boundary_mass_fraction(f: VelocityField) -> float:
    """Share of ``int |f|^3`` lying within ``extent/4`` of the cube boundary."""
    cube = np.sum(f.samples**2, axis=0) ** 1.5
    total = float(cube.sum())
    if total == 0.0:
        return 0.0
    x1, x2, x3 = f.grid.mesh()
    quarter = 0.25 * f.grid.extent
    outer = (np.abs(x1) > quarter) | (np.abs(x2) > quarter) | (np.abs(x3) > quarter)
    return float(cube[outer].sum()) / total


DATUM_KINDS = ("curl_gaussian", "dipole")


def make_datum(
    kind: str,
    amplitude: float,
    scale: float,
    grid: GridSpec,
    lam: float = 1.0,
    axis: Sequence[float] = (0.0, 0.0, 1.0),
    center: Sequence[float] = (0.0, 0.0, 0.0),
) -> VelocityField:
    """Divergence-free, rapidly decaying initial datum.

    ``curl_gaussian`` is the curl of a Gaussian vector potential of width
    ``scale``, normalised so its continuum L^3 norm equals ``amplitude``.
    ``dipole`` is two such bumps of opposite sign offset by ``+-scale`` along
    the first axis orthogonal to ``axis``.  ``lam`` applies the critical
    rescaling ``U(x) -> lam * U(lam * x)``, which leaves the L^3 norm unchanged.
    The result is Leray-projected so it is discretely solenoidal.
    """
    if kind not in DATUM_KINDS:
        raise ValueError(f"unknown datum kind {kind!r}; expected one of {DATUM_KINDS}")
    if scale <= 0 or lam <= 0:
        raise ValueError("scale and lam must be positive")
    if amplitude == 0:
        return VelocityField.zeros(grid)
    e = np.asarray(axis, dtype=float)
    e = e / np.linalg.norm(e)
    c = np.asarray(center, dtype=float)
    x = [lam * xi for xi in grid.mesh()]
    potential = amplitude / CURL_GAUSSIAN_L3
    if kind == "curl_gaussian":
        u = _curl_bump(x, c, e, scale, potential)
    else:
        offset = _orthogonal(e) * scale
        u = _curl_bump(x, c + offset, e, scale, potential) - _curl_bump(x, c - offset, e, scale, potential)
    field_ = leray_project(VelocityField(grid, lam * u))
    frac = boundary_mass_fraction(field_)
    if frac > BOUNDARY_MASS_TOL:
        raise ValueError(
            f"scale too large for extent: {frac:.2e} of |U|^3 lies within extent/4 of the boundary "
            f"(limit {BOUNDARY_MASS_TOL:g}); periodic images would contaminate the datum"
        )
    return field_


def _orthogonal(e: np.ndarray) -> np.ndarray:
    trial = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    v = trial - e * (trial @ e)
    return v / np.linalg.norm(v)


def random_datum(
    grid: GridSpec,
    rng: np.random.Generator,
    amplitude: tuple[float, float] = (0.02, 0.1),
    scale: tuple[float, float] | None = None,
    bumps: int = 3,
) -> VelocityField:
    """Sum of randomly oriented curl-Gaussian bumps near the cube centre.

    Widths default to ``[0.7, 1.0] * extent / 16`` (the boundary-mass limit);
    offsets are at most a quarter width so the datum stays concentrated.
    """
    if scale is None:
        scale = (0.7 * grid.extent / 16, grid.extent / 16)
    x = grid.mesh()
    total = np.zeros((3, grid.n, grid.n, grid.n))
    for _ in range(bumps):
        e = rng.normal(size=3)
        e /= np.linalg.norm(e)
        width = rng.uniform(*scale)
        amp = rng.uniform(*amplitude) * rng.choice((-1.0, 1.0))
        c = rng.uniform(-0.25, 0.25, size=3) * width
        total += _curl_bump(x, c, e, width, amp / CURL_GAUSSIAN_L3)
    return leray_project(VelocityField(grid, total))
