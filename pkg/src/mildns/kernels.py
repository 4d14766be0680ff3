"""Heat semigroup, Duhamel nonlinear term, pressure and the Oseen tensor.

The nonlinear term is computed in Fourier space as
``N(a, b)(t) = int_0^t exp((t - s) Lap) P div(a (x) b)(s) ds``, which is the
Oseen-kernel convolution for solenoidal ``a, b``.  The time integral uses
exponential product integration: the forcing is interpolated by a polynomial
on each mesh interval and the heat factor is integrated exactly per mode.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from . import spectral
from .fields import GridSpec, ScalarField, Trajectory, VelocityField, max_divergence_ratio

SOLENOIDAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class TimeMesh:
    """Quadrature nodes ``0 < tau_1 < ... < tau_M = t_final``.

    Use :meth:`graded` for the standard mesh.  The explicit constructor accepts
    arbitrary increasing nodes, e.g. a mesh refined toward ``t = 0``.
    """

    t_final: float
    nodes: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=np.float64)
        if nodes.ndim != 1 or nodes.size < 8:
            raise ValueError(f"TimeMesh needs at least 8 nodes, got {nodes.size}")
        if nodes[0] <= 0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("TimeMesh nodes must be positive and strictly increasing")
        if not math.isclose(nodes[-1], self.t_final, rel_tol=1e-14):
            raise ValueError("last node must equal t_final")
        if self.gamma < 1:
            raise ValueError("grading exponent must be >= 1")
        nodes[-1] = self.t_final
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def graded(cls, t_final: float, M: int = 64, gamma: float = 2.0) -> "TimeMesh":
        """Nodes ``t/2 (2s)^gamma`` for ``s = j/M <= 1/2``, mirrored about ``t/2``."""
        if not t_final > 0:
            raise ValueError(f"t_final must be positive, got {t_final!r}")
        s = np.arange(1, M + 1) / M
        lower = 0.5 * t_final * (2 * s) ** gamma
        upper = t_final - 0.5 * t_final * (2 * (1 - s)) ** gamma
        return cls(float(t_final), np.where(s <= 0.5, lower, upper), float(gamma))

    @classmethod
    def geometric(cls, t_final: float, M: int, t_first: float) -> "TimeMesh":
        """Log-spaced nodes from ``t_first`` to ``t_final``, for horizons much longer than the datum's time scale."""
        if not 0 < t_first < t_final:
            raise ValueError("need 0 < t_first < t_final")
        return cls(float(t_final), np.geomspace(t_first, t_final, M), 1.0)

    @property
    def M(self) -> int:
        return self.nodes.size

    @property
    def knots(self) -> np.ndarray:
        """Nodes with ``0`` prepended."""
        return np.concatenate(([0.0], self.nodes))

    def refined(self) -> "TimeMesh":
        return TimeMesh.graded(self.t_final, 2 * self.M, self.gamma)

    def descriptor(self) -> dict:
        return {"t_final": self.t_final, "M": self.M, "gamma": self.gamma, "first_node": float(self.nodes[0])}


def heat_symbol(grid: GridSpec, t: float) -> np.ndarray:
    return np.exp(-t * grid.wavenumbers().k2)


def heat_propagate(f: VelocityField, t: float) -> VelocityField:
    """``H(t) * f``: multiply every Fourier mode by ``exp(-t |k|^2)``."""
    if not t >= 0:
        raise ValueError(f"t must be nonnegative, got {t!r}")
    if t == 0:
        return VelocityField(f.grid, f.samples, f.time_label)
    out = spectral.irfft3(spectral.rfft3(f.samples) * heat_symbol(f.grid, t), f.grid.n)
    return VelocityField(f.grid, out, f.time_label + t)


def heat_trajectory(f: VelocityField, mesh: TimeMesh) -> Trajectory:
    """Heat flow of ``f`` sampled at every mesh node, with ``f`` as the initial state."""
    f_hat = spectral.rfft3(f.samples)
    k2 = f.grid.wavenumbers().k2
    samples = np.empty((mesh.M, 3) + (f.grid.n,) * 3)
    for j, t in enumerate(mesh.nodes):
        samples[j] = spectral.irfft3(f_hat * np.exp(-t * k2), f.grid.n)
    return Trajectory(f.grid, mesh.nodes, samples, initial=f.samples)


# --- exponential product integration ----------------------------------------

def _nu(z: np.ndarray, order: int) -> list[np.ndarray]:
    """``nu_p(z) = int_0^1 exp(-z v) v^p dv`` for ``p = 0..order``."""
    z = np.asarray(z, dtype=np.float64)
    out = [np.empty_like(z) for _ in range(order + 1)]
    small = z <= 1.0
    zs = z[small]
    term = np.ones_like(zs)
    sums = [term / (p + 1) for p in range(order + 1)]
    for k in range(1, 30):
        term = term * (-zs) / k
        for p in range(order + 1):
            sums[p] = sums[p] + term / (k + p + 1)
    zl = z[~small]
    e = np.exp(-zl)
    big = [-np.expm1(-zl) / zl]
    for p in range(1, order + 1):
        big.append((p * big[-1] - e) / zl)
    for p in range(order + 1):
        out[p][small] = sums[p]
        out[p][~small] = big[p]
    return out


def _moments(z: np.ndarray, order: int) -> list[np.ndarray]:
    """``m_p(z) = int_0^1 exp(-z (1 - u)) u^p du`` via ``v = 1 - u``."""
    nu = _nu(z, order)
    if order == 1:
        return [nu[0], nu[0] - nu[1]]
    return [nu[0], nu[0] - nu[1], nu[0] - 2 * nu[1] + nu[2]]


def _lagrange_coefficients(u_points: np.ndarray) -> np.ndarray:
    """Row ``i`` holds the monomial coefficients of the ``i``-th Lagrange basis polynomial."""
    V = np.vander(u_points, increasing=True)
    return np.linalg.inv(V).T


class _StencilWeights:
    """Per-interval weights ``w_i(k)`` with ``int_0^h exp(-(h - s)|k|^2) g ds = sum_i w_i g_i``."""

    def __init__(self, k2: np.ndarray, knots: np.ndarray, order: int):
        self.k2 = k2
        self.knots = knots
        self.order = order

    def stencil(self, j: int) -> list[int]:
        """Knot indices interpolating the forcing on ``[knots[j], knots[j+1]]``."""
        if self.order == 1:
            return [j, j + 1]
        return [0, 1, 2] if j == 0 else [j - 1, j, j + 1]

    def __call__(self, j: int) -> tuple[list[int], list[np.ndarray], np.ndarray]:
        t0, t1 = self.knots[j], self.knots[j + 1]
        h = t1 - t0
        idx = self.stencil(j)
        u = (self.knots[idx] - t0) / h
        coef = _lagrange_coefficients(u)
        z = h * self.k2
        m = _moments(z, self.order)
        weights = [h * sum(coef[i, p] * m[p] for p in range(self.order + 1)) for i in range(len(idx))]
        return idx, weights, np.exp(-z)


def duhamel(forcing, grid: GridSpec, mesh: TimeMesh, order: int = 2) -> np.ndarray:
    """``int_0^t exp((t - s) Lap) g(s) ds`` at every mesh node, as physical samples.

    ``forcing(j)`` returns the half-spectrum of ``g`` at knot ``j`` (knot 0 is
    ``t = 0``).  Each forcing value is requested a bounded number of times and
    only a few are held at once.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order!r}")
    knots = mesh.knots
    weights = _StencilWeights(grid.wavenumbers().k2, knots, order)
    cache: dict[int, np.ndarray] = {}

    def g(i: int) -> np.ndarray:
        if i not in cache:
            cache[i] = forcing(i)
        return cache[i]

    out = np.empty((mesh.M, 3) + (grid.n,) * 3)
    acc = None
    for j in range(mesh.M):
        idx, w, decay = weights(j)
        step = sum(wi * g(i) for wi, i in zip(w, idx))
        acc = step if acc is None else decay * acc + step
        out[j] = spectral.irfft3(acc, grid.n)
        for key in [k for k in cache if k < j]:
            del cache[key]
    return out


@dataclass
class ProjectionCounter:
    """Counts non-solenoidal inputs that were projected before use."""

    count: int = 0
    worst_ratio: float = 0.0
    events: list = field(default_factory=list)

    def record(self, ratio: float, where: str) -> None:
        self.count += 1
        self.worst_ratio = max(self.worst_ratio, ratio)
        self.events.append(where)


PROJECTION_WARNINGS = ProjectionCounter()


def _solenoidal_samples(samples: np.ndarray, grid: GridSpec, where: str) -> np.ndarray:
    ratio = max_divergence_ratio(VelocityField(grid, samples))
    if ratio <= SOLENOIDAL_TOL:
        return samples
    PROJECTION_WARNINGS.record(ratio, where)
    warnings.warn(f"non-solenoidal input at {where} (ratio {ratio:.2e}); projecting", RuntimeWarning, stacklevel=3)
    wn = grid.wavenumbers()
    return spectral.irfft3(spectral.leray_hat(spectral.rfft3(samples), wn), grid.n)


def projected_flux_divergence(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Half-spectrum of ``P div(a (x) b)``, i.e. ``P sum_j d_j(a_j b_i)``."""
    wn = grid.wavenumbers()
    flux_hat = spectral.rfft3(a[:, None] * b[None, :])
    div = sum(1j * wn.k[j] * flux_hat[j] for j in range(3))
    return spectral.leray_hat(div, wn)


def _check_history(x: Trajectory, mesh: TimeMesh, grid: GridSpec, name: str) -> None:
    if x.grid != grid:
        raise ValueError(f"{name}: grid mismatch")
    if len(x) != mesh.M or not np.allclose(x.times, mesh.nodes, rtol=1e-12, atol=0.0):
        raise ValueError(f"{name}: history nodes do not match the time mesh")
    if x.initial is None:
        raise ValueError(f"{name}: history needs its t = 0 state")


def nonlinear_history(
    a: Trajectory, b: Trajectory, mesh: TimeMesh, order: int = 2, check_solenoidal: bool = True
) -> Trajectory:
    """``N(a, b)`` at every mesh node; the ``t = 0`` state is zero."""
    grid = a.grid
    _check_history(a, mesh, grid, "a")
    _check_history(b, mesh, grid, "b")

    def state(x: Trajectory, i: int) -> np.ndarray:
        return x.initial if i == 0 else x.samples[i - 1]

    def forcing(i: int) -> np.ndarray:
        ai, bi = state(a, i), state(b, i)
        if check_solenoidal:
            ai = _solenoidal_samples(ai, grid, f"a[{i}]")
            bi = ai if b is a else _solenoidal_samples(bi, grid, f"b[{i}]")
        return projected_flux_divergence(ai, bi, grid)

    samples = duhamel(forcing, grid, mesh, order)
    return Trajectory(grid, mesh.nodes, samples, initial=np.zeros((3,) + (grid.n,) * 3))


def nonlinear_term(
    a: Trajectory, b: Trajectory, mesh: TimeMesh, t: float | None = None, order: int = 2
) -> VelocityField:
    """``N(a, b)(t)`` for a mesh node ``t`` (default ``t_final``)."""
    hist = nonlinear_history(a, b, mesh, order)
    j = mesh.M - 1 if t is None else hist.index_of(t)
    return hist.at(j)


# --- pressure ----------------------------------------------------------------

def pressure_samples(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Zero-mean solution of ``Lap p = -div div(u (x) u)`` for samples ``(..., 3, n, n, n)``."""
    wn = grid.wavenumbers()
    flux_hat = spectral.rfft3(u[..., :, None, :, :, :] * u[..., None, :, :, :, :])
    kk = sum(wn.k[i] * wn.k[j] * flux_hat[..., i, j, :, :, :] for i in range(3) for j in range(3))
    p_hat = np.where(wn.kd2 == 0.0, 0.0, -kk / wn.kd2_safe)
    return spectral.irfft3(p_hat, grid.n)


def pressure_solve(u: VelocityField) -> ScalarField:
    return ScalarField(u.grid, pressure_samples(u.samples, u.grid))


# --- Oseen tensor --------------------------------------------------------------

@dataclass(frozen=True)
class OseenEval:
    s: float
    z: tuple
    h: int
    value: np.ndarray


@lru_cache(maxsize=4096)
def _gauss_integral(s: float, r: float) -> float:
    """``(pi s)^(-1/2) int_0^r exp(-a^2 / 4s) da`` by adaptive quadrature."""
    val, _ = integrate.quad(lambda a: math.exp(-a * a / (4 * s)), 0.0, r, epsabs=0.0, epsrel=1e-12, limit=200)
    return val / math.sqrt(math.pi * s)


def _phi_series(s: float, x: float) -> tuple[float, float, float, float]:
    """``f(x)`` with ``phi = f(|z|^2)`` and its first three ``x``-derivatives, for ``x < s``."""
    pref = -1.0 / (4 * math.pi * math.sqrt(math.pi * s))
    coeffs = [(-1.0 / (4 * s)) ** k / (math.factorial(k) * (2 * k + 1)) for k in range(40)]
    derivs = []
    for d in range(4):
        total = 0.0
        for k in range(d, len(coeffs)):
            total += coeffs[k] * math.perm(k, d) * x ** (k - d)
        derivs.append(pref * total)
    return tuple(derivs)


def _phi_radial(s: float, r: float) -> tuple[float, float, float, float]:
    """``phi(r)`` and its first three ``r``-derivatives for ``r^2 >= s``."""
    G = _gauss_integral(s, r)
    g1 = math.exp(-r * r / (4 * s)) / math.sqrt(math.pi * s)
    g2 = -r / (2 * s) * g1
    g3 = (r * r / (4 * s * s) - 1 / (2 * s)) * g1
    c = -1.0 / (4 * math.pi)
    return (
        c * G / r,
        c * (g1 / r - G / r**2),
        c * (g2 / r - 2 * g1 / r**2 + 2 * G / r**3),
        c * (g3 / r - 3 * g2 / r**2 + 6 * g1 / r**3 - 6 * G / r**4),
    )


def _phi_derivatives(s: float, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Second and third Cartesian derivative tensors of ``phi(s, .)`` at ``z``."""
    eye = np.eye(3)
    x = float(z @ z)
    if x < s:
        _, f1, f2, f3 = _phi_series(s, x)
        d2 = 2 * f1 * eye + 4 * f2 * np.outer(z, z)
        sym = np.einsum("ij,k->ijk", eye, z) + np.einsum("ik,j->ijk", eye, z) + np.einsum("jk,i->ijk", eye, z)
        d3 = 4 * f2 * sym + 8 * f3 * np.einsum("i,j,k->ijk", z, z, z)
        return d2, d3
    r = math.sqrt(x)
    _, p1, p2, p3 = _phi_radial(s, r)
    e = z / r
    ee = np.outer(e, e)
    d2 = p2 * ee + p1 / r * (eye - ee)
    sym = np.einsum("ij,k->ijk", eye, e) + np.einsum("ik,j->ijk", eye, e) + np.einsum("jk,i->ijk", eye, e)
    d3 = (p3 - 3 * p2 / r + 3 * p1 / r**2) * np.einsum("i,j,k->ijk", e, e, e) + (p2 / r - p1 / r**2) * sym
    return d2, d3


def oseen_point_eval(s: float, z, h: int = 0) -> OseenEval:
    """Oseen tensor ``E_ij = -H delta_ij + d_i d_j phi`` (``h = 0``) or its gradient (``h = 1``).

    For ``h = 1`` the value has shape ``(3, 3, 3)`` with the derivative index last.
    """
    if not s > 0:
        raise ValueError(f"s must be positive, got {s!r}")
    if h not in (0, 1):
        raise ValueError(f"derivative order must be 0 or 1, got {h!r}")
    z = np.asarray(z, dtype=np.float64).reshape(3)
    heat = (4 * math.pi * s) ** -1.5 * math.exp(-float(z @ z) / (4 * s))
    d2, d3 = _phi_derivatives(float(s), z)
    if h == 0:
        value = -heat * np.eye(3) + d2
    else:
        grad_heat = -z / (2 * s) * heat
        value = -np.einsum("ij,k->ijk", np.eye(3), grad_heat) + d3
    return OseenEval(float(s), tuple(float(v) for v in z), h, value)
