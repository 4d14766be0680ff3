"""FFT plumbing shared by every field operation.

All transforms act on the last three axes of an array.  Real transforms use the
``rfftn`` half-spectrum layout; wavenumber tables are cached per grid.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

AXES = (-3, -2, -1)


def workers() -> int:
    """Thread count for FFTs, read from ``MILDNS_THREADS`` (default 1)."""
    value = os.environ.get("MILDNS_THREADS", "")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def rfft3(a: np.ndarray) -> np.ndarray:
    return sfft.rfftn(a, axes=AXES, workers=workers())


def irfft3(a_hat: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfftn(a_hat, s=(n, n, n), axes=AXES, workers=workers())


@dataclass(frozen=True)
class Wavenumbers:
    """Wavenumber tables for an ``n``-point periodic cube of side ``extent``.

    ``k`` holds the derivative wavenumbers with the Nyquist entries zeroed (odd
    derivatives of a real field have no real Nyquist component).  ``k2`` is the
    full symbol of ``-Laplacian``, Nyquist included.
    """

    n: int
    extent: float
    k: tuple[np.ndarray, np.ndarray, np.ndarray]
    k2: np.ndarray
    kd2: np.ndarray
    kd2_safe: np.ndarray


@lru_cache(maxsize=16)
def wavenumbers(n: int, extent: float) -> Wavenumbers:
    base = 2.0 * np.pi / extent
    full = np.fft.fftfreq(n, d=1.0 / n) * base
    half = np.fft.rfftfreq(n, d=1.0 / n) * base
    deriv_full = full.copy()
    deriv_full[n // 2] = 0.0
    deriv_half = half.copy()
    deriv_half[-1] = 0.0

    k2 = full[:, None, None] ** 2 + full[None, :, None] ** 2 + half[None, None, :] ** 2
    k = (
        deriv_full[:, None, None],
        deriv_full[None, :, None],
        deriv_half[None, None, :],
    )
    kd2 = k[0] ** 2 + k[1] ** 2 + k[2] ** 2
    kd2_safe = np.where(kd2 == 0.0, 1.0, kd2)
    for arr in (k2, kd2, kd2_safe, *k):
        arr.setflags(write=False)
    return Wavenumbers(n=n, extent=extent, k=k, k2=k2, kd2=kd2, kd2_safe=kd2_safe)


def leray_hat(u_hat: np.ndarray, wn: Wavenumbers) -> np.ndarray:
    """Apply ``I - k k^T / |k|^2`` to a half-spectrum vector field (leading axis 3)."""
    kdotu = wn.k[0] * u_hat[..., 0, :, :, :] + wn.k[1] * u_hat[..., 1, :, :, :] + wn.k[2] * u_hat[..., 2, :, :, :]
    kdotu = kdotu / wn.kd2_safe
    out = np.empty_like(u_hat)
    for i in range(3):
        out[..., i, :, :, :] = u_hat[..., i, :, :, :] - wn.k[i] * kdotu
    return out


def divergence_hat(u_hat: np.ndarray, wn: Wavenumbers) -> np.ndarray:
    return 1j * (wn.k[0] * u_hat[..., 0, :, :, :] + wn.k[1] * u_hat[..., 1, :, :, :] + wn.k[2] * u_hat[..., 2, :, :, :])


def gradient_hat(a_hat: np.ndarray, wn: Wavenumbers) -> np.ndarray:
    """Append a trailing derivative axis: ``out[..., j, :, :, :] = d_j a``."""
    return np.stack([1j * wn.k[j] * a_hat for j in range(3)], axis=-4)
