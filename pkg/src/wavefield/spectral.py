"""Fourier machinery on a periodic 1D grid with unit spacing.

All operators act along the last axis, so a batch of fields can be passed
as an array of shape ``(..., n)``.
"""
from __future__ import annotations

import numpy as np


class InvalidGridError(ValueError):
    pass


def as_field(values, name: str = "field") -> np.ndarray:
    """Validate and return ``values`` as a float64 array with spatial last axis."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] < 2:
        raise InvalidGridError(f"{name}: grid needs at least 2 points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def wavenumbers(n: int) -> np.ndarray:
    """Angular wavenumbers ``2*pi*m/n`` in FFT order (negative half for m > n/2)."""
    if int(n) != n or n < 2:
        raise InvalidGridError(f"grid size must be an integer >= 2, got {n!r}")
    n = int(n)
    m = np.arange(n)
    m = np.where(m <= n // 2, m, m - n)
    omegas = 2.0 * np.pi * m / n
    omegas.flags.writeable = False
    return omegas


def _half_wavenumbers(n: int) -> np.ndarray:
    # rfft layout: m = 0 .. n//2
    return 2.0 * np.pi * np.arange(n // 2 + 1) / n


_LAPLACE_CACHE: dict[int, np.ndarray] = {}
_GRAD_CACHE: dict[int, np.ndarray] = {}


def laplacian_symbol(n: int) -> np.ndarray:
    """Multiplier ``-omega**2`` in rfft layout (Nyquist term kept)."""
    sym = _LAPLACE_CACHE.get(n)
    if sym is None:
        sym = -_half_wavenumbers(n) ** 2
        sym.flags.writeable = False
        _LAPLACE_CACHE[n] = sym
    return sym


def gradient_symbol(n: int) -> np.ndarray:
    """Multiplier ``i*omega`` in rfft layout, with the Nyquist term zeroed."""
    sym = _GRAD_CACHE.get(n)
    if sym is None:
        sym = 1j * _half_wavenumbers(n)
        if n % 2 == 0:
            sym[-1] = 0.0
        sym.flags.writeable = False
        _GRAD_CACHE[n] = sym
    return sym


def spectral_laplacian(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[-1]
    F = np.fft.rfft(f, axis=-1)
    F *= laplacian_symbol(n)
    return np.fft.irfft(F, n=n, axis=-1)


def spectral_gradient(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[-1]
    return np.fft.irfft(gradient_symbol(n) * np.fft.rfft(f, axis=-1), n=n, axis=-1)


def stability_bound(c_max: float) -> float:
    """Largest stable undamped Verlet step for wave speed ``c_max`` (omega_max = pi)."""
    return 2.0 / (np.pi * c_max)
