"""Local-statistics despeckling filters (Lee, Kuan).

Both filters estimate, per pixel, the window mean ``m`` and variance ``v``
of the noisy intensity and blend ``m + k (y - m)`` with a gain driven by the
ratio of the speckle coefficient of variation ``Cu^2 = 1/L`` to the local
one ``Cy^2 = v / m^2``.

Window sums are accumulated offset by offset in row-major order. Every
pixel therefore sees the same floating-point summation order a plain scalar
loop over the window would use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContractError


@dataclass(frozen=True)
class FilterConfig:
    window: int = 7
    looks: int = 1

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.looks < 1:
            raise ValueError(f"looks must be >= 1, got {self.looks}")


def _as_plane(noisy) -> tuple[np.ndarray, tuple[int, ...]]:
    arr = np.asarray(noisy, dtype=float)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ContractError(f"filters take single-channel images, got {arr.shape[0]} channels")
        return arr[0], arr.shape
    if arr.ndim == 2:
        return arr, arr.shape
    raise ContractError(f"expected H×W or 1×H×W image, got shape {arr.shape}")


def local_moments(plane: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Window mean and (population) variance with mirror padding at borders."""
    r = window // 2
    h, w = plane.shape
    padded = np.pad(plane, r, mode="reflect")
    n = window * window
    total = np.zeros_like(plane)
    for di in range(window):
        for dj in range(window):
            total = total + padded[di:di + h, dj:dj + w]
    m = total / n
    dev = np.zeros_like(plane)
    for di in range(window):
        for dj in range(window):
            d = padded[di:di + h, dj:dj + w] - m
            dev = dev + d * d
    return m, dev / n


def _cy2(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(m != 0, v / (m * m), 0.0)


def lee_gain(cy2: np.ndarray, cu2: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(cy2 > 0, 1.0 - cu2 / cy2, 0.0)
    return np.clip(k, 0.0, 1.0)


def kuan_gain(cy2: np.ndarray, cu2: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(cy2 > 0, (1.0 - cu2 / cy2) / (1.0 + cu2), 0.0)
    return np.clip(k, 0.0, 1.0)


def _adaptive(noisy, cfg: FilterConfig, gain) -> np.ndarray:
    y, shape = _as_plane(noisy)
    if np.any(y < 0):
        raise ContractError("intensity image must be non-negative")
    m, v = local_moments(y, cfg.window)
    k = gain(_cy2(m, v), 1.0 / cfg.looks)
    return (m + k * (y - m)).reshape(shape)


def lee_filter(noisy, cfg: FilterConfig = FilterConfig()) -> np.ndarray:
    """Lee filter of an intensity image (H×W or 1×H×W)."""
    return _adaptive(noisy, cfg, lee_gain)


def kuan_filter(noisy, cfg: FilterConfig = FilterConfig()) -> np.ndarray:
    """Kuan filter; same statistics as Lee with the gain shrunk by ``1 + Cu^2``."""
    return _adaptive(noisy, cfg, kuan_gain)
