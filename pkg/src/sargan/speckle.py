"""Multiplicative Gamma speckle.

An L-look intensity observation of a clean image ``X`` is ``Y = F * X``
where the fading ``F`` is Gamma distributed with shape ``L`` and scale
``1/L`` (unit mean, variance ``1/L``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError


@dataclass(frozen=True)
class SpeckleParams:
    looks: int = 1
    seed: int = 0

    def __post_init__(self):
        if int(self.looks) != self.looks or self.looks < 1:
            raise ValueError(f"number of looks must be an integer >= 1, got {self.looks}")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; identical draws on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


def gamma_pdf(f: float, looks: int) -> float:
    """Density of unit-mean Gamma fading with ``looks`` looks at ``f``."""
    if looks < 1:
        raise ValueError(f"looks must be >= 1, got {looks}")
    if f < 0:
        raise ValueError(f"speckle value must be >= 0, got {f}")
    if f == 0:
        return 1.0 if looks == 1 else 0.0
    L = float(looks)
    # evaluate in log space so large L does not overflow L**L
    return math.exp(L * math.log(L) - math.lgamma(L) + (L - 1.0) * math.log(f) - L * f)


def sample_speckle(shape, params: SpeckleParams | int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw i.i.d. fading values as the mean of ``L`` unit exponentials.

    Pass ``rng`` to continue an existing stream; otherwise a fresh stream
    is seeded from ``params.seed``.
    """
    if not isinstance(params, SpeckleParams):
        params = SpeckleParams(looks=params)
    if rng is None:
        rng = make_rng(params.seed)
    shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
    L = int(params.looks)
    acc = rng.standard_exponential(shape)
    for _ in range(L - 1):
        acc += rng.standard_exponential(shape)
    return acc / L


def apply_speckle(clean: np.ndarray, field: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Elementwise ``field * clean``; clamped into [0, 1] unless ``clamp=False``."""
    clean = np.asarray(clean, dtype=float)
    field = np.asarray(field, dtype=float)
    if clean.shape != field.shape:
        raise DimensionError(f"image {clean.shape} and speckle field {field.shape} differ")
    y = field * clean
    return np.clip(y, 0.0, 1.0) if clamp else y


def speckle_image(clean: np.ndarray, params: SpeckleParams, clamp: bool = False) -> np.ndarray:
    """Convenience: sample a field matching ``clean`` and apply it."""
    field = sample_speckle(np.shape(clean), params)
    return apply_speckle(clean, field, clamp=clamp)
