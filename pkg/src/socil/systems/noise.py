"""Noisy measurements with replayable, index-keyed Gaussian streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from socil.estimator import MeasurementModel


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def gaussian(seed: int, t: int, size: int) -> np.ndarray:
    """Standard normals that depend only on ``(seed, t)``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(t)])))
    return rng.standard_normal(size)


def measure(xi_t, model: MeasurementModel, noise: NoiseConfig, t: int) -> np.ndarray:
    """``z(xi_t) + v_t`` with ``v_t ~ N(0, sigma^2 I)`` keyed by ``(seed, t)``."""
    clean = np.asarray(model.z(np.asarray(xi_t, dtype=float)), dtype=float).ravel()
    if noise.sigma == 0:
        return clean
    return clean + noise.sigma * gaussian(noise.seed, t, clean.size)
