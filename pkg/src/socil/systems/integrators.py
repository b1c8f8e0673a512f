"""Fixed-step integration of continuous-time dynamics."""

from __future__ import annotations

import numpy as np


class IntegrationError(ArithmeticError):
    pass


def rk4(f_continuous, x, u, theta, dt):
    """Classical RK4 step; traceable (no value checks)."""
    k1 = f_continuous(x, u, theta)
    k2 = f_continuous(x + 0.5 * dt * k1, u, theta)
    k3 = f_continuous(x + 0.5 * dt * k2, u, theta)
    k4 = f_continuous(x + dt * k3, u, theta)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(f_continuous, x, u, theta, dt: float) -> np.ndarray:
    """One RK4 step with finiteness checks on every stage."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    stages = []
    xi = x
    for i, frac in enumerate((0.0, 0.5, 0.5, 1.0)):
        if i:
            xi = x + frac * dt * stages[-1]
        k = np.asarray(f_continuous(xi, u, theta), dtype=float)
        if not np.all(np.isfinite(k)):
            raise IntegrationError(f"non-finite derivative in RK4 stage {i + 1}")
        stages.append(k)
    k1, k2, k3, k4 = stages
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
