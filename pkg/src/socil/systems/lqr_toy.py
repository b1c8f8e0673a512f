"""Scalar integrator ``x' = x + u`` with cost ``theta x^2 + u^2`` (closed forms known).

Used as an analytic oracle. With an input bound the problem gains the
constraint ``|u| <= bound`` and the bound becomes the single ``cstr`` parameter.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional

import jax.numpy as jnp
import numpy as np

from socil.problem import BoxConstraint, ControlProblem, ParamVector


@dataclass(frozen=True)
class LqrToySpec:
    theta: float = 1.0
    x0: float = 1.0
    horizon: int = 1
    u_bound: Optional[float] = None

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.u_bound is not None and not self.u_bound > 0:
            raise ValueError("u_bound must be positive")

    def true_theta(self) -> ParamVector:
        cstr = [] if self.u_bound is None else [self.u_bound]
        return ParamVector([], [self.theta], cstr)


@functools.lru_cache(maxsize=None)
def build_lqr_toy(spec: LqrToySpec = LqrToySpec()) -> ControlProblem:
    def dynamics(x, u, th):
        return x + u

    def stage_cost(x, u, th):
        return th[0] * jnp.sum(x**2) + jnp.sum(u**2)

    def terminal_cost(x, th):
        return th[0] * jnp.sum(x**2)

    ineq_path = None
    boxes = ()
    if spec.u_bound is not None:

        def ineq_path(x, u, th):
            return jnp.stack([u[0] - th[1], -u[0] - th[1]])

        boxes = (BoxConstraint("u", "input", 0, 0),)

    return ControlProblem(
        horizon=spec.horizon,
        state_dim=1,
        input_dim=1,
        x0=np.array([spec.x0]),
        partition=(0, 1, 0 if spec.u_bound is None else 1),
        dynamics=dynamics,
        stage_cost=stage_cost,
        terminal_cost=terminal_cost,
        ineq_path=ineq_path,
        state_box=(np.array([-1e6]), np.array([1e6])),
        boxes=boxes,
        name="lqr-toy",
    )


def closed_form_input(theta: float, x0: float = 1.0) -> float:
    """Minimiser of ``theta x0^2 + u^2 + theta (x0 + u)^2`` (horizon 1)."""
    return -theta * x0 / (1.0 + theta)


def closed_form_input_sensitivity(theta: float, x0: float = 1.0) -> float:
    """``d u_0 / d theta`` for horizon 1."""
    return -x0 / (1.0 + theta) ** 2


def clamped_solution(theta: float, bound: float, x0: float = 1.0) -> tuple[float, float]:
    """Constrained horizon-1 solution ``(u_0, x_1)`` with ``|u_0| <= bound``."""
    u = float(np.clip(closed_form_input(theta, x0), -bound, bound))
    return u, x0 + u
