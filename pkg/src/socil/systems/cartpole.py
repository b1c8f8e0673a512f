"""Frictionless cart-pole (point-mass pole), swing-up task.

State ``[p, q, dp, dq]`` with ``q = 0`` hanging down and ``q = pi`` upright;
input is the horizontal force on the cart. Parameters are
``dyn = [cart_mass, pole_mass, pole_length]``,
``obj = state-error weights (4)`` and ``cstr = [u_max, p_max]``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from socil.problem import BoxConstraint, ControlProblem, ParamVector
from socil.systems.integrators import rk4

INPUT_WEIGHT = 0.01


@dataclass(frozen=True)
class CartpoleSpec:
    cart_mass: float = 1.0  # kg
    pole_mass: float = 0.1  # kg
    pole_length: float = 0.5  # m
    gravity: float = 9.81  # m/s^2
    u_max: float = 12.0  # N
    p_max: float = 0.8  # m
    obj_weights: tuple = (0.3, 0.6, 0.1, 0.1)
    x_goal: tuple = (0.0, np.pi, 0.0, 0.0)
    x0: tuple = (0.0, 0.0, 0.0, 0.0)
    dt: float = 0.1  # s
    horizon: int = 35

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "pole_length", "dt", "u_max", "p_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("obj_weights", "x_goal", "x0"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.x_goal) != 4 or len(self.x0) != 4 or len(self.obj_weights) != 4:
            raise ValueError("x_goal, x0 and obj_weights must have 4 entries")

    def true_theta(self) -> ParamVector:
        return ParamVector(
            [self.cart_mass, self.pole_mass, self.pole_length],
            list(self.obj_weights),
            [self.u_max, self.p_max],
        )


def _derivative(x, u, theta_dyn, gravity):
    mc, mp, l = theta_dyn[0], theta_dyn[1], theta_dyn[2]
    q, dp, dq = x[1], x[2], x[3]
    s, c = jnp.sin(q), jnp.cos(q)
    den = mc + mp * s * s
    ddp = (u[0] + mp * s * (l * dq * dq + gravity * c)) / den
    ddq = (-u[0] * c - mp * l * dq * dq * c * s - (mc + mp) * gravity * s) / (l * den)
    return jnp.stack([dp, dq, ddp, ddq])


def cartpole_dynamics(x, u, theta_dyn, gravity: float = 9.81) -> np.ndarray:
    """Continuous-time state derivative."""
    return np.asarray(_derivative(jnp.asarray(x, float), jnp.atleast_1d(jnp.asarray(u, float)), jnp.asarray(theta_dyn, float), gravity))


def cartpole_energy(x, theta_dyn, gravity: float = 9.81) -> float:
    mc, mp, l = theta_dyn[:3]
    _, q, dp, dq = x
    kinetic = 0.5 * (mc + mp) * dp**2 + mp * l * dp * dq * np.cos(q) + 0.5 * mp * l**2 * dq**2
    return float(kinetic - mp * gravity * l * np.cos(q))


@functools.lru_cache(maxsize=None)
def build_cartpole(spec: CartpoleSpec = CartpoleSpec()) -> ControlProblem:
    goal = jnp.asarray(spec.x_goal)
    dt, grav = spec.dt, spec.gravity

    def f_cont(x, u, th):
        return _derivative(x, u, th[0:3], grav)

    def dynamics(x, u, th):
        return rk4(f_cont, x, u, th, dt)

    def stage_cost(x, u, th):
        w = th[3:7]
        return INPUT_WEIGHT * jnp.sum(u**2) + jnp.sum((w * (x - goal)) ** 2)

    def terminal_cost(x, th):
        w = th[3:7]
        return jnp.sum((w * (x - goal)) ** 2)

    def ineq_path(x, u, th):
        u_max, p_max = th[7], th[8]
        return jnp.stack([x[0] - p_max, -x[0] - p_max, u[0] - u_max, -u[0] - u_max])

    def ineq_term(x, th):
        p_max = th[8]
        return jnp.stack([x[0] - p_max, -x[0] - p_max])

    big = np.array([20.0, 20.0 * np.pi, 100.0, 200.0])
    return ControlProblem(
        horizon=spec.horizon,
        state_dim=4,
        input_dim=1,
        x0=np.asarray(spec.x0),
        partition=(3, 4, 2),
        dynamics=dynamics,
        stage_cost=stage_cost,
        terminal_cost=terminal_cost,
        ineq_path=ineq_path,
        ineq_term=ineq_term,
        state_box=(-big, big),
        input_box=(np.array([-1e3]), np.array([1e3])),
        boxes=(
            BoxConstraint("u", "input", 0, 0),
            BoxConstraint("p", "state", 0, 1),
        ),
        name="cartpole",
    )
