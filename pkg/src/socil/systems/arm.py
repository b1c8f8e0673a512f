"""Two-link planar manipulator with point-mass links.

``M(q) qdd + C(q, qd) qd + G(q) = u``, joint angles measured from the
horizontal. State ``[q1, dq1, q2, dq2]``, input the two joint torques.
Parameters are ``dyn = [m1, m2, l1, l2]``, ``obj`` (4 state-error weights) and
``cstr = [u_max, q_max]``.

Gravity defaults to zero (arm moving in a horizontal plane): with unit masses
and lengths the default torque limit cannot hold the arm against gravity
anywhere inside the joint box.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from socil.problem import BoxConstraint, ControlProblem, ParamVector
from socil.systems.integrators import rk4

INPUT_WEIGHT = 0.01


class SingularMassMatrix(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class TwoLinkArmSpec:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    gravity: float = 0.0
    u_max: float = 8.0  # N m
    q_max: float = float(np.pi / 2)
    obj_weights: tuple = (1.0, 0.1, 1.0, 0.1)
    x_goal: tuple = (1.2, 0.0, -1.0, 0.0)
    x0: tuple = (0.0, 0.0, 0.0, 0.0)
    dt: float = 0.2
    horizon: int = 25

    def __post_init__(self):
        for name in ("m1", "m2", "l1", "l2", "dt", "u_max", "q_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("obj_weights", "x_goal", "x0"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.x_goal) != 4 or len(self.x0) != 4 or len(self.obj_weights) != 4:
            raise ValueError("x_goal, x0 and obj_weights must have 4 entries")

    def true_theta(self) -> ParamVector:
        return ParamVector(
            [self.m1, self.m2, self.l1, self.l2],
            list(self.obj_weights),
            [self.u_max, self.q_max],
        )


def _terms(q1, q2, dq1, dq2, th, gravity, xp):
    m1, m2, l1, l2 = th[0], th[1], th[2], th[3]
    c2 = xp.cos(q2)
    m11 = (m1 + m2) * l1**2 + m2 * l2**2 + 2.0 * m2 * l1 * l2 * c2
    m12 = m2 * l2**2 + m2 * l1 * l2 * c2
    m22 = m2 * l2**2
    h = m2 * l1 * l2 * xp.sin(q2)
    cor1 = -h * (2.0 * dq1 * dq2 + dq2**2)
    cor2 = h * dq1**2
    g1 = (m1 + m2) * gravity * l1 * xp.cos(q1) + m2 * gravity * l2 * xp.cos(q1 + q2)
    g2 = m2 * gravity * l2 * xp.cos(q1 + q2)
    return (m11, m12, m22), (cor1, cor2), (g1, g2)


def _derivative(x, u, th, gravity):
    q1, dq1, q2, dq2 = x[0], x[1], x[2], x[3]
    (m11, m12, m22), (c1, c2), (g1, g2) = _terms(q1, q2, dq1, dq2, th, gravity, jnp)
    r1 = u[0] - c1 - g1
    r2 = u[1] - c2 - g2
    det = m11 * m22 - m12 * m12
    ddq1 = (m22 * r1 - m12 * r2) / det
    ddq2 = (-m12 * r1 + m11 * r2) / det
    return jnp.stack([dq1, ddq1, dq2, ddq2])


def mass_matrix(q, theta_dyn) -> np.ndarray:
    (m11, m12, m22), _, _ = _terms(q[0], q[1], 0.0, 0.0, theta_dyn, 0.0, np)
    return np.array([[m11, m12], [m12, m22]])


def gravity_torque(q, theta_dyn, gravity: float) -> np.ndarray:
    _, _, (g1, g2) = _terms(q[0], q[1], 0.0, 0.0, theta_dyn, gravity, np)
    return np.array([g1, g2])


def arm_dynamics(x, u, theta_dyn, gravity: float = 0.0) -> np.ndarray:
    """Continuous-time state derivative; raises on a near-singular mass matrix."""
    x = np.asarray(x, dtype=float)
    M = mass_matrix((x[0], x[2]), theta_dyn)
    if abs(np.linalg.det(M)) < 1e-9:
        raise SingularMassMatrix("mass matrix is singular")
    return np.asarray(_derivative(jnp.asarray(x), jnp.asarray(u, float), jnp.asarray(theta_dyn, float), gravity))


def arm_energy(x, theta_dyn, gravity: float = 0.0) -> float:
    q1, dq1, q2, dq2 = x
    M = mass_matrix((q1, q2), theta_dyn)
    dq = np.array([dq1, dq2])
    m1, m2, l1, l2 = theta_dyn[:4]
    potential = (m1 + m2) * gravity * l1 * np.sin(q1) + m2 * gravity * l2 * np.sin(q1 + q2)
    return float(0.5 * dq @ M @ dq + potential)


@functools.lru_cache(maxsize=None)
def build_arm(spec: TwoLinkArmSpec = TwoLinkArmSpec()) -> ControlProblem:
    goal = jnp.asarray(spec.x_goal)
    dt, grav = spec.dt, spec.gravity

    def f_cont(x, u, th):
        return _derivative(x, u, th[0:4], grav)

    def dynamics(x, u, th):
        return rk4(f_cont, x, u, th, dt)

    def stage_cost(x, u, th):
        w = th[4:8]
        return INPUT_WEIGHT * jnp.sum(u**2) + jnp.sum((w * (x - goal)) ** 2)

    def terminal_cost(x, th):
        w = th[4:8]
        return jnp.sum((w * (x - goal)) ** 2)

    def ineq_path(x, u, th):
        u_max, q_max = th[8], th[9]
        return jnp.stack(
            [
                x[0] - q_max, -x[0] - q_max,
                x[2] - q_max, -x[2] - q_max,
                u[0] - u_max, -u[0] - u_max,
                u[1] - u_max, -u[1] - u_max,
            ]
        )

    def ineq_term(x, th):
        q_max = th[9]
        return jnp.stack([x[0] - q_max, -x[0] - q_max, x[2] - q_max, -x[2] - q_max])

    big = np.array([10 * np.pi, 100.0, 10 * np.pi, 100.0])
    return ControlProblem(
        horizon=spec.horizon,
        state_dim=4,
        input_dim=2,
        x0=np.asarray(spec.x0),
        partition=(4, 4, 2),
        dynamics=dynamics,
        stage_cost=stage_cost,
        terminal_cost=terminal_cost,
        ineq_path=ineq_path,
        ineq_term=ineq_term,
        state_box=(-big, big),
        input_box=(np.full(2, -1e3), np.full(2, 1e3)),
        boxes=(
            BoxConstraint("u", "input", 0, 0),
            BoxConstraint("u", "input", 1, 0),
            BoxConstraint("q", "state", 0, 1),
            BoxConstraint("q", "state", 2, 1),
        ),
        name="arm",
    )
