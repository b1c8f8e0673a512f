"""Parametric constrained optimal-control problems, trajectories and rollouts.

A :class:`ControlProblem` bundles the horizon, dimensions, initial state and the
cost/dynamics/constraint callables. The callables take ``(x, u, theta)`` (or
``(x, theta)`` for terminal terms) with ``theta`` the *flat* parameter vector
ordered ``[dyn, obj, cstr]``, and must be written with ``jax.numpy`` so they
can be traced, vectorised over time and differentiated.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

Array = np.ndarray


class OCPError(Exception):
    """Base class for errors raised while evaluating a control problem."""


class DimensionError(OCPError, ValueError):
    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


class EvaluationError(OCPError):
    def __init__(self, message: str, time=None, index=None):
        super().__init__(message)
        self.time = time
        self.index = index


class RolloutError(OCPError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


def _readonly(a) -> Array:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ParamVector:
    """Tunable parameter vector, partitioned as ``[dyn, obj, cstr]``."""

    dyn: Array
    obj: Array
    cstr: Array

    def __post_init__(self):
        for name in ("dyn", "obj", "cstr"):
            arr = _readonly(np.atleast_1d(getattr(self, name)).ravel())
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"ParamVector.{name} has non-finite entries")
            object.__setattr__(self, name, arr)

    @classmethod
    def from_flat(cls, values, sizes: Sequence[int]) -> "ParamVector":
        values = np.asarray(values, dtype=float).ravel()
        nd, no, nc = sizes
        if values.size != nd + no + nc:
            raise DimensionError(
                f"expected {nd + no + nc} parameters, got {values.size}", index=values.size
            )
        return cls(values[:nd], values[nd : nd + no], values[nd + no :])

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.dyn.size, self.obj.size, self.cstr.size)

    @property
    def p(self) -> int:
        return sum(self.sizes)

    @property
    def values(self) -> Array:
        return _readonly(np.concatenate([self.dyn, self.obj, self.cstr]))

    def with_values(self, values) -> "ParamVector":
        return ParamVector.from_flat(values, self.sizes)

    def __len__(self) -> int:
        return self.p


@dataclass(frozen=True)
class BoxConstraint:
    """Metadata for a symmetric bound ``|v| <= theta_cstr[cstr_index]``.

    ``kind`` is ``"state"`` or ``"input"`` and ``component`` indexes into the
    state or input vector. Used for violation reporting only; the constraint
    itself lives in the problem's ``ineq_path`` callable.
    """

    family: str
    kind: str
    component: int
    cstr_index: int


def _no_constraint(*args):
    return jnp.zeros(0)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    horizon: int
    state_dim: int
    input_dim: int
    x0: Array
    partition: tuple[int, int, int]
    dynamics: Callable
    stage_cost: Callable
    terminal_cost: Callable
    ineq_path: Optional[Callable] = None
    eq_path: Optional[Callable] = None
    ineq_term: Optional[Callable] = None
    eq_term: Optional[Callable] = None
    # validity box: (lower, upper) arrays; None means unbounded
    state_box: Optional[tuple[Array, Array]] = None
    input_box: Optional[tuple[Array, Array]] = None
    boxes: tuple[BoxConstraint, ...] = ()
    name: str = "problem"
    n_ineq: int = field(init=False)
    n_eq: int = field(init=False)
    n_ineq_term: int = field(init=False)
    n_eq_term: int = field(init=False)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        x0 = _readonly(np.asarray(self.x0, dtype=float).ravel())
        if x0.size != self.state_dim:
            raise DimensionError(f"x0 has length {x0.size}, expected {self.state_dim}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "partition", tuple(int(k) for k in self.partition))
        for name in ("ineq_path", "eq_path", "ineq_term", "eq_term"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, _no_constraint)

        x = jax.ShapeDtypeStruct((self.state_dim,), jnp.float64)
        u = jax.ShapeDtypeStruct((self.input_dim,), jnp.float64)
        th = jax.ShapeDtypeStruct((self.p,), jnp.float64)
        f_shape = jax.eval_shape(self.dynamics, x, u, th).shape
        if f_shape != (self.state_dim,):
            raise DimensionError(f"dynamics returns shape {f_shape}, expected ({self.state_dim},)")
        object.__setattr__(self, "n_ineq", _count(jax.eval_shape(self.ineq_path, x, u, th)))
        object.__setattr__(self, "n_eq", _count(jax.eval_shape(self.eq_path, x, u, th)))
        object.__setattr__(self, "n_ineq_term", _count(jax.eval_shape(self.ineq_term, x, th)))
        object.__setattr__(self, "n_eq_term", _count(jax.eval_shape(self.eq_term, x, th)))

    @property
    def p(self) -> int:
        return sum(self.partition)

    @property
    def n(self) -> int:
        return self.state_dim

    @property
    def m(self) -> int:
        return self.input_dim

    @property
    def has_constraints(self) -> bool:
        return (self.n_ineq + self.n_eq + self.n_ineq_term + self.n_eq_term) > 0

    def without_constraints(self) -> "ControlProblem":
        """Same dynamics and costs with every explicit constraint removed."""
        return _unconstrained(self)

    @functools.cached_property
    def kernels(self) -> "_Kernels":
        return _Kernels(self)

    def check_theta(self, theta) -> Array:
        values = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, float).ravel()
        if isinstance(theta, ParamVector) and theta.sizes != self.partition:
            raise DimensionError(
                f"parameter partition {theta.sizes} does not match problem {self.partition}"
            )
        if values.size != self.p:
            raise DimensionError(f"theta has {values.size} entries, expected {self.p}", index=values.size)
        return values


def _count(shape_struct) -> int:
    shape = shape_struct.shape
    if len(shape) > 1:
        raise DimensionError(f"constraint function must return a vector, got shape {shape}")
    return int(shape[0]) if shape else 1


@functools.lru_cache(maxsize=None)
def _unconstrained(problem: ControlProblem) -> ControlProblem:
    return ControlProblem(
        horizon=problem.horizon,
        state_dim=problem.state_dim,
        input_dim=problem.input_dim,
        x0=problem.x0,
        partition=problem.partition,
        dynamics=problem.dynamics,
        stage_cost=problem.stage_cost,
        terminal_cost=problem.terminal_cost,
        state_box=problem.state_box,
        input_box=problem.input_box,
        boxes=problem.boxes,
        name=f"{problem.name}-unconstrained",
    )


class _Kernels:
    """Jitted, time-vectorised evaluators of a problem's callables."""

    def __init__(self, problem: ControlProblem):
        f = problem.dynamics

        def _rollout(x0, us, th):
            def step(x, u):
                x_next = f(x, u, th)
                return x_next, x_next

            _, xs = jax.lax.scan(step, x0, us)
            return jnp.concatenate([x0[None, :], xs], axis=0)

        def _stage(x, u, th):
            return (
                jnp.reshape(problem.stage_cost(x, u, th), ()),
                jnp.atleast_1d(problem.ineq_path(x, u, th)),
                jnp.atleast_1d(problem.eq_path(x, u, th)),
            )

        def _terminal(x, th):
            return (
                jnp.reshape(problem.terminal_cost(x, th), ()),
                jnp.atleast_1d(problem.ineq_term(x, th)),
                jnp.atleast_1d(problem.eq_term(x, th)),
            )

        self.rollout = jax.jit(_rollout)
        self.stage_values = jax.jit(jax.vmap(_stage, in_axes=(0, 0, None)))
        self.terminal_values = jax.jit(_terminal)
        self.step_all = jax.jit(jax.vmap(f, in_axes=(0, 0, None)))


@dataclass(frozen=True)
class Trajectory:
    """States ``x_0..x_T`` and inputs ``u_0..u_{T-1}``."""

    states: Array
    inputs: Array
    rolled_out: bool = False
    theta: Optional[Array] = None

    def __post_init__(self):
        states = _readonly(np.atleast_2d(self.states))
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        inputs = _readonly(inputs)
        if states.shape[0] != inputs.shape[0] + 1:
            raise DimensionError(
                f"trajectory has {states.shape[0]} states and {inputs.shape[0]} inputs; "
                "expected exactly one more state than inputs",
                index=states.shape[0],
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        if self.theta is not None:
            object.__setattr__(self, "theta", _readonly(np.asarray(self.theta).ravel()))

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def stage(self, t: int) -> Array:
        """Stacked ``(x_t, u_t)``; at ``t == T`` the input slot is zero-filled."""
        if t < 0 or t > self.horizon:
            raise IndexError(f"stage index {t} outside 0..{self.horizon}")
        u = self.inputs[t] if t < self.horizon else np.zeros(self.inputs.shape[1])
        return np.concatenate([self.states[t], u])

    @property
    def xi(self) -> Array:
        """Flat ``col{x_0..x_T, u_0..u_{T-1}}``."""
        return np.concatenate([self.states.ravel(), self.inputs.ravel()])


@dataclass(frozen=True)
class ConstraintValues:
    ineq: Array  # (T, q)
    eq: Array  # (T, s)
    ineq_term: Array  # (q_T,)
    eq_term: Array  # (s_T,)

    def max_ineq(self) -> float:
        vals = [v.max() for v in (self.ineq, self.ineq_term) if v.size]
        return float(max(vals)) if vals else -np.inf


def _check_traj(problem: ControlProblem, traj: Trajectory) -> None:
    if traj.horizon != problem.horizon:
        raise DimensionError(
            f"trajectory horizon {traj.horizon} != problem horizon {problem.horizon}",
            index=traj.horizon,
        )
    if traj.states.shape[1] != problem.n:
        raise DimensionError(f"state dimension {traj.states.shape[1]} != {problem.n}", index=1)
    if traj.inputs.shape[1] != problem.m:
        raise DimensionError(f"input dimension {traj.inputs.shape[1]} != {problem.m}", index=1)


def evaluate_cost(problem: ControlProblem, traj: Trajectory, theta) -> float:
    """Total cost ``sum_t c_t(x_t, u_t) + c_T(x_T)``."""
    th = problem.check_theta(theta)
    _check_traj(problem, traj)
    stage, _, _ = problem.kernels.stage_values(traj.states[:-1], traj.inputs, th)
    term, _, _ = problem.kernels.terminal_values(traj.states[-1], th)
    stage = np.asarray(stage)
    bad = np.flatnonzero(~np.isfinite(stage))
    if bad.size:
        raise EvaluationError(f"non-finite stage cost at t={bad[0]}", time=int(bad[0]))
    if not np.isfinite(term):
        raise EvaluationError("non-finite terminal cost", time=problem.horizon)
    return float(stage.sum() + float(term))


def evaluate_constraints(problem: ControlProblem, traj: Trajectory, theta) -> ConstraintValues:
    """Raw constraint values in declared order (no clipping)."""
    th = problem.check_theta(theta)
    _check_traj(problem, traj)
    _, g, h = problem.kernels.stage_values(traj.states[:-1], traj.inputs, th)
    _, gT, hT = problem.kernels.terminal_values(traj.states[-1], th)
    out = ConstraintValues(
        np.asarray(g).reshape(problem.horizon, problem.n_ineq),
        np.asarray(h).reshape(problem.horizon, problem.n_eq),
        np.asarray(gT).reshape(problem.n_ineq_term),
        np.asarray(hT).reshape(problem.n_eq_term),
    )
    for label, vals in (("ineq", out.ineq), ("eq", out.eq)):
        bad = np.argwhere(~np.isfinite(vals))
        if bad.size:
            t, i = bad[0]
            raise EvaluationError(f"non-finite {label} constraint {i} at t={t}", time=int(t), index=int(i))
    for label, vals in (("ineq_term", out.ineq_term), ("eq_term", out.eq_term)):
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise EvaluationError(
                f"non-finite {label} constraint {bad[0]} at t={problem.horizon}",
                time=problem.horizon,
                index=int(bad[0]),
            )
    return out


def first_invalid_step(problem: ControlProblem, states: Array) -> Optional[int]:
    """Index of the first state that is non-finite or outside the validity box."""
    bad = ~np.all(np.isfinite(states), axis=1)
    if problem.state_box is not None:
        lo, hi = problem.state_box
        with np.errstate(invalid="ignore"):
            bad |= np.any((states < lo) | (states > hi), axis=1)
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else None


def rollout(problem: ControlProblem, theta, inputs) -> Trajectory:
    """Iterate the dynamics from ``x0`` under ``inputs``."""
    th = problem.check_theta(theta)
    us = np.asarray(inputs, dtype=float)
    if us.ndim == 1:
        us = us.reshape(-1, problem.m)
    if us.shape != (problem.horizon, problem.m):
        raise DimensionError(
            f"inputs have shape {us.shape}, expected {(problem.horizon, problem.m)}", index=us.shape[0]
        )
    if problem.input_box is not None:
        lo, hi = problem.input_box
        bad = np.flatnonzero(np.any((us < lo) | (us > hi) | ~np.isfinite(us), axis=1))
        if bad.size:
            raise RolloutError(f"input outside validity box at t={bad[0]}", step=int(bad[0]))
    xs = np.asarray(problem.kernels.rollout(problem.x0, us, th))
    bad = first_invalid_step(problem, xs)
    if bad is not None:
        raise RolloutError(f"state diverged or left validity box at t={bad}", step=bad)
    return Trajectory(xs, us, rolled_out=True, theta=th)


def dynamics_residual(problem: ControlProblem, traj: Trajectory, theta) -> float:
    """``max_t ||x_{t+1} - f(x_t, u_t)||_inf``."""
    th = problem.check_theta(theta)
    pred = np.asarray(problem.kernels.step_all(traj.states[:-1], traj.inputs, th))
    return float(np.max(np.abs(traj.states[1:] - pred)))
