"""Solver for the barrier-augmented optimal-control problem.

Iterative LQR on the second-order expansion of the augmented Hamiltonian
(costate-weighted dynamics curvature included, so near a solution the step
is a Newton step), Levenberg shift on ``Q_uu`` and a backtracking line search
on the true augmented cost.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from socil.barrier import AugmentedDerivs, AugmentedProblem
from socil.problem import ControlProblem, RolloutError, Trajectory, first_invalid_step, rollout

_EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 200
    cost_tolerance: float = 1e-8
    gradient_tolerance: float = 1e-6
    initial_regularization: float = 1e-6
    regularization_growth: float = 10.0
    regularization_shrink: float = 0.5
    line_search_shrink: float = 0.5
    min_step: float = 1e-8
    max_regularization: float = 1e10
    second_order: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in (
            "cost_tolerance",
            "gradient_tolerance",
            "initial_regularization",
            "regularization_growth",
            "regularization_shrink",
            "line_search_shrink",
            "min_step",
            "max_regularization",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Solution:
    trajectory: Trajectory
    costates: np.ndarray  # lambda_1..lambda_T, shape (T, n)
    final_cost: float
    iterations: int
    stationarity: float
    converged: bool
    cost_history: tuple = field(default=(), repr=False)


def costates(aug: AugmentedProblem, d: AugmentedDerivs) -> np.ndarray:
    """Backward costate recursion; returns ``lambda_0..lambda_T``, shape ``(T+1, n)``."""
    b = aug.provider.blocks
    T, n = aug.horizon, aug.problem.n
    lam = np.empty((T + 1, n))
    lam[T] = d.term_grad[b.wx]
    Fx = d.dynamics.jac[:, :, b.x]
    cx = d.cost_grad[:, b.x]
    for t in range(T - 1, -1, -1):
        lam[t] = cx[t] + Fx[t].T @ lam[t + 1]
    return lam


def _residual(aug: AugmentedProblem, d: AugmentedDerivs, lam: np.ndarray) -> float:
    b = aug.provider.blocks
    Fu = d.dynamics.jac[:, :, b.u]
    Hu = d.cost_grad[:, b.u] + np.einsum("tnm,tn->tm", Fu, lam[1:])
    return float(np.max(np.abs(Hu))) if Hu.size else 0.0


def stationarity_residual(aug: AugmentedProblem, theta, traj: Trajectory) -> float:
    """``max_t ||dL_t/du||_inf`` with costates from the backward recursion."""
    d = aug.derivatives(traj, theta)
    return _residual(aug, d, costates(aug, d))


class _ForwardKernel:
    def __init__(self, problem: ControlProblem):
        f = problem.dynamics

        def forward(x0, xs, us, k, K, a, th):
            def step(x, inp):
                x_ref, u_ref, kt, Kt = inp
                u = u_ref + a * kt + Kt @ (x - x_ref)
                xn = f(x, u, th)
                return xn, (xn, u)

            _, (xn, un) = jax.lax.scan(step, x0, (xs[:-1], us, k, K))
            return jnp.concatenate([x0[None, :], xn], axis=0), un

        self.forward = jax.jit(forward)


_FORWARD: "weakref.WeakKeyDictionary[ControlProblem, _ForwardKernel]" = weakref.WeakKeyDictionary()


def _forward_kernel(problem: ControlProblem) -> _ForwardKernel:
    kern = _FORWARD.get(problem)
    if kern is None:
        kern = _FORWARD[problem] = _ForwardKernel(problem)
    return kern


def _backward(aug, d: AugmentedDerivs, rho: float, force_shift: bool, second_order: bool):
    """Riccati-style backward pass; returns gains or ``None`` if ``Q_uu`` is not PD."""
    b = aug.provider.blocks
    T, n, m = aug.horizon, aug.problem.n, aug.problem.m
    F = d.dynamics.jac
    Fx, Fu = F[:, :, b.x], F[:, :, b.u]
    fh = d.dynamics.hess
    k = np.zeros((T, m))
    K = np.zeros((T, m, n))
    Vx = d.term_grad[b.wx].copy()
    Vxx = d.term_hess[b.wx, b.wx].copy()
    eye = np.eye(m)
    for t in range(T - 1, -1, -1):
        g, H = d.cost_grad[t], d.cost_hess[t]
        Qx = g[b.x] + Fx[t].T @ Vx
        Qu = g[b.u] + Fu[t].T @ Vx
        Qxx = H[b.x, b.x] + Fx[t].T @ Vxx @ Fx[t]
        Qux = H[b.u, b.x] + Fu[t].T @ Vxx @ Fx[t]
        Quu = H[b.u, b.u] + Fu[t].T @ Vxx @ Fu[t]
        if second_order:
            fc = np.tensordot(Vx, fh[t], axes=1)
            Qxx = Qxx + fc[b.x, b.x]
            Qux = Qux + fc[b.u, b.x]
            Quu = Quu + fc[b.u, b.u]
        Quu = 0.5 * (Quu + Quu.T)
        if force_shift or np.linalg.eigvalsh(Quu)[0] < 1e-9:
            Quu = Quu + rho * eye
        try:
            chol = np.linalg.cholesky(Quu)
        except np.linalg.LinAlgError:
            return None
        if np.min(np.diag(chol)) ** 2 < 1e-9:
            return None
        sol = _chol_solve(chol, np.column_stack([Qu, Qux]))
        k[t] = -sol[:, 0]
        K[t] = -sol[:, 1:]
        Vx = Qx + K[t].T @ Quu @ k[t] + K[t].T @ Qu + Qux.T @ k[t]
        Vxx = Qxx + K[t].T @ Quu @ K[t] + K[t].T @ Qux + Qux.T @ K[t]
        Vxx = 0.5 * (Vxx + Vxx.T)
    return k, K


def _chol_solve(chol, rhs):
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, y)


def _trial(aug, kern, traj, k, K, a, th):
    problem = aug.problem
    xs, us = kern.forward(problem.x0, traj.states, traj.inputs, k, K, a, th)
    xs, us = np.asarray(xs), np.asarray(us)
    if first_invalid_step(problem, xs) is not None or not np.all(np.isfinite(us)):
        return None
    if problem.input_box is not None:
        lo, hi = problem.input_box
        if np.any((us < lo) | (us > hi)):
            return None
    kv = problem.kernels
    c, g, h = kv.stage_values(xs[:-1], us, th)
    cT, gT, hT = kv.terminal_values(xs[-1], th)
    J = aug.cost_from_values(c, g, h, cT, gT, hT)
    return (us, J) if np.isfinite(J) else None


def _tracking_start(aug, kern, warm: Trajectory, th, settings: SolverSettings) -> Optional[Trajectory]:
    """Roll out the warm start's inputs with LQR feedback towards its states.

    Replaying inputs open-loop under a changed ``theta`` drifts away on
    unstable systems; the feedback keeps the first iterate near the previous
    solution. Returns ``None`` when no usable start results.
    """
    problem = aug.problem
    ref = Trajectory(np.asarray(warm.states, dtype=float), np.asarray(warm.inputs, dtype=float), False)
    if ref.states.shape != (problem.horizon + 1, problem.n) or not np.all(np.isfinite(ref.states)):
        return None
    d = aug.derivatives(ref, th)
    rho = settings.initial_regularization
    gains = None
    while gains is None and rho <= settings.max_regularization:
        gains = _backward(aug, d, rho, True, settings.second_order)
        rho *= settings.regularization_growth
    if gains is None:
        return None
    K = gains[1]
    xs, us = kern.forward(problem.x0, ref.states, ref.inputs, np.zeros_like(ref.inputs), K, 0.0, th)
    us = np.asarray(us)
    try:
        return rollout(problem, th, us)
    except RolloutError:
        return None


def solve(
    aug: AugmentedProblem,
    theta,
    warm_start: Optional[Trajectory] = None,
    settings: SolverSettings = SolverSettings(),
) -> Solution:
    """Minimise the augmented cost over input sequences.

    A warm start is tracked with feedback first, then replayed open-loop,
    then abandoned for the all-zero guess. Returns a :class:`Solution` with
    ``converged=False`` if the stationarity tolerance is not reached; raises
    :class:`SolverError` if every initial rollout diverges.
    """
    problem = aug.problem
    th = problem.check_theta(theta)
    zeros = np.zeros((problem.horizon, problem.m))
    kern = _forward_kernel(problem)
    traj = None
    starts = [zeros]
    if warm_start is not None:
        us_warm = np.asarray(warm_start.inputs, dtype=float)
        if us_warm.shape != zeros.shape:
            raise ValueError(f"warm start inputs have shape {us_warm.shape}, expected {zeros.shape}")
        traj = _tracking_start(aug, kern, warm_start, th, settings)
        starts = [us_warm, zeros]
    for us0 in starts:
        if traj is not None:
            break
        try:
            traj = rollout(problem, th, us0)
        except RolloutError as exc:
            error = exc
    if traj is None:
        raise SolverError(f"initial rollout diverged: {error}") from error
    J = aug.cost(traj, th)
    history = [J]
    rho0 = settings.initial_regularization
    rho = rho0
    accepted = 0
    converged = False
    d = aug.derivatives(traj, th)
    lam = costates(aug, d)
    stat = _residual(aug, d, lam)
    for _ in range(settings.max_iterations):
        if stat <= settings.gradient_tolerance:
            converged = True
            break
        gains = _backward(aug, d, rho, rho > rho0, settings.second_order)
        if gains is None:
            rho *= settings.regularization_growth
            if rho > settings.max_regularization:
                break
            continue
        k, K = gains
        a = 1.0
        result = None
        while a >= settings.min_step:
            result = _trial(aug, kern, traj, k, K, a, th)
            if result is not None and result[1] <= J + 8 * _EPS * (1.0 + abs(J)):
                break
            result = None
            a *= settings.line_search_shrink
        if result is None:
            rho *= settings.regularization_growth
            if rho > settings.max_regularization:
                break
            continue
        us_new, J_new = result
        traj = rollout(problem, th, us_new)
        rel_decrease = (J - J_new) / max(abs(J), 1.0)
        J = aug.cost(traj, th)
        history.append(J)
        accepted += 1
        rho = max(rho * settings.regularization_shrink, rho0)
        d = aug.derivatives(traj, th)
        lam = costates(aug, d)
        stat = _residual(aug, d, lam)
        if stat > settings.gradient_tolerance and a < 1.0 and rel_decrease < settings.cost_tolerance:
            break
    else:
        converged = stat <= settings.gradient_tolerance
    return Solution(
        trajectory=traj,
        costates=lam[1:].copy(),
        final_cost=J,
        iterations=accepted,
        stationarity=stat,
        converged=converged,
        cost_history=tuple(history),
    )
