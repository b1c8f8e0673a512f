"""Trajectory Jacobians of the barrier-augmented problem.

:func:`pdp_jacobian` differentiates the PMP conditions of the solved problem:
a backward Riccati-type recursion on the Hamiltonian's second derivatives
followed by a forward pass for ``X_t = dx_t/dtheta`` and
``U_t = du_t/dtheta``. :func:`finite_difference_jacobian` is an independent
oracle that re-solves the problem at perturbed parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from socil.barrier import AugmentedProblem
from socil.derivatives import DerivativeProvider
from socil.trajopt import Solution, SolverSettings, solve

_BLOCKS = ("Lxx", "Lxu", "Luu", "Lxth", "Luth", "Fx", "Fu", "Fth")


class AssemblyError(RuntimeError):
    def __init__(self, message: str, time: int, block: str):
        super().__init__(message)
        self.time = time
        self.block = block


class SingularityError(np.linalg.LinAlgError):
    def __init__(self, message: str, time: int):
        super().__init__(message)
        self.time = time


class PDPRecursionError(np.linalg.LinAlgError):
    def __init__(self, message: str, time: int):
        super().__init__(message)
        self.time = time


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class HamiltonianDerivs:
    """Second derivatives of the augmented Hamiltonian along a solution.

    Stage blocks carry a leading time axis ``t = 0..T-1``.
    """

    Lxx: np.ndarray  # (T, n, n)
    Lxu: np.ndarray  # (T, n, m)
    Luu: np.ndarray  # (T, m, m)
    Lxth: np.ndarray  # (T, n, p)
    Luth: np.ndarray  # (T, m, p)
    Fx: np.ndarray  # (T, n, n)
    Fu: np.ndarray  # (T, n, m)
    Fth: np.ndarray  # (T, n, p)
    LxxT: np.ndarray  # (n, n)
    LxthT: np.ndarray  # (n, p)

    @property
    def Lux(self) -> np.ndarray:
        return np.swapaxes(self.Lxu, 1, 2)

    @property
    def horizon(self) -> int:
        return self.Lxx.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.Fx.shape[1], self.Fu.shape[2], self.Fth.shape[2]


@dataclass(frozen=True)
class TrajectoryJacobian:
    X: np.ndarray  # (T+1, n, p)
    U: np.ndarray  # (T, m, p)

    def stage(self, t: int) -> np.ndarray:
        """``[X_t; U_t]`` with ``U_T`` zero-filled, shape ``(n+m, p)``."""
        T = self.U.shape[0]
        if t < 0 or t > T:
            raise IndexError(f"stage index {t} outside 0..{T}")
        U = self.U[t] if t < T else np.zeros(self.U.shape[1:])
        return np.vstack([self.X[t], U])

    def forward_residual(self, derivs: HamiltonianDerivs) -> float:
        """``max_t |X_{t+1} - (Fx X_t + Fu U_t + Fth)|``."""
        pred = derivs.Fx @ self.X[:-1] + derivs.Fu @ self.U + derivs.Fth
        return float(np.max(np.abs(self.X[1:] - pred))) if pred.size else 0.0


@dataclass(frozen=True)
class RecursionState:
    V: np.ndarray  # (T+1, n, n)
    W: np.ndarray  # (T+1, n, p)
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    M: np.ndarray
    N: np.ndarray
    symmetry_drift: float


def assemble_derivs(
    aug: AugmentedProblem,
    sol: Solution,
    theta,
    provider: Optional[DerivativeProvider] = None,
) -> HamiltonianDerivs:
    """Evaluate every Hamiltonian block at ``(x_t, u_t, lambda_{t+1}, theta)``."""
    if provider is not None and provider is not aug.provider:
        aug = AugmentedProblem(aug.problem, aug.cfg, provider)
    b = aug.provider.blocks
    traj = sol.trajectory
    d = aug.derivatives(traj, theta)
    lam_next = np.asarray(sol.costates)  # lambda_1..lambda_T
    H = d.cost_hess + np.einsum("tn,tnij->tij", lam_next, d.dynamics.hess)
    F = d.dynamics.jac
    blocks = {
        "Lxx": _sym(H[:, b.x, b.x]),
        "Lxu": H[:, b.x, b.u],
        "Luu": _sym(H[:, b.u, b.u]),
        "Lxth": H[:, b.x, b.th],
        "Luth": H[:, b.u, b.th],
        "Fx": F[:, :, b.x],
        "Fu": F[:, :, b.u],
        "Fth": F[:, :, b.th],
    }
    for name in _BLOCKS:
        arr = blocks[name]
        bad = np.flatnonzero(~np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1))
        if bad.size:
            raise AssemblyError(f"non-finite {name} at t={bad[0]}", time=int(bad[0]), block=name)
    LxxT = _sym(d.term_hess[b.wx, b.wx])
    LxthT = d.term_hess[b.wx, b.wth]
    T = aug.horizon
    for name, arr in (("LxxT", LxxT), ("LxthT", LxthT)):
        if not np.all(np.isfinite(arr)):
            raise AssemblyError(f"non-finite {name} at t={T}", time=T, block=name)
    return HamiltonianDerivs(LxxT=LxxT, LxthT=LxthT, **{k: np.ascontiguousarray(v) for k, v in blocks.items()})


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _factor_luu(Luu: np.ndarray, t: int):
    """LU factorisation of ``Luu``, shifted once by ``1e-8 I`` if nearly singular."""
    eig = np.abs(np.linalg.eigvalsh(Luu))
    if eig.size and eig.min() < 1e-9:
        Luu = Luu + 1e-8 * np.eye(Luu.shape[0])
        if np.abs(np.linalg.eigvalsh(Luu)).min() < 1e-9:
            raise SingularityError(f"L_uu singular at t={t} after regularisation", time=t)
    return sla.lu_factor(Luu, check_finite=False)


def pdp_jacobian(derivs: HamiltonianDerivs, return_state: bool = False):
    """Trajectory Jacobian ``d xi / d theta`` from the Hamiltonian blocks.

    Backward pass::

        A = Fx - Fu Luu^-1 Lux        B = Lxx - Lxu Luu^-1 Lux
        C = Fu Luu^-1 Fu^T            M = Fth - Fu Luu^-1 Luth
        N = Lxth - Lxu Luu^-1 Luth
        V_t = B + A^T (I + V_{t+1} C)^-1 V_{t+1} A
        W_t = A^T (I + V_{t+1} C)^-1 (W_{t+1} + V_{t+1} M) + N

    with ``V_T = LxxT`` and ``W_T = LxthT``; forward pass from ``X_0 = 0``::

        U_t = -Luu^-1 (Lux X_t + Luth + Fu^T (I + V_{t+1} C)^-1 (V_{t+1} A X_t + V_{t+1} M + W_{t+1}))
        X_{t+1} = Fx X_t + Fu U_t + Fth
    """
    T = derivs.horizon
    n, m, p = derivs.dims
    V = np.zeros((T + 1, n, n))
    W = np.zeros((T + 1, n, p))
    V[T], W[T] = derivs.LxxT, derivs.LxthT
    A = np.zeros((T, n, n))
    B = np.zeros((T, n, n))
    C = np.zeros((T, n, n))
    M = np.zeros((T, n, p))
    N = np.zeros((T, n, p))
    gain_x = np.zeros((T, n, n))  # (I + V C)^-1 V A
    gain_0 = np.zeros((T, n, p))  # (I + V C)^-1 (V M + W)
    luu = []
    eye = np.eye(n)
    drift = 0.0
    for t in range(T - 1, -1, -1):
        lu = _factor_luu(derivs.Luu[t], t)
        luu.append(lu)
        Fu = derivs.Fu[t]
        Lux = derivs.Lxu[t].T
        sol = sla.lu_solve(lu, np.hstack([Lux, derivs.Luth[t], Fu.T]), check_finite=False)
        inv_lux, inv_luth, inv_fut = sol[:, :n], sol[:, n : n + p], sol[:, n + p :]
        A[t] = derivs.Fx[t] - Fu @ inv_lux
        B[t] = derivs.Lxx[t] - derivs.Lxu[t] @ inv_lux
        C[t] = Fu @ inv_fut
        M[t] = derivs.Fth[t] - Fu @ inv_luth
        N[t] = derivs.Lxth[t] - derivs.Lxu[t] @ inv_luth
        S = eye + V[t + 1] @ C[t]
        try:
            S_lu = sla.lu_factor(S, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise PDPRecursionError(f"I + V C singular at t={t}", time=t) from exc
        if not np.all(np.isfinite(S_lu[0])) or np.min(np.abs(np.diag(S_lu[0]))) < 1e-14 * max(1.0, np.abs(S).max()):
            raise PDPRecursionError(f"I + V C singular at t={t}", time=t)
        rhs = np.hstack([V[t + 1] @ A[t], V[t + 1] @ M[t] + W[t + 1]])
        sol2 = sla.lu_solve(S_lu, rhs, check_finite=False)
        gain_x[t], gain_0[t] = sol2[:, :n], sol2[:, n:]
        Vt = B[t] + A[t].T @ gain_x[t]
        drift = max(drift, float(np.max(np.abs(Vt - Vt.T))) if n else 0.0)
        V[t] = 0.5 * (Vt + Vt.T)
        W[t] = A[t].T @ gain_0[t] + N[t]
    luu.reverse()

    X = np.zeros((T + 1, n, p))
    U = np.zeros((T, m, p))
    for t in range(T):
        Fu = derivs.Fu[t]
        rhs = derivs.Lxu[t].T @ X[t] + derivs.Luth[t] + Fu.T @ (gain_x[t] @ X[t] + gain_0[t])
        U[t] = -sla.lu_solve(luu[t], rhs, check_finite=False)
        X[t + 1] = derivs.Fx[t] @ X[t] + Fu @ U[t] + derivs.Fth[t]
    jac = TrajectoryJacobian(X, U)
    if return_state:
        return jac, RecursionState(V, W, A, B, C, M, N, drift)
    return jac


def finite_difference_jacobian(
    aug: AugmentedProblem,
    theta,
    settings: SolverSettings = SolverSettings(gradient_tolerance=1e-10),
    step: float = 1e-4,
    warm_start=None,
) -> TrajectoryJacobian:
    """Central differences of full re-solves at ``theta +/- step * e_k``."""
    problem = aug.problem
    th = np.array(problem.check_theta(theta), dtype=float)
    T, n, m, p = problem.horizon, problem.n, problem.m, problem.p
    if warm_start is None:
        base = solve(aug, th, None, settings)
        warm_start = base.trajectory
    X = np.zeros((T + 1, n, p))
    U = np.zeros((T, m, p))
    for k in range(p):
        sols = []
        for sign in (1.0, -1.0):
            pert = th.copy()
            pert[k] += sign * step
            sol = solve(aug, pert, warm_start, settings)
            if not sol.converged:
                raise OracleError(
                    f"re-solve at theta[{k}] {'+' if sign > 0 else '-'} {step} did not converge "
                    f"(stationarity {sol.stationarity:.3g})"
                )
            sols.append(sol.trajectory)
        X[:, :, k] = (sols[0].states - sols[1].states) / (2 * step)
        U[:, :, k] = (sols[0].inputs - sols[1].inputs) / (2 * step)
    return TrajectoryJacobian(X, U)


@dataclass(frozen=True)
class SecondOrderReport:
    min_quadratic_form: float
    satisfied: bool


def quadratic_form(derivs: HamiltonianDerivs, inputs: np.ndarray) -> np.ndarray:
    """Second-order form along linearised-dynamics directions from ``x_0 = 0``.

    ``inputs`` has shape ``(batch, T, m)``; returns ``(batch,)``.
    """
    inputs = np.asarray(inputs, dtype=float)
    batch, T, m = inputs.shape
    n = derivs.dims[0]
    x = np.zeros((batch, n))
    total = np.zeros(batch)
    for t in range(T):
        u = inputs[:, t]
        total += np.einsum("bi,ij,bj->b", x, derivs.Lxx[t], x)
        total += 2.0 * np.einsum("bi,ij,bj->b", x, derivs.Lxu[t], u)
        total += np.einsum("bi,ij,bj->b", u, derivs.Luu[t], u)
        x = x @ derivs.Fx[t].T + u @ derivs.Fu[t].T
    total += np.einsum("bi,ij,bj->b", x, derivs.LxxT, x)
    return total


def check_second_order(derivs: HamiltonianDerivs, trials: int, rng_seed: int) -> SecondOrderReport:
    """Sampled second-order sufficiency check over random unit input sequences."""
    T = derivs.horizon
    m = derivs.dims[1]
    rng = np.random.default_rng(rng_seed)
    dirs = rng.standard_normal((trials, T, m))
    dirs /= np.linalg.norm(dirs.reshape(trials, -1), axis=1)[:, None, None]
    q = quadratic_form(derivs, dirs)
    qmin = float(q.min())
    return SecondOrderReport(qmin, qmin > 0)
