"""Measurement model, losses, and the EKF parameter update.

The parameter vector is the filter state. Prediction is the identity; the
update uses the stage-loss Jacobian ``L_t = dl_t/dtheta`` where
``l_t = y_t - z(xi_t(theta))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from socil.pdp import TrajectoryJacobian
from socil.problem import DimensionError, ParamVector, Trajectory


class EstimatorError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class MeasurementModel:
    """``y = z(xi_t) + v``, ``v ~ N(0, R)``, with ``xi_t = (x_t, u_t)``."""

    z: Callable[[np.ndarray], np.ndarray]
    z_jacobian: Callable[[np.ndarray], np.ndarray]
    R: np.ndarray
    state_dim: int
    input_dim: int
    state_only: bool = True

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[0] != R.shape[1]:
            raise DimensionError(f"R must be square, got {R.shape}")
        if not np.allclose(R, R.T, rtol=0, atol=1e-12):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R)[0] < 1e-12:
            raise ValueError("R must be positive definite (eigenvalues >= 1e-12)")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @property
    def r(self) -> int:
        return self.R.shape[0]

    @classmethod
    def state_identity(cls, n: int, m: int, sigma: float) -> "MeasurementModel":
        """``z(xi_t) = x_t`` with ``R = sigma^2 I``."""
        jac = np.hstack([np.eye(n), np.zeros((n, m))])
        jac.setflags(write=False)
        return cls(
            z=lambda xi: np.asarray(xi)[..., :n],
            z_jacobian=lambda xi: jac,
            R=sigma**2 * np.eye(n),
            state_dim=n,
            input_dim=m,
            state_only=True,
        )


@dataclass(frozen=True)
class EstimatorState:
    theta_hat: ParamVector
    P: np.ndarray
    step: int = 0

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        p = self.theta_hat.p
        if P.shape != (p, p):
            raise DimensionError(f"P has shape {P.shape}, expected {(p, p)}")
        P = 0.5 * (P + P.T)
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @classmethod
    def initial(cls, theta0: ParamVector, p0: float = 1.0) -> "EstimatorState":
        return cls(theta0, p0 * np.eye(theta0.p), 0)


@dataclass(frozen=True)
class EkfStepReport:
    kalman_gain: np.ndarray  # (p, r)
    innovation: np.ndarray  # (r,)
    L_t: np.ndarray  # (r, p)
    stage_loss_norm: float
    degraded: bool = False
    jitter: bool = field(default=False, repr=False)


def stage_loss(xi_t, y_star, model: MeasurementModel) -> np.ndarray:
    """``y* - z(xi_t)``."""
    y_star = np.asarray(y_star, dtype=float).ravel()
    zt = np.asarray(model.z(np.asarray(xi_t, dtype=float)), dtype=float).ravel()
    if y_star.shape != zt.shape:
        raise DimensionError(f"measurement has shape {y_star.shape}, model output {zt.shape}")
    return y_star - zt


def cumulative_loss(traj: Trajectory, measurements: Sequence, model: MeasurementModel) -> float:
    """``sum_{t=0}^{T} ||y*_t - z(xi_t)||^2``."""
    ys = np.asarray(measurements, dtype=float)
    if ys.shape[0] != traj.horizon + 1:
        raise DimensionError(
            f"expected {traj.horizon + 1} measurements, got {ys.shape[0]}", index=ys.shape[0]
        )
    total = 0.0
    for t in range(traj.horizon + 1):
        if t == traj.horizon and not model.state_only:
            raise DimensionError("terminal stage has no input; model must read states only")
        total += float(np.sum(stage_loss(traj.stage(t), ys[t], model) ** 2))
    return total


def stage_jacobian(
    t: int, jac: TrajectoryJacobian, model: MeasurementModel, traj: Optional[Trajectory] = None
) -> np.ndarray:
    """``L_t = -dz/dxi_t @ [X_t; U_t]`` (input block dropped for state-only models)."""
    T = jac.U.shape[0]
    if not 0 <= t <= T:
        raise IndexError(f"time index {t} outside 0..{T}")
    n = jac.X.shape[1]
    xi_t = traj.stage(t) if traj is not None else np.zeros(n + jac.U.shape[1])
    Jz = np.atleast_2d(np.asarray(model.z_jacobian(xi_t), dtype=float))
    if model.state_only:
        return -Jz[:, :n] @ jac.X[t]
    if t == T:
        raise DimensionError("terminal stage has no input; model must read states only")
    return -Jz @ jac.stage(t)


def ekf_step(
    state: EstimatorState,
    L_t,
    innovation,
    model: MeasurementModel,
    degraded: bool = False,
) -> tuple[EstimatorState, EkfStepReport]:
    """One predict/update cycle.

    ``K = P L^T (L P L^T + R)^-1``, ``P+ = (I - K L) P`` (symmetrised) and
    ``theta+ = theta - K @ innovation``. The minus sign pairs with ``L`` being
    the Jacobian of ``y - z``, not of ``z``.
    """
    L = np.atleast_2d(np.asarray(L_t, dtype=float))
    innov = np.asarray(innovation, dtype=float).ravel()
    p = state.theta_hat.p
    if L.shape != (model.r, p):
        raise DimensionError(f"L_t has shape {L.shape}, expected {(model.r, p)}")
    if innov.shape != (model.r,):
        raise DimensionError(f"innovation has shape {innov.shape}, expected ({model.r},)")
    # predict: identity on both the estimate and the covariance
    theta, P = state.theta_hat.values, state.P
    S = L @ P @ L.T + model.R
    S = 0.5 * (S + S.T)
    jitter = False
    try:
        cho = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        jitter = True
        try:
            cho = np.linalg.cholesky(S + 1e-9 * np.eye(S.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise EstimatorError("innovation covariance is singular") from exc
    PLt = P @ L.T
    K = np.linalg.solve(cho.T, np.linalg.solve(cho, PLt.T)).T
    P_new = (np.eye(p) - K @ L) @ P
    P_new = 0.5 * (P_new + P_new.T)
    theta_new = theta - K @ innov
    new_state = EstimatorState(state.theta_hat.with_values(theta_new), P_new, state.step + 1)
    report = EkfStepReport(
        kalman_gain=K,
        innovation=innov,
        L_t=L,
        stage_loss_norm=float(np.linalg.norm(innov)),
        degraded=degraded,
        jitter=jitter,
    )
    return new_state, report
