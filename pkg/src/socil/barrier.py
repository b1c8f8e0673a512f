"""Softplus barrier and the barrier-augmented (unconstrained) problem.

Inequalities ``g <= 0`` become ``(1/alpha) * phi_beta(g)`` with
``phi_beta(x) = beta * ln(1 + exp(x / beta))``; equalities ``h = 0`` become
``h**2 / (2 alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from socil.derivatives import DerivativeProvider, Derivs, default_provider
from socil.problem import ControlProblem, Trajectory, evaluate_constraints


class BarrierConfigError(ValueError):
    pass


def _check_beta(beta) -> None:
    if not np.all(np.asarray(beta) > 0):
        raise BarrierConfigError(f"beta must be positive, got {beta}")


def softplus(x, beta, overflow_threshold: float = 30.0):
    """``beta * ln(1 + exp(x / beta))``, stable for every finite ``x``."""
    _check_beta(beta)
    x = np.asarray(x, dtype=float)
    y = x / beta
    big = y > overflow_threshold
    e = np.exp(np.where(big, -y, y))
    out = np.where(big, x + beta * np.log1p(e), beta * np.log1p(e))
    return out[()] if out.ndim == 0 else out


def _logistic(y):
    e = np.exp(-np.abs(y))
    return np.where(y >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus_grad(x, beta):
    """Derivative of :func:`softplus`: the logistic ``sigma(x / beta)``."""
    _check_beta(beta)
    out = _logistic(np.asarray(x, dtype=float) / beta)
    return out[()] if out.ndim == 0 else out


def softplus_hess(x, beta):
    """Second derivative ``sigma(1 - sigma) / beta``."""
    _check_beta(beta)
    y = np.asarray(x, dtype=float) / beta
    e = np.exp(-np.abs(y))
    out = e / (1.0 + e) ** 2 / beta
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class BarrierConfig:
    alpha: float
    beta: float
    overflow_threshold: float = 30.0
    # per-iteration multiplicative decay of (alpha, beta); 1.0 keeps them fixed
    decay: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise BarrierConfigError(f"alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise BarrierConfigError(f"beta must be positive, got {self.beta}")
        if not self.overflow_threshold >= 10:
            raise BarrierConfigError("overflow_threshold must be >= 10")
        if not 0 < self.decay <= 1:
            raise BarrierConfigError("decay must lie in (0, 1]")

    @classmethod
    def tied(cls, alpha: float, ratio: float = 0.25, **kwargs) -> "BarrierConfig":
        """Config with ``beta = ratio * alpha`` (0.075 / 0.3 by default)."""
        return cls(alpha, ratio * alpha, **kwargs)

    def scaled(self, factor: float) -> "BarrierConfig":
        return replace(self, alpha=self.alpha * factor, beta=self.beta * factor)

    def at_iteration(self, k: int) -> "BarrierConfig":
        return self if self.decay == 1.0 else self.scaled(self.decay**k)


@dataclass(frozen=True)
class AugmentedDerivs:
    """Dynamics derivatives plus the augmented cost's gradient and Hessian.

    Stage arrays are over ``z = (x, u, theta)``, terminal ones over
    ``w = (x, theta)``.
    """

    dynamics: Derivs
    cost_grad: np.ndarray  # (T, k)
    cost_hess: np.ndarray  # (T, k, k)
    term_grad: np.ndarray  # (n + p,)
    term_hess: np.ndarray  # (n + p, n + p)


class AugmentedProblem:
    """A :class:`ControlProblem` with its constraints folded into the costs.

    The original problem is kept (``self.problem``) so raw constraint values
    remain available for diagnostics.
    """

    def __init__(
        self,
        problem: ControlProblem,
        cfg: BarrierConfig,
        provider: Optional[DerivativeProvider] = None,
    ):
        self.problem = problem
        self.cfg = cfg
        self.provider = default_provider(problem, provider)

    @property
    def horizon(self) -> int:
        return self.problem.horizon

    def _penalty(self, g, h):
        a, b = self.cfg.alpha, self.cfg.beta
        out = np.zeros(g.shape[:-1])
        if g.shape[-1]:
            out = out + softplus(g, b, self.cfg.overflow_threshold).sum(axis=-1) / a
        if h.shape[-1]:
            out = out + 0.5 * (h**2).sum(axis=-1) / a
        return out

    def cost_from_values(self, c, g, h, cT, gT, hT) -> float:
        """Total augmented cost from raw stage/terminal values."""
        stage = np.asarray(c) + self._penalty(np.asarray(g), np.asarray(h))
        term = float(cT) + float(self._penalty(np.asarray(gT), np.asarray(hT)))
        return float(stage.sum() + term)

    def stage_costs(self, traj: Trajectory, theta) -> tuple[np.ndarray, float]:
        """Augmented stage costs ``(T,)`` and augmented terminal cost."""
        th = self.problem.check_theta(theta)
        k = self.problem.kernels
        c, g, h = (np.asarray(a) for a in k.stage_values(traj.states[:-1], traj.inputs, th))
        cT, gT, hT = (np.asarray(a) for a in k.terminal_values(traj.states[-1], th))
        return c + self._penalty(g, h), float(cT + self._penalty(gT, hT))

    def cost(self, traj: Trajectory, theta) -> float:
        stage, term = self.stage_costs(traj, theta)
        return float(stage.sum() + term)

    def derivatives(self, traj: Trajectory, theta) -> AugmentedDerivs:
        th = self.problem.check_theta(theta)
        sd = self.provider.stage(traj.states[:-1], traj.inputs, th)
        td = self.provider.terminal(traj.states[-1], th)
        grad, hess = self._compose(sd.cost.jac, sd.cost.hess, sd.ineq, sd.eq)
        tgrad, thess = self._compose(td.cost.jac[None], td.cost.hess[None], _batch(td.ineq), _batch(td.eq))
        return AugmentedDerivs(sd.dynamics, grad, hess, tgrad[0], thess[0])

    def _compose(self, grad, hess, ineq: Derivs, eq: Derivs):
        """Add barrier contributions to a batched gradient/Hessian.

        For each inequality: ``(1/a) s'(g) dg`` and
        ``(1/a) (s''(g) dg dg^T + s'(g) d2g)``; for each equality:
        ``(1/a) h dh`` and ``(1/a) (dh dh^T + h d2h)``.
        """
        a, b = self.cfg.alpha, self.cfg.beta
        grad = np.array(grad, dtype=float)
        hess = np.array(hess, dtype=float)
        if ineq.value.shape[-1]:
            s1 = softplus_grad(ineq.value, b)  # (T, q)
            s2 = softplus_hess(ineq.value, b)
            grad += np.einsum("tq,tqk->tk", s1, ineq.jac) / a
            hess += np.einsum("tq,tqi,tqj->tij", s2, ineq.jac, ineq.jac) / a
            hess += np.einsum("tq,tqij->tij", s1, ineq.hess) / a
        if eq.value.shape[-1]:
            grad += np.einsum("ts,tsk->tk", eq.value, eq.jac) / a
            hess += np.einsum("tsi,tsj->tij", eq.jac, eq.jac) / a
            hess += np.einsum("ts,tsij->tij", eq.value, eq.hess) / a
        return grad, hess


def _batch(d: Derivs) -> Derivs:
    return Derivs(np.asarray(d.value)[None], np.asarray(d.jac)[None], np.asarray(d.hess)[None])


def augment(
    problem: ControlProblem, cfg: BarrierConfig, provider: Optional[DerivativeProvider] = None
) -> AugmentedProblem:
    return AugmentedProblem(problem, cfg, provider)


@dataclass(frozen=True)
class Multipliers:
    mu: np.ndarray  # (T, q)
    nu: np.ndarray  # (T, s)
    mu_term: np.ndarray  # (q_T,)
    nu_term: np.ndarray  # (s_T,)


def approximate_multipliers(problem: ControlProblem, traj: Trajectory, theta, cfg: BarrierConfig) -> Multipliers:
    """Constraint multipliers implied by the barrier: ``mu = s'(g)/alpha``, ``nu = h/alpha``."""
    cv = evaluate_constraints(problem, traj, theta)
    a, b = cfg.alpha, cfg.beta
    return Multipliers(
        np.asarray(softplus_grad(cv.ineq, b)) / a,
        cv.eq / a,
        np.asarray(softplus_grad(cv.ineq_term, b)) / a,
        cv.eq_term / a,
    )
