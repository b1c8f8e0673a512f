"""Oracle suites behind ``socil validate``: gradients, filter and barrier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from socil.barrier import BarrierConfig, augment, softplus
from socil.derivatives import relative_error
from socil.estimator import EstimatorState, MeasurementModel, ekf_step
from socil.pdp import assemble_derivs, finite_difference_jacobian, pdp_jacobian
from socil.problem import ParamVector, evaluate_constraints
from socil.systems import CartpoleSpec, LqrToySpec, TwoLinkArmSpec, build_problem
from socil.systems.lqr_toy import clamped_solution, closed_form_input_sensitivity
from socil.trajopt import SolverSettings, solve


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.suite}/{self.name}: {self.value:.3g} (tol {self.tolerance:.3g})"


def _le(suite, name, value, tol) -> Check:
    return Check(suite, name, float(value), float(tol), bool(value <= tol))


def jacobian_error(spec, cfg: BarrierConfig, step: float = 1e-4) -> float:
    """Max relative error of the recursion Jacobian against re-solved differences."""
    problem, _ = build_problem(spec)
    theta = spec.true_theta()
    aug = augment(problem, cfg)
    settings = SolverSettings(gradient_tolerance=1e-10, max_iterations=500)
    sol = solve(aug, theta, None, settings)
    if cfg.alpha < 0.3:
        # stiff barriers converge more reliably from the softer solution
        sol = solve(aug, theta, solve(augment(problem, BarrierConfig(0.3, 0.075)), theta).trajectory, settings)
    jac = pdp_jacobian(assemble_derivs(aug, sol, theta))
    fd = finite_difference_jacobian(aug, theta, settings, step, warm_start=sol.trajectory)
    return max(relative_error(jac.X, fd.X), relative_error(jac.U, fd.U))


def gradient_suite(barriers=((0.3, 0.075), (0.08, 0.02))) -> list[Check]:
    checks = []
    toy = LqrToySpec()
    problem, _ = build_problem(toy)
    aug = augment(problem, BarrierConfig(0.3, 0.075))
    th = toy.true_theta()
    sol = solve(aug, th, None, SolverSettings(gradient_tolerance=1e-12))
    jac = pdp_jacobian(assemble_derivs(aug, sol, th))
    exact = closed_form_input_sensitivity(toy.theta, toy.x0)
    checks.append(_le("gradient", "lqr-toy closed form", abs(jac.U[0, 0, 0] - exact) / abs(exact), 1e-6))
    for a, b in barriers:
        cfg = BarrierConfig(a, b)
        for name, spec in (("lqr-toy", toy), ("cartpole", CartpoleSpec()), ("arm", TwoLinkArmSpec())):
            checks.append(_le("gradient", f"{name} alpha={a} beta={b}", jacobian_error(spec, cfg), 1e-3))
    return checks


def estimator_suite(steps: int = 1000, seed: int = 0) -> list[Check]:
    checks = []
    model = MeasurementModel(lambda xi: xi[:1], lambda xi: np.eye(1), np.eye(1), 1, 0)
    st = EstimatorState(ParamVector([], [0.0], []), np.eye(1))
    new, rep = ekf_step(st, [[1.0]], [1.0], model)
    err = max(abs(rep.kalman_gain[0, 0] - 0.5), abs(new.P[0, 0] - 0.5), abs(new.theta_hat.values[0] + 0.5))
    checks.append(_le("estimator", "scalar oracle", err, 1e-12))

    st = EstimatorState(ParamVector([], [0.0, 0.0], []), np.eye(2))
    new, rep = ekf_step(st, [[1.0, 2.0]], [0.0], model)
    v = np.array([[1.0], [2.0]])
    err = max(np.abs(rep.kalman_gain - v / 6).max(), np.abs(new.P - (np.eye(2) - v @ v.T / 6)).max())
    checks.append(_le("estimator", "2x1 oracle", err, 1e-12))

    rng = np.random.default_rng(seed)
    p, r = 4, 2
    R = np.diag([0.3, 0.7])
    model = MeasurementModel(lambda xi: xi[:r], lambda xi: np.eye(r, 4), R, 4, 0)
    st = EstimatorState(ParamVector([], np.zeros(p), []), np.eye(p))
    min_eig, joseph, trace_up = np.inf, 0.0, 0.0
    for _ in range(steps):
        L = rng.uniform(-2, 2, (r, p))
        new, rep = ekf_step(st, L, rng.standard_normal(r), model)
        K = rep.kalman_gain
        IKL = np.eye(p) - K @ L
        joseph = max(joseph, np.abs(IKL @ st.P @ IKL.T + K @ R @ K.T - new.P).max())
        trace_up = max(trace_up, np.trace(new.P) - np.trace(st.P))
        min_eig = min(min_eig, np.linalg.eigvalsh(new.P)[0])
        st = new
    checks.append(Check("estimator", "covariance stays SPD", float(min_eig), 1e-12, bool(min_eig >= 1e-12)))
    checks.append(_le("estimator", "Joseph form agreement", joseph, 1e-8))
    checks.append(_le("estimator", "trace(P) non-increasing", max(trace_up, 0.0), 1e-12))
    return checks


def barrier_suite() -> list[Check]:
    checks = []
    x = np.linspace(-10, 10, 4001)
    worst = 0.0
    for beta in (0.2, 0.1, 0.05, 0.01):
        worst = max(worst, float(np.max(np.abs(softplus(x, beta) - np.maximum(x, 0)) - beta * np.log(2))))
    checks.append(_le("barrier", "softplus within beta ln2 of ReLU", max(worst, 0.0), 1e-15))

    # mildly active bound (multiplier 0.4): refinement is monotone from alpha = 0.3
    bound = 0.4
    toy = LqrToySpec(u_bound=bound)
    problem, _ = build_problem(toy)
    th = toy.true_theta()
    u_ref, x_ref = clamped_solution(toy.theta, bound, toy.x0)
    errors, worst_g = [], -np.inf
    cfg = BarrierConfig(0.3, 0.075)
    for _ in range(5):
        sol = solve(augment(problem, cfg), th, None, SolverSettings(gradient_tolerance=1e-12))
        errors.append(max(abs(sol.trajectory.inputs[0, 0] - u_ref), abs(sol.trajectory.states[1, 0] - x_ref)))
        worst_g = max(worst_g, evaluate_constraints(problem, sol.trajectory, th).max_ineq())
        cfg = cfg.scaled(0.5)
    # largest step-to-step change; must be negative for a strictly decreasing error
    checks.append(Check("barrier", "refinement error decreasing", float(np.diff(errors).max()), 0.0, bool(np.all(np.diff(errors) < 0))))
    checks.append(Check("barrier", "barrier solutions strictly feasible", float(worst_g), 0.0, bool(worst_g < 0)))
    return checks


SUITES: dict[str, Callable[[], list[Check]]] = {
    "barrier": barrier_suite,
    "estimator": estimator_suite,
    "gradient": gradient_suite,
}


def run_suites(names: Iterable[str] = ("barrier", "estimator", "gradient")) -> list[Check]:
    checks = []
    for name in names:
        checks.extend(SUITES[name]())
    return checks
