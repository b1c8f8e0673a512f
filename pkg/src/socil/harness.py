"""Experiment harness: demonstrations, the online EKF loop and violation metrics."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from socil.barrier import BarrierConfig, augment
from socil.estimator import EstimatorError, EstimatorState, MeasurementModel, ekf_step, stage_jacobian, stage_loss
from socil.pdp import AssemblyError, PDPRecursionError, SingularityError, assemble_derivs, pdp_jacobian
from socil.problem import (
    ControlProblem,
    OCPError,
    ParamVector,
    Trajectory,
    evaluate_constraints,
)
from socil.systems import SYSTEMS, build_problem
from socil.systems.noise import NoiseConfig, measure
from socil.trajopt import Solution, SolverError, SolverSettings, solve

MODES = ("safe", "baseline")
_MODE_ALIASES = {"safe_ocil": "safe", "ocil_baseline": "baseline", "ocil": "baseline"}

# barrier weights per system when the config leaves them unset
DEFAULT_BARRIER = {"cartpole": (0.1, 0.025), "arm": (0.08, 0.02), "lqr-toy": (0.3, 0.075)}

# estimator tuning per system when the config leaves a field unset (None)
_PLAIN = dict(perturbation=(0.2, 0.2, 0.2), p0=1.0, p0_mode="identity", cstr_cap=False, positive_floor=0.0, sigma_floor=0.05)
DEFAULT_ESTIMATOR = {
    # the swing-up is near-infeasible under bound guesses that are too tight or too loose:
    # start the bounds 10% inside, keep them there, and let the filter move in small relative steps
    "cartpole": dict(perturbation=(0.2, 0.2, 0.1), p0=0.01, p0_mode="relative", cstr_cap=True, positive_floor=0.1, sigma_floor=1.0),
    "arm": dict(_PLAIN),
    "lqr-toy": dict(_PLAIN),
}


class ConfigError(ValueError):
    pass


class DemonstrationError(RuntimeError):
    pass


class RunAborted(RuntimeError):
    """Unrecoverable failure inside the online loop; ``log`` holds the completed iterations."""

    def __init__(self, message: str, log: "RunLog"):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class RunConfig:
    system: str = "cartpole"
    mode: str = "safe"
    alpha: Optional[float] = None
    beta: Optional[float] = None
    sigma: float = 0.0
    seed: int = 0
    iters: int = 108
    # relative perturbation of the initial guess, per partition [dyn, obj, cstr]
    # fields below left as None take the per-system DEFAULT_ESTIMATOR value
    perturbation: Optional[tuple] = None
    p0: Optional[float] = None
    # "identity": P0 = p0 I; "relative": P0 = p0 diag(theta0^2)
    p0_mode: Optional[str] = None
    # never let a constraint bound estimate exceed its initial value
    cstr_cap: Optional[bool] = None
    # dynamics and bound estimates stay >= positive_floor * |theta0|
    positive_floor: Optional[float] = None
    # R = max(sigma, sigma_floor)^2 I; the filter needs an SPD R even without noise
    sigma_floor: Optional[float] = None
    skip_degraded: bool = False
    # safe mode: backtrack an update whose solution breaks the estimated bounds
    safeguard: bool = False
    safeguard_halvings: int = 3
    decay: float = 1.0
    demo_tightening: float = 0.1
    system_params: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode, self.mode)
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {sorted(SYSTEMS)}")
        for name, value in DEFAULT_ESTIMATOR[self.system].items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if int(self.iters) < 1:
            raise ConfigError("iters must be >= 1")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be non-negative")
        if not self.sigma_floor > 0:
            raise ConfigError("sigma_floor must be positive")
        if not self.p0 > 0:
            raise ConfigError("p0 must be positive")
        if self.p0_mode not in ("identity", "relative"):
            raise ConfigError("p0_mode must be 'identity' or 'relative'")
        if not 0 <= self.positive_floor < 1:
            raise ConfigError("positive_floor must lie in [0, 1)")
        if int(self.safeguard_halvings) < 0:
            raise ConfigError("safeguard_halvings must be >= 0")
        if not 0 < self.demo_tightening <= 1:
            raise ConfigError("demo_tightening must lie in (0, 1]")
        pert = self.perturbation
        pert = (float(pert),) * 3 if np.isscalar(pert) else tuple(float(v) for v in pert)
        if len(pert) != 3 or any(not 0 <= v < 1 for v in pert):
            raise ConfigError("perturbation must be three values in [0, 1)")
        object.__setattr__(self, "perturbation", pert)
        object.__setattr__(self, "iters", int(self.iters))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "system_params", dict(self.system_params))
        object.__setattr__(self, "solver", dict(self.solver))
        try:
            self.spec()
            self.settings()
            self.barrier()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def spec(self):
        return SYSTEMS[self.system](**_tuples(self.system_params))

    def settings(self) -> SolverSettings:
        return SolverSettings(**self.solver)

    def barrier(self) -> BarrierConfig:
        a0, b0 = DEFAULT_BARRIER[self.system]
        alpha = a0 if self.alpha is None else float(self.alpha)
        beta = (b0 if self.alpha is None else 0.25 * alpha) if self.beta is None else float(self.beta)
        return BarrierConfig(alpha, beta, decay=self.decay)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["perturbation"] = list(self.perturbation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _tuples(d: dict) -> dict:
    # JSON round-trips tuples as lists; specs are frozen and hashable
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


@dataclass(frozen=True)
class FamilyViolation:
    pct: float
    max: float


@dataclass(frozen=True)
class ViolationReport:
    """Per constraint family: % of violating steps and worst exceedance in % of the bound."""

    families: dict

    def __getitem__(self, family: str) -> FamilyViolation:
        return self.families[family]

    @property
    def clean(self) -> bool:
        return all(v.pct == 0 and v.max == 0 for v in self.families.values())

    def rows(self):
        return [(name, v.pct, v.max) for name, v in self.families.items()]


def violation_metrics(traj: Trajectory, problem: ControlProblem, theta_true_cstr, slack: float = 1e-9) -> ViolationReport:
    """Violations of the problem's box constraints against the true bounds.

    Inputs are checked at ``u_0..u_{T-1}`` and states at ``x_1..x_T`` (``x_0``
    is fixed), so every family is judged over ``T`` steps.
    """
    bounds = np.asarray(theta_true_cstr, dtype=float).ravel()
    by_family: dict[str, list] = {}
    for box in problem.boxes:
        bound = bounds[box.cstr_index]
        if not bound > 0:
            raise ConfigError(f"bound for family {box.family!r} must be positive, got {bound}")
        series = traj.inputs[:, box.component] if box.kind == "input" else traj.states[1:, box.component]
        excess = np.abs(series) - bound
        by_family.setdefault(box.family, []).append((excess, bound))
    families = {}
    for name, items in by_family.items():
        violating = np.zeros(traj.horizon, dtype=bool)
        worst = 0.0
        for excess, bound in items:
            violating |= excess > slack
            worst = max(worst, 100.0 * float(np.max(np.maximum(excess, 0.0))) / bound)
        families[name] = FamilyViolation(100.0 * float(violating.sum()) / traj.horizon, worst)
    return ViolationReport(families)


def aggregate_violations(reports: Sequence[ViolationReport]) -> ViolationReport:
    """Mean pct and worst max over a sequence of reports."""
    if not reports:
        return ViolationReport({})
    names = reports[0].families.keys()
    return ViolationReport(
        {
            k: FamilyViolation(
                float(np.mean([r[k].pct for r in reports])),
                float(np.max([r[k].max for r in reports])),
            )
            for k in names
        }
    )


@dataclass(frozen=True)
class Scenario:
    """Everything derived from a config before the loop starts."""

    config: RunConfig
    problem: ControlProblem
    theta_true: ParamVector
    theta0: ParamVector
    model: MeasurementModel
    barrier: BarrierConfig
    settings: SolverSettings


def _rng(seed: int, stream: int) -> np.random.Generator:
    # stream ids keep the perturbation draw independent of the (seed, t) noise keys
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


def initial_guess(theta_true: ParamVector, perturbation, seed: int) -> ParamVector:
    """``theta* (1 + delta)`` with ``|delta|`` set per partition and a seeded sign.

    Constraint bounds are only ever tightened: a loosened bound would make the
    very first executed trajectory unsafe before any data arrives.
    """
    rng = _rng(seed, 1)
    signs = rng.choice([-1.0, 1.0], size=theta_true.p)
    mags = np.repeat(np.asarray(perturbation, dtype=float), theta_true.sizes)
    delta = signs * mags
    cstr = slice(theta_true.p - theta_true.sizes[2], theta_true.p)
    delta[cstr] = -np.abs(delta[cstr])
    return theta_true.with_values(theta_true.values * (1.0 + delta))


def scenario(config: RunConfig) -> Scenario:
    spec = config.spec()
    problem, _ = build_problem(spec)
    theta_true = spec.true_theta()
    r_sigma = max(config.sigma, config.sigma_floor)
    model = MeasurementModel.state_identity(problem.n, problem.m, r_sigma)
    return Scenario(
        config=config,
        problem=problem,
        theta_true=theta_true,
        theta0=initial_guess(theta_true, config.perturbation, config.seed),
        model=model,
        barrier=config.barrier(),
        settings=config.settings(),
    )


@dataclass(frozen=True)
class Demonstration:
    trajectory: Trajectory
    measurements: np.ndarray  # (T+1, r)
    solution: Solution


def generate_demonstration(config: RunConfig, sc: Optional[Scenario] = None) -> Demonstration:
    """Solve the true system with tightened barriers and measure it.

    The tight solve is warm-started from the solution at the run's own
    ``(alpha, beta)``; going straight to the small weights from a cold start
    stalls on the stiff barrier.
    """
    sc = sc or scenario(config)
    problem, th = sc.problem, sc.theta_true
    try:
        sol = solve(augment(problem, sc.barrier), th, None, sc.settings)
        sol = solve(augment(problem, sc.barrier.scaled(config.demo_tightening)), th, sol.trajectory, sc.settings)
    except SolverError as exc:
        raise DemonstrationError(f"demonstration solve failed: {exc}") from exc
    if not sol.converged:
        raise DemonstrationError(f"demonstration solve did not converge (stationarity {sol.stationarity:.3g})")
    worst = evaluate_constraints(problem, sol.trajectory, th).max_ineq()
    if not worst < 0:
        raise DemonstrationError(f"demonstration is not strictly feasible (max g = {worst:.3g})")
    noise = NoiseConfig(config.sigma, config.seed)
    traj = sol.trajectory
    ys = np.stack([measure(traj.stage(t), sc.model, noise, t) for t in range(problem.horizon + 1)])
    return Demonstration(traj, ys, sol)


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    loss: float
    theta: np.ndarray
    ms_total: float
    ms_gradient: float
    stationarity: float
    degraded: bool
    solver_iterations: int
    violations: ViolationReport


@dataclass
class RunLog:
    config: RunConfig
    theta_true: ParamVector
    theta0: ParamVector
    records: list = field(default_factory=list)
    final_trajectory: Optional[Trajectory] = None
    demonstration: Optional[Demonstration] = None
    aborted: Optional[str] = None

    @property
    def violations(self) -> ViolationReport:
        """Violations aggregated over every executed trajectory of the run."""
        return aggregate_violations([r.violations for r in self.records])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    @property
    def final_theta(self) -> np.ndarray:
        return self.records[-1].theta if self.records else self.theta0.values

    def manifest(self) -> dict:
        from socil import __version__

        return {
            "package": "socil",
            "version": __version__,
            "numpy": np.__version__,
            "config": self.config.to_dict(),
            "barrier": dataclasses.asdict(self.config.barrier()),
            "solver_settings": dataclasses.asdict(self.config.settings()),
            "theta_true": self.theta_true.values.tolist(),
            "theta_partition": list(self.theta_true.sizes),
            "theta0": self.theta0.values.tolist(),
            "iterations_completed": len(self.records),
            "aborted": self.aborted,
        }


def initial_estimator(theta0: ParamVector, config: RunConfig) -> EstimatorState:
    if config.p0_mode == "relative":
        return EstimatorState(theta0, config.p0 * np.diag(theta0.values**2), 0)
    return EstimatorState.initial(theta0, config.p0)


def project(state: EstimatorState, theta0: ParamVector, config: RunConfig) -> EstimatorState:
    """Clip the estimate into the admissible set chosen by the config."""
    if not config.cstr_cap and config.positive_floor == 0:
        return state
    th = state.theta_hat.values.copy()
    n_dyn, _, n_cstr = theta0.sizes
    lo = np.full(th.size, -np.inf)
    hi = np.full(th.size, np.inf)
    floor = config.positive_floor * np.abs(theta0.values)
    lo[:n_dyn] = floor[:n_dyn]
    cstr = slice(th.size - n_cstr, th.size)
    lo[cstr] = floor[cstr]
    if config.cstr_cap:
        hi[cstr] = theta0.values[cstr]
    clipped = np.clip(th, lo, hi)
    if np.array_equal(clipped, th):
        return state
    return EstimatorState(state.theta_hat.with_values(clipped), state.P, state.step)


def _feasible(problem: ControlProblem, traj: Trajectory, theta: ParamVector) -> bool:
    return not problem.boxes or evaluate_constraints(problem, traj, theta).max_ineq() <= 0


def _safeguarded_solve(aug, problem, th, state, last, config, settings):
    """Solve at ``th``; if the solution is unsafe under its own bounds, backtrack.

    ``last`` is the most recent ``(theta, solution)`` pair that was safe. The
    step from it is halved up to ``safeguard_halvings`` times; failing that the
    safe pair is reused. Returns ``(theta, solution, state)`` with the
    estimator state moved to the accepted parameters.
    """
    sol = solve(aug, th, last[1].trajectory if last else None, settings)
    if last is None or _feasible(problem, sol.trajectory, th):
        return th, sol, state
    th_safe, sol_safe = last
    step = th.values - th_safe.values
    for j in range(1, config.safeguard_halvings + 1):
        trial = th.with_values(th_safe.values + 0.5**j * step)
        cand = solve(aug, trial, sol_safe.trajectory, settings)
        if _feasible(problem, cand.trajectory, trial):
            return trial, cand, EstimatorState(trial, state.P, state.step)
    return th_safe, sol_safe, EstimatorState(th_safe, state.P, state.step)


def _loss(traj: Trajectory, ys: np.ndarray, model: MeasurementModel) -> float:
    return float(sum(np.sum(stage_loss(traj.stage(t), ys[t], model) ** 2) for t in range(len(ys))))


_ABORT_ERRORS = (SolverError, OCPError, SingularityError, PDPRecursionError, AssemblyError, EstimatorError)


def run_online(config: RunConfig, demo: Optional[Demonstration] = None) -> RunLog:
    """The online loop: measure, solve at the estimate, differentiate, filter.

    Iteration ``k`` consumes the demonstration's measurement at index
    ``k mod (T+1)``. Raises :class:`RunAborted` (carrying the partial log) on
    unrecoverable numerical failure.
    """
    sc = scenario(config)
    demo = demo or generate_demonstration(config, sc)
    problem = sc.problem if config.mode == "safe" else sc.problem.without_constraints()
    model, ys = sc.model, demo.measurements
    true_cstr = sc.theta_true.cstr
    log = RunLog(config, sc.theta_true, sc.theta0, demonstration=demo)
    state = initial_estimator(sc.theta0, config)
    warm = None
    guarded = config.safeguard and config.mode == "safe"
    last_safe = None
    for k in range(config.iters):
        t = k % (problem.horizon + 1)
        cfg = sc.barrier.at_iteration(k)
        aug = augment(problem, cfg)
        th = state.theta_hat
        try:
            t0 = time.perf_counter()
            if guarded:
                th, sol, state = _safeguarded_solve(aug, problem, th, state, last_safe, config, sc.settings)
                if _feasible(problem, sol.trajectory, th):
                    last_safe = (th, sol)
            else:
                sol = solve(aug, th, warm, sc.settings)
            t1 = time.perf_counter()
            jac = pdp_jacobian(assemble_derivs(aug, sol, th))
            L = stage_jacobian(t, jac, model, sol.trajectory)
            t2 = time.perf_counter()
            degraded = not sol.converged
            innovation = stage_loss(sol.trajectory.stage(t), ys[t], model)
            if not (degraded and config.skip_degraded):
                state, _ = ekf_step(state, L, innovation, model, degraded)
                state = project(state, sc.theta0, config)
            t3 = time.perf_counter()
        except _ABORT_ERRORS as exc:
            log.aborted = f"iteration {k}: {type(exc).__name__}: {exc}"
            raise RunAborted(log.aborted, log) from exc
        warm = sol.trajectory
        log.records.append(
            IterationRecord(
                iter=k,
                loss=_loss(sol.trajectory, ys, model),
                theta=np.array(th.values),
                ms_total=1e3 * (t3 - t0),
                ms_gradient=1e3 * (t2 - t1),
                stationarity=sol.stationarity,
                degraded=degraded,
                solver_iterations=sol.iterations,
                violations=violation_metrics(sol.trajectory, problem, true_cstr),
            )
        )
        log.final_trajectory = sol.trajectory
    return log


def sweep(config: RunConfig, trials: int, sigmas: Optional[Sequence[float]] = None) -> list[RunLog]:
    """Independent runs with seeds ``seed .. seed + trials - 1`` at each noise level."""
    sigmas = [config.sigma] if sigmas is None else list(sigmas)
    logs = []
    for sigma in sigmas:
        for i in range(trials):
            cfg = dataclasses.replace(config, sigma=float(sigma), seed=config.seed + i)
            logs.append(run_online(cfg))
    return logs


def summary_table(logs: Sequence[RunLog]) -> list[tuple]:
    """Rows ``(sigma, mode, family, mean pct, mean max)`` rounded to one decimal."""
    groups: dict[tuple, list] = {}
    for log in logs:
        groups.setdefault((log.config.sigma, log.config.mode), []).append(log.violations)
    rows = []
    for (sigma, mode), reports in groups.items():
        for name in reports[0].families:
            rows.append(
                (
                    sigma,
                    mode,
                    name,
                    round(float(np.mean([r[name].pct for r in reports])), 1),
                    round(float(np.mean([r[name].max for r in reports])), 1),
                )
            )
    return rows
