"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from socil.barrier import approximate_multipliers
from socil.harness import RunConfig, generate_demonstration, run_online, scenario
from socil.problem import evaluate_constraints
from socil.validate import barrier_suite, estimator_suite, gradient_suite

SIGMAS = (0.0, 0.3, 0.6)
TRIALS = 10


def report(n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def safe_cartpole_runs():
    t0 = time.perf_counter()
    logs = {(s, k): run_online(RunConfig(sigma=s, seed=k)) for s in SIGMAS for k in range(TRIALS)}
    return logs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def arm_run():
    return run_online(RunConfig(system="arm"))


def test_safety_reproduction(safe_cartpole_runs):
    logs, elapsed = safe_cartpole_runs
    dirty = [(s, k, log.violations.rows()) for (s, k), log in logs.items() if not log.violations.clean]
    ok = not dirty
    report(1, ok, f"{len(logs) - len(dirty)}/{len(logs)} safe cart-pole runs with zero u and p violations ({elapsed:.0f} s)")
    assert ok, dirty


def test_baseline_contrast():
    hits = 0
    for k in range(TRIALS):
        v = run_online(RunConfig(mode="baseline", sigma=0.3, seed=k)).violations
        hits += v["u"].pct > 0 and v["p"].pct > 0
    ok = hits >= 8
    report(2, ok, f"{hits}/{TRIALS} baseline runs at sigma 0.3 violate both u and p (need >= 8)")
    assert ok


def test_gradient_validity():
    t0 = time.perf_counter()
    checks = gradient_suite()
    worst = max(c.value for c in checks[1:])
    ok = all(c.passed for c in checks)
    report(3, ok, f"closed-form error {checks[0].value:.1e} (<= 1e-6), worst Jacobian error {worst:.1e} (<= 1e-3) ({time.perf_counter() - t0:.0f} s)")
    assert ok, [c.line() for c in checks if not c.passed]


def test_barrier_limit():
    t0 = time.perf_counter()
    checks = barrier_suite()
    ok = all(c.passed for c in checks)
    report(4, ok, "; ".join(f"{c.name} {c.value:.2g}" for c in checks) + f" ({time.perf_counter() - t0:.0f} s)")
    assert ok, [c.line() for c in checks if not c.passed]


def test_estimator_correctness():
    t0 = time.perf_counter()
    checks = estimator_suite()
    ok = all(c.passed for c in checks)
    report(5, ok, "; ".join(f"{c.name} {c.value:.2g}" for c in checks) + f" ({time.perf_counter() - t0:.1f} s)")
    assert ok, [c.line() for c in checks if not c.passed]


def test_convergence(safe_cartpole_runs):
    toy = run_online(RunConfig(system="lqr-toy", iters=200))
    toy_err = abs(toy.final_theta[0] - toy.theta_true.values[0])
    losses = safe_cartpole_runs[0][(0.0, 0)].losses
    ratio = losses[-1] / losses[0]
    ok = toy_err <= 1e-3 and ratio < 0.05
    report(6, ok, f"lqr-toy |theta - theta*| {toy_err:.1e} (<= 1e-3); noiseless cart-pole loss ratio {ratio:.3f} (< 0.05)")
    assert ok


def test_online_latency(safe_cartpole_runs, arm_run):
    logs = safe_cartpole_runs[0].values()
    cart = float(np.median([r.ms_total for log in logs for r in log.records]))
    arm = float(np.median([r.ms_total for r in arm_run.records]))
    grad = float(np.median([r.ms_gradient for log in (*logs, arm_run) for r in log.records]))
    ok = cart < 100 and arm < 200 and grad < 20
    report(7, ok, f"median ms/iter cart-pole {cart:.1f} (< 100), arm {arm:.1f} (< 200), gradient {grad:.1f} (< 20)")
    assert ok


def test_multiplier_diagnostics():
    t0 = time.perf_counter()
    cfg = RunConfig()
    sc = scenario(cfg)
    # the demonstration solve: converged and on the tightened barrier
    demo = generate_demonstration(cfg, sc)
    barrier = sc.barrier.scaled(cfg.demo_tightening)
    g = evaluate_constraints(sc.problem, demo.trajectory, sc.theta_true).ineq
    mu = approximate_multipliers(sc.problem, demo.trajectory, sc.theta_true, barrier).mu
    far = g < -0.1
    far_max = float(mu[far].max()) * barrier.alpha
    active = float(mu.flat[np.argmax(g)])
    ok = far_max < 1e-3 and 0 < active <= 1 / (2 * barrier.alpha)
    report(
        8,
        ok,
        f"alpha={barrier.alpha:g} beta={barrier.beta:g}: max alpha*mu where g < -0.1 is {far_max:.1e} (< 1e-3); "
        f"most active mu {active:.3g} in (0, {1 / (2 * barrier.alpha):g}] ({time.perf_counter() - t0:.1f} s)",
    )
    assert ok
