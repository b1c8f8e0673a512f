import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def cartpole():
    from socil.systems import CartpoleSpec, build_problem

    spec = CartpoleSpec()
    problem, provider = build_problem(spec)
    return spec, problem, provider


@pytest.fixture(scope="session")
def arm():
    from socil.systems import TwoLinkArmSpec, build_problem

    spec = TwoLinkArmSpec()
    problem, provider = build_problem(spec)
    return spec, problem, provider


@pytest.fixture(scope="session")
def cartpole_solution(cartpole):
    from socil import BarrierConfig, augment, solve

    spec, problem, _ = cartpole
    cfg = BarrierConfig(0.3, 0.075)
    theta = spec.true_theta()
    aug = augment(problem, cfg)
    return aug, theta, solve(aug, theta)


def scalar_problem(dynamics=None, stage=None, terminal=None, horizon=1, x0=(1.0,), partition=(0, 1, 0), **kw):
    """Small hand-written problems for oracle tests."""
    import jax.numpy as jnp

    from socil import ControlProblem

    return ControlProblem(
        horizon=horizon,
        state_dim=len(x0),
        input_dim=1,
        x0=np.asarray(x0),
        partition=partition,
        dynamics=dynamics or (lambda x, u, th: x + u),
        stage_cost=stage or (lambda x, u, th: th[0] * jnp.sum(x**2) + jnp.sum(u**2)),
        terminal_cost=terminal or (lambda x, th: th[0] * jnp.sum(x**2)),
        **kw,
    )


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
