import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socil import DerivativeProvider, Trajectory, evaluate_constraints
from socil.derivatives import relative_error
from socil.estimator import MeasurementModel
from socil.systems import (
    CartpoleSpec,
    IntegrationError,
    LqrToySpec,
    NoiseConfig,
    TwoLinkArmSpec,
    arm_dynamics,
    arm_energy,
    build_problem,
    cartpole_dynamics,
    gaussian,
    mass_matrix,
    measure,
    rk4_step,
)
from socil.systems.arm import SingularMassMatrix, gravity_torque
from socil.systems.lqr_toy import clamped_solution, closed_form_input, closed_form_input_sensitivity


# -- integrator --------------------------------------------------------------


def test_rk4_examples():
    np.testing.assert_array_equal(rk4_step(lambda x, u, th: 0.0 * x, [1.5, -2.0], 0.0, None, 0.3), [1.5, -2.0])
    decay = rk4_step(lambda x, u, th: -x, [1.0], 0.0, None, 0.1)
    assert abs(decay[0] - np.exp(-0.1)) <= 1e-7
    assert decay[0] == pytest.approx(0.90483742, abs=1e-7)
    assert rk4_step(lambda x, u, th: np.full_like(x, u), [0.0], 2.0, None, 0.5)[0] == 1.0


def test_rk4_rejects_non_finite_and_bad_dt():
    with pytest.raises(IntegrationError):
        rk4_step(lambda x, u, th: np.array([np.inf]), [1.0], 0.0, None, 0.1)
    with pytest.raises(ValueError):
        rk4_step(lambda x, u, th: x, [1.0], 0.0, None, 0.0)


# -- models --------------------------------------------------------------------


def test_cartpole_upright_equilibrium():
    th = CartpoleSpec().true_theta().dyn
    np.testing.assert_allclose(cartpole_dynamics([0.3, np.pi, 0.0, 0.0], [0.0], th), 0.0, atol=1e-13)


def test_arm_gravity_compensation():
    th = TwoLinkArmSpec().true_theta().dyn
    for q in ([0.3, -0.7], [1.0, 0.2]):
        x = np.array([q[0], 0.0, q[1], 0.0])
        dx = arm_dynamics(x, gravity_torque(q, th, 9.81), th, gravity=9.81)
        np.testing.assert_allclose(dx, 0.0, atol=1e-12)


@pytest.mark.parametrize("gravity", [0.0, 9.81])
def test_arm_free_swing_conserves_energy(gravity):
    th = TwoLinkArmSpec().true_theta().dyn
    f = lambda x, u, t: arm_dynamics(x, u, t, gravity)  # noqa: E731
    x = np.array([0.2, 0.5, -0.4, -0.3])
    e0 = arm_energy(x, th, gravity)
    worst = 0.0
    for _ in range(100):
        x = rk4_step(f, x, np.zeros(2), th, 0.01)
        worst = max(worst, abs(arm_energy(x, th, gravity) - e0))
    assert worst / abs(e0) <= 1e-4


def test_arm_mass_matrix_spd_on_random_configurations():
    rng = np.random.default_rng(3)
    th = TwoLinkArmSpec().true_theta().dyn
    for q in rng.uniform(-np.pi, np.pi, (1000, 2)):
        assert np.linalg.eigvalsh(mass_matrix(q, th))[0] > 0


def test_arm_singular_mass_matrix_raises():
    with pytest.raises(SingularMassMatrix):
        arm_dynamics(np.zeros(4), np.zeros(2), [1e-6, 1e-6, 1e-3, 1e-3])


# -- problem assembly ----------------------------------------------------------


def test_constraint_counts():
    cp, _ = build_problem(CartpoleSpec())
    arm, _ = build_problem(TwoLinkArmSpec())
    assert (cp.n_ineq, cp.n_eq) == (4, 0)
    assert (arm.n_ineq, arm.n_eq) == (8, 0)
    assert [b.family for b in cp.boxes] == ["u", "p"]


@pytest.mark.parametrize("spec", [CartpoleSpec(), TwoLinkArmSpec()])
def test_goal_is_zero_cost_and_strictly_interior(spec):
    problem, _ = build_problem(spec)
    th = spec.true_theta()
    goal = np.asarray(spec.x_goal)
    assert float(problem.stage_cost(goal, np.zeros(problem.m), th.values)) == 0.0
    traj = Trajectory(np.tile(goal, (problem.horizon + 1, 1)), np.zeros((problem.horizon, problem.m)))
    assert evaluate_constraints(problem, traj, th).max_ineq() < 0


def test_partitions_follow_declared_order():
    assert CartpoleSpec().true_theta().sizes == (3, 4, 2)
    assert TwoLinkArmSpec().true_theta().sizes == (4, 4, 2)
    np.testing.assert_array_equal(TwoLinkArmSpec().true_theta().cstr, [8.0, np.pi / 2])
    assert LqrToySpec().true_theta().sizes == (0, 1, 0)
    assert LqrToySpec(u_bound=0.4).true_theta().sizes == (0, 1, 1)


def test_invalid_specs():
    with pytest.raises(ValueError):
        CartpoleSpec(pole_length=0.0)
    with pytest.raises(ValueError):
        TwoLinkArmSpec(x_goal=(1.0, 2.0))
    with pytest.raises(ValueError):
        LqrToySpec(theta=-1.0)


def test_arm_derivative_modes_agree_at_200_points():
    spec = TwoLinkArmSpec()
    problem, _ = build_problem(spec)
    rng = np.random.default_rng(11)
    xs = rng.uniform(-1.2, 1.2, (200, 4))
    us = rng.uniform(-5, 5, (200, 2))
    th = spec.true_theta().values
    a = DerivativeProvider(problem, "analytic").stage(xs, us, th)
    n = DerivativeProvider(problem, "numeric").stage(xs, us, th)
    assert relative_error(n.dynamics.jac, a.dynamics.jac) <= 1e-4
    assert relative_error(n.dynamics.hess, a.dynamics.hess) <= 1e-4


@given(theta=st.floats(0.01, 50), x0=st.floats(-5, 5))
def test_lqr_toy_closed_forms(theta, x0):
    assert closed_form_input(theta, x0) == pytest.approx(-theta * x0 / (1 + theta))
    h = 1e-6 * max(theta, 1)
    fd = (closed_form_input(theta + h, x0) - closed_form_input(theta - h, x0)) / (2 * h)
    assert closed_form_input_sensitivity(theta, x0) == pytest.approx(fd, rel=1e-5, abs=1e-8)
    u, x1 = clamped_solution(theta, 0.1, x0)
    assert abs(u) <= 0.1 + 1e-15 and x1 == pytest.approx(x0 + u)


# -- noise -------------------------------------------------------------------


def test_noiseless_measurement_is_exact():
    model = MeasurementModel.state_identity(2, 1, 0.5)
    np.testing.assert_array_equal(measure([1.0, 2.0, 3.0], model, NoiseConfig(0.0, 5), 3), [1.0, 2.0])


@given(seed=st.integers(0, 2**63), t=st.integers(0, 10_000))
def test_noise_stream_is_replayable(seed, t):
    np.testing.assert_array_equal(gaussian(seed, t, 4), gaussian(seed, t, 4))
    assert not np.array_equal(gaussian(seed, t, 4), gaussian(seed, t + 1, 4))


def test_noise_variance():
    model = MeasurementModel.state_identity(1, 1, 0.3)
    noise = NoiseConfig(0.3, 42)
    sample = np.array([measure([0.0, 0.0], model, noise, t)[0] for t in range(100_000)])
    assert 0.0885 <= sample.var() <= 0.0915


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(-0.1, 0)
    with pytest.raises(ValueError):
        NoiseConfig(0.1, -1)
