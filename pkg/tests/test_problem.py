import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import scalar_problem
from socil import (
    DerivativeProvider,
    DimensionError,
    EvaluationError,
    ParamVector,
    RolloutError,
    Trajectory,
    evaluate_constraints,
    evaluate_cost,
    rollout,
)
from socil.derivatives import relative_error
from socil.problem import dynamics_residual
from socil.systems import cartpole_energy

finite = st.floats(-1e3, 1e3, allow_nan=False)


# -- ParamVector ------------------------------------------------------------


@given(st.lists(finite, min_size=0, max_size=4), st.lists(finite, max_size=4), st.lists(finite, max_size=3))
def test_param_vector_order_and_size(dyn, obj, cstr):
    pv = ParamVector(dyn, obj, cstr)
    assert pv.p == len(dyn) + len(obj) + len(cstr)
    np.testing.assert_array_equal(pv.values, np.concatenate([dyn, obj, cstr]).astype(float))
    back = ParamVector.from_flat(pv.values, pv.sizes)
    np.testing.assert_array_equal(back.values, pv.values)


def test_param_vector_rejects_non_finite_and_bad_sizes():
    with pytest.raises(ValueError):
        ParamVector([np.nan], [], [])
    with pytest.raises(DimensionError):
        ParamVector.from_flat([1.0, 2.0], (1, 0, 0))


def test_param_vector_is_immutable():
    pv = ParamVector([1.0], [2.0], [3.0])
    with pytest.raises(ValueError):
        pv.values[0] = 5.0


# -- cost, constraints, rollout ---------------------------------------------


def test_zero_cost_problem_costs_nothing():
    prob = scalar_problem(stage=lambda x, u, th: 0.0 * jnp.sum(x), terminal=lambda x, th: 0.0 * jnp.sum(x))
    traj = rollout(prob, [1.0], [[0.7]])
    assert evaluate_cost(prob, traj, [1.0]) == 0.0


def test_lqr_toy_cost_by_hand():
    prob = scalar_problem()
    traj = rollout(prob, [1.0], [[-0.5]])
    np.testing.assert_allclose(traj.states.ravel(), [1.0, 0.5])
    assert evaluate_cost(prob, traj, [1.0]) == pytest.approx(1.5, abs=1e-15)


def test_cartpole_stage_cost_zero_at_goal(cartpole):
    spec, problem, _ = cartpole
    x_goal = np.asarray(spec.x_goal)
    th = spec.true_theta().values
    assert float(problem.stage_cost(x_goal, np.zeros(1), th)) == 0.0
    assert float(problem.terminal_cost(x_goal, th)) == 0.0


def test_cost_dimension_errors_name_index():
    prob = scalar_problem()
    bad = Trajectory(np.zeros((3, 1)), np.zeros((2, 1)))
    with pytest.raises(DimensionError):
        evaluate_cost(prob, bad, [1.0])
    with pytest.raises(DimensionError):
        evaluate_cost(prob, rollout(prob, [1.0], [[0.0]]), [1.0, 2.0])


def test_non_finite_cost_reports_time():
    prob = scalar_problem(stage=lambda x, u, th: jnp.log(u[0]))
    traj = Trajectory(np.array([[1.0], [0.0]]), np.array([[-1.0]]))
    with pytest.raises(EvaluationError) as err:
        evaluate_cost(prob, traj, [1.0])
    assert err.value.time == 0


def test_box_constraint_values(cartpole):
    spec, problem, _ = cartpole
    th = spec.true_theta()
    states = np.zeros((problem.horizon + 1, 4))
    states[1, 0] = 0.5
    states[2, 0] = 0.8
    traj = Trajectory(states, np.zeros((problem.horizon, 1)))
    g = evaluate_constraints(problem, traj, th).ineq
    assert problem.n_ineq == 4 and problem.n_eq == 0
    # declared order: [p - p_max, -p - p_max, u - u_max, -u - u_max]
    np.testing.assert_allclose(g[1, :2], [0.5 - 0.8, -0.5 - 0.8])
    assert g[2, 0] == 0.0
    np.testing.assert_allclose(g[0, 2:], [-12.0, -12.0])


def test_rollout_identity_dynamics_keeps_x0():
    prob = scalar_problem(dynamics=lambda x, u, th: x, horizon=4, x0=(0.3,))
    traj = rollout(prob, [1.0], np.random.default_rng(0).normal(size=(4, 1)))
    np.testing.assert_array_equal(traj.states.ravel(), 0.3)
    assert traj.rolled_out


def test_rollout_divergence_raises_at_first_bad_step():
    prob = scalar_problem(dynamics=lambda x, u, th: 1e200 * x, horizon=5, state_box=(np.array([-1e6]), np.array([1e6])))
    with pytest.raises(RolloutError) as err:
        rollout(prob, [1.0], np.zeros((5, 1)))
    assert err.value.step == 1


@given(us=st.lists(st.floats(-2, 2), min_size=35, max_size=35))
def test_rollout_is_reproducible_and_consistent(us, cartpole):
    spec, problem, _ = cartpole
    th = spec.true_theta()
    a = rollout(problem, th, np.array(us)[:, None])
    b = rollout(problem, th, a.inputs)
    np.testing.assert_array_equal(a.states, b.states)
    assert dynamics_residual(problem, a, th) <= 1e-12
    assert evaluate_cost(problem, a, th) == evaluate_cost(problem, a, th)


def test_cartpole_energy_conserved(cartpole):
    from socil.systems import CartpoleSpec, build_problem

    spec = CartpoleSpec(dt=0.02, horizon=50, x0=(0.0, 1.0, 0.0, 0.0))
    problem, _ = build_problem(spec)
    th = spec.true_theta()
    traj = rollout(problem, th, np.zeros((50, 1)))
    energies = [cartpole_energy(x, th.dyn) for x in traj.states]
    e0 = energies[0]
    assert max(abs(e - e0) for e in energies) / abs(e0) <= 1e-4


# -- derivative providers -------------------------------------------------


@pytest.mark.parametrize("system", ["cartpole", "arm"])
def test_analytic_and_numeric_derivatives_agree(system, cartpole, arm):
    spec, problem, _ = cartpole if system == "cartpole" else arm
    rng = np.random.default_rng(1)
    th = spec.true_theta().values
    xs = rng.uniform(-0.5, 0.5, (100, problem.n))
    us = rng.uniform(-2, 2, (100, problem.m))
    ana = DerivativeProvider(problem, "analytic").stage(xs, us, th)
    num = DerivativeProvider(problem, "numeric").stage(xs, us, th)
    for a, b in ((ana.dynamics, num.dynamics), (ana.cost, num.cost), (ana.ineq, num.ineq)):
        assert relative_error(b.jac, a.jac) <= 1e-4
        assert relative_error(b.hess, a.hess) <= 1e-4
    ta = DerivativeProvider(problem, "analytic").terminal(xs[0], th)
    tn = DerivativeProvider(problem, "numeric").terminal(xs[0], th)
    assert relative_error(tn.cost.hess, ta.cost.hess) <= 1e-4


def test_derivative_shapes(cartpole):
    spec, problem, provider = cartpole
    T, n, m, p = 3, problem.n, problem.m, problem.p
    d = provider.stage(np.zeros((T, n)), np.zeros((T, m)), spec.true_theta().values)
    k = n + m + p
    assert d.dynamics.jac.shape == (T, n, k)
    assert d.dynamics.hess.shape == (T, n, k, k)
    assert d.cost.jac.shape == (T, k)
    assert d.ineq.hess.shape == (T, problem.n_ineq, k, k)


def test_provider_rejects_unknown_mode(cartpole):
    with pytest.raises(ValueError):
        DerivativeProvider(cartpole[1], "symbolic")


def test_relative_error_definition():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([0.0, 4.0], [0.0, 2.0]) == pytest.approx(1.0)
    # reference below one uses an absolute floor
    assert relative_error([1e-3], [0.0]) == pytest.approx(1e-3)
