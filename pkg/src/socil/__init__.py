"""Safe online control-informed learning.

Online EKF estimation of optimal-control parameters, driven by trajectory
Jacobians of a softplus-barrier-smoothed optimal-control problem.
"""

import jax

# Every kernel in the package works in double precision.
jax.config.update("jax_enable_x64", True)

from socil.problem import (  # noqa: E402
    ControlProblem,
    ConstraintValues,
    DimensionError,
    EvaluationError,
    OCPError,
    ParamVector,
    RolloutError,
    Trajectory,
    evaluate_constraints,
    evaluate_cost,
    rollout,
)
from socil.derivatives import DerivativeProvider  # noqa: E402
from socil.barrier import (  # noqa: E402
    AugmentedProblem,
    BarrierConfig,
    approximate_multipliers,
    augment,
    softplus,
    softplus_grad,
    softplus_hess,
)
from socil.trajopt import Solution, SolverSettings, solve, stationarity_residual  # noqa: E402
from socil.pdp import (  # noqa: E402
    HamiltonianDerivs,
    TrajectoryJacobian,
    assemble_derivs,
    check_second_order,
    finite_difference_jacobian,
    pdp_jacobian,
)
from socil.estimator import (  # noqa: E402
    EkfStepReport,
    EstimatorState,
    MeasurementModel,
    cumulative_loss,
    ekf_step,
    stage_jacobian,
    stage_loss,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentedProblem",
    "BarrierConfig",
    "ConstraintValues",
    "ControlProblem",
    "DerivativeProvider",
    "DimensionError",
    "EkfStepReport",
    "EstimatorState",
    "EvaluationError",
    "HamiltonianDerivs",
    "MeasurementModel",
    "OCPError",
    "ParamVector",
    "RolloutError",
    "Solution",
    "SolverSettings",
    "Trajectory",
    "TrajectoryJacobian",
    "approximate_multipliers",
    "assemble_derivs",
    "augment",
    "check_second_order",
    "cumulative_loss",
    "ekf_step",
    "evaluate_constraints",
    "evaluate_cost",
    "finite_difference_jacobian",
    "pdp_jacobian",
    "rollout",
    "softplus",
    "softplus_grad",
    "softplus_hess",
    "solve",
    "stage_jacobian",
    "stage_loss",
    "stationarity_residual",
]
