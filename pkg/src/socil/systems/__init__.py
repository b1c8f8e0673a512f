"""Benchmark systems: cart-pole, two-link arm and the scalar LQR toy."""

from __future__ import annotations

from socil.derivatives import DerivativeProvider, default_provider
from socil.problem import ControlProblem
from socil.systems.arm import TwoLinkArmSpec, arm_dynamics, arm_energy, build_arm, mass_matrix
from socil.systems.cartpole import CartpoleSpec, build_cartpole, cartpole_dynamics, cartpole_energy
from socil.systems.integrators import IntegrationError, rk4, rk4_step
from socil.systems.lqr_toy import LqrToySpec, build_lqr_toy
from socil.systems.noise import NoiseConfig, gaussian, measure

SYSTEMS = {
    "cartpole": CartpoleSpec,
    "arm": TwoLinkArmSpec,
    "lqr-toy": LqrToySpec,
}


def build_problem(spec) -> tuple[ControlProblem, DerivativeProvider]:
    """Assemble the control problem and its analytic derivative provider."""
    if isinstance(spec, CartpoleSpec):
        problem = build_cartpole(spec)
    elif isinstance(spec, TwoLinkArmSpec):
        problem = build_arm(spec)
    elif isinstance(spec, LqrToySpec):
        problem = build_lqr_toy(spec)
    else:
        raise TypeError(f"unknown system spec {type(spec).__name__}")
    return problem, default_provider(problem)


__all__ = [
    "CartpoleSpec",
    "IntegrationError",
    "LqrToySpec",
    "NoiseConfig",
    "SYSTEMS",
    "TwoLinkArmSpec",
    "arm_dynamics",
    "arm_energy",
    "build_arm",
    "build_cartpole",
    "build_lqr_toy",
    "build_problem",
    "cartpole_dynamics",
    "cartpole_energy",
    "gaussian",
    "mass_matrix",
    "measure",
    "rk4",
    "rk4_step",
]
