"""Robust trajectory optimization with affine disturbance feedback.

Trust-region successive convexification on the outside, ADMM over tractable
second-order-cone reformulations on the inside, with bounded ellipsoidal
disturbance sets and an optional linearization-error-as-uncertainty mode.
"""

__version__ = "0.1.0"

from .constraints import (BoxFace, CircularObstacle, ConstraintSet, ControlBounds,
                          LinearizedConstraintData, linearize, robust_margin_le,
                          tractable_row)
from .lintraj import PolicyMatrix, StackedBlocks, build_blocks, stacked_response, transition
from .models import (Car, DoubleIntegrator, DynamicsModel, LinearModel, ModelDomainError,
                     ModelError, NominalTrajectory, Unicycle, make_model, rollout)
from .monte import (Policy, RolloutRecord, SatisfactionReport, collect_linearization_errors,
                    evaluate_satisfaction, run_rollouts, simulate_closed_loop)
from .sco import OuterParams, SolveLog, optimize, update_penalty, update_trust_region
from .scenario import Scenario, ScenarioError, parse_scenario
from .uncertainty import ErrorEllipsoid, UncertaintySet, error_support, fit_error_ellipsoids

__all__ = [
    "__version__",
    "BoxFace", "CircularObstacle", "ConstraintSet", "ControlBounds",
    "LinearizedConstraintData", "linearize", "robust_margin_le", "tractable_row",
    "PolicyMatrix", "StackedBlocks", "build_blocks", "stacked_response", "transition",
    "Car", "DoubleIntegrator", "DynamicsModel", "LinearModel", "ModelDomainError",
    "ModelError", "NominalTrajectory", "Unicycle", "make_model", "rollout",
    "Policy", "RolloutRecord", "SatisfactionReport", "collect_linearization_errors",
    "evaluate_satisfaction", "run_rollouts", "simulate_closed_loop",
    "OuterParams", "SolveLog", "optimize", "update_penalty", "update_trust_region",
    "Scenario", "ScenarioError", "parse_scenario",
    "ErrorEllipsoid", "UncertaintySet", "error_support", "fit_error_ellipsoids",
]
