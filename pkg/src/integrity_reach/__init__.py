"""Reachable estimation-error analysis for Kalman filters under stealthy sensor attacks."""

from .attack import (
    AttackSequence,
    SimulationResult,
    propagate_attack,
    simulate,
    synthesize_worst_attack,
    trajectory_scenario,
)
from .calibration import (
    DetectorSpec,
    FixedBudget,
    StealthBudget,
    alpha_chi2,
    noncentral_chi2_cdf,
    sprt_radius,
    threshold_from_false_alarm,
    window_bounds,
)
from .errors import (
    DomainError,
    IntegrityReachError,
    NoFeasiblePolicyError,
    NumericalError,
    StructuralError,
    ValidationError,
)
from .io import ModelBundle, discretize_zoh, dump_model, emit_report, load_fixture, parse_model
from .model import (
    AttackScenario,
    PlantModel,
    SteadyStateFilter,
    is_perfectly_attackable,
    solve_steady_state_filter,
    structural_report,
)
from .policy import EnforcementPolicy, PolicyVerdict, design_periodic_policy, evaluate_policy, sweep_periods
from .reachability import (
    SupportPattern,
    error_curve,
    error_map,
    loewner_leq,
    max_expected_error,
    reachable_region,
    residual_map,
    theta_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "AttackScenario",
    "AttackSequence",
    "DetectorSpec",
    "DomainError",
    "EnforcementPolicy",
    "FixedBudget",
    "IntegrityReachError",
    "ModelBundle",
    "NoFeasiblePolicyError",
    "NumericalError",
    "PlantModel",
    "PolicyVerdict",
    "SimulationResult",
    "StealthBudget",
    "SteadyStateFilter",
    "StructuralError",
    "SupportPattern",
    "ValidationError",
    "alpha_chi2",
    "design_periodic_policy",
    "discretize_zoh",
    "dump_model",
    "emit_report",
    "error_curve",
    "error_map",
    "evaluate_policy",
    "is_perfectly_attackable",
    "load_fixture",
    "loewner_leq",
    "max_expected_error",
    "noncentral_chi2_cdf",
    "parse_model",
    "propagate_attack",
    "reachable_region",
    "residual_map",
    "simulate",
    "solve_steady_state_filter",
    "sprt_radius",
    "structural_report",
    "sweep_periods",
    "synthesize_worst_attack",
    "theta_matrix",
    "threshold_from_false_alarm",
    "trajectory_scenario",
    "window_bounds",
]
