"""Desk-scale robustness benchmark for preference-conditioned neural
multi-objective combinatorial optimization: scalarized solving, hypervolume
evaluation, gradient-based hard-instance generation and hardness-aware
adversarial training, verified against brute-force Pareto oracles."""

from .problems import (
    FeasibilityError,
    Instance,
    PreferenceGrid,
    ProblemKind,
    check_feasible,
    evaluate_objectives,
    preference_grid,
)
from .pareto import Front, dominates, hv_gap, hypervolume, nondominated_filter
from .scalarize import IdealPoint, tchebycheff, update_ideal, weighted_sum

__all__ = [
    "FeasibilityError",
    "Front",
    "IdealPoint",
    "Instance",
    "PreferenceGrid",
    "ProblemKind",
    "check_feasible",
    "dominates",
    "evaluate_objectives",
    "hv_gap",
    "hypervolume",
    "nondominated_filter",
    "preference_grid",
    "tchebycheff",
    "update_ideal",
    "weighted_sum",
]

__version__ = "0.1.0"
