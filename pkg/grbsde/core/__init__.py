"""
Core numerical modules: scenario trees, problem data, solvers and checks
"""

from .errors import GRBSDEError
from .scenario import NodeValues, ScenarioTree, TreeConfig, build_tree, check_tree, martingale_decompose
from .model import Barrier, DriverSpec, ProblemData, check_assumptions
from .gbsde import GBSDESolution, picard_solve, solve_gbsde
from .reflected import penalization_sweep, solve_penalized, solve_reflected_direct
from .stopping import StoppingTime, snell_envelope, verify_representation
from .analysis import WeightedNormConfig, apriori_check, compare_solutions, contraction_rate, weighted_norm

__all__ = [
    "GRBSDEError",
    "NodeValues",
    "ScenarioTree",
    "TreeConfig",
    "build_tree",
    "check_tree",
    "martingale_decompose",
    "Barrier",
    "DriverSpec",
    "ProblemData",
    "check_assumptions",
    "GBSDESolution",
    "picard_solve",
    "solve_gbsde",
    "penalization_sweep",
    "solve_penalized",
    "solve_reflected_direct",
    "StoppingTime",
    "snell_envelope",
    "verify_representation",
    "WeightedNormConfig",
    "apriori_check",
    "compare_solutions",
    "contraction_rate",
    "weighted_norm",
]
