"""
Reflected generalized BSDE laboratory on finite scenario trees
"""

from .core import (
    GRBSDEError,
    ScenarioTree,
    TreeConfig,
    build_tree,
    ProblemData,
    DriverSpec,
    Barrier,
    solve_gbsde,
    solve_reflected_direct,
    penalization_sweep,
)

from .services import (
    ConfigService,
    ExperimentService,
    ReportService,
    parse_config,
)

from .lab_manager import LabManager, run_experiment

__version__ = "1.0.0"
__all__ = [
    "GRBSDEError",
    "ScenarioTree",
    "TreeConfig",
    "build_tree",
    "ProblemData",
    "DriverSpec",
    "Barrier",
    "solve_gbsde",
    "solve_reflected_direct",
    "penalization_sweep",
    "ConfigService",
    "ExperimentService",
    "ReportService",
    "parse_config",
    "LabManager",
    "run_experiment",
]
