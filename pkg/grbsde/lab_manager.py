#!/usr/bin/env python3
"""
Lab Manager - wires an experiment file to the tree, the problem data and the services
"""

import logging
from typing import Any, Dict, Optional, Tuple

from .core.errors import ConfigError, ConfigIOError, GRBSDEError
from .core.scenario import build_tree
from .services.config_service import ConfigService, ExperimentConfig, build_problem
from .services.experiment_service import ExperimentResult, ExperimentService
from .services.report_service import ReportService

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED_CHECKS = 1
EXIT_MODULE_ERROR = 2
EXIT_CONFIG_ERROR = 3


class LabManager:
    """Loads one experiment and runs its subcommands"""

    def __init__(self, config_path, overrides: Optional[Dict[str, Any]] = None):
        self.config_path = config_path
        self.config_service = ConfigService(config_path)
        self.config = None
        self.tree = None
        self.data = None
        self.experiment_service = None
        self.report_service = None
        self.last_result: Optional[ExperimentResult] = None

        self.initialized = False
        self.initialization_errors = []
        self.exit_code = EXIT_OK

        self._initialize_all(overrides or {})

    def _initialize_all(self, overrides: Dict[str, Any]) -> None:
        try:
            logger.info(f"🚀 Loading experiment {self.config_path}")
            self.config_service.load()
            self.config = self.config_service.apply_overrides(overrides)
            self.tree, self.data = self.config_service.build()
            self.experiment_service = ExperimentService(self.config, self.tree, self.data)
            self.report_service = ReportService(self.config.output['dir'])
            self.initialized = True
            logger.info(f"✅ Experiment ready: {self.tree.node_count} nodes")
        except (ConfigError, ConfigIOError) as e:
            logger.error(f"❌ Configuration rejected: {e}")
            self.initialization_errors.append(str(e))
            self.exit_code = EXIT_CONFIG_ERROR
        except GRBSDEError as e:
            logger.error(f"❌ Problem construction failed: {e}")
            self.initialization_errors.append(str(e))
            self.exit_code = EXIT_MODULE_ERROR

    def run(self, subcommand: str) -> int:
        """Run one pipeline, write its reports and return the process exit status"""
        if not self.initialized:
            return self.exit_code
        result = self.experiment_service.run(subcommand)
        self.last_result = result
        return _finish(self.report_service, result)

    def get_status(self) -> Dict[str, Any]:
        """Get status of the loaded experiment and the last run"""
        return {
            "initialized": self.initialized,
            "initialization_errors": self.initialization_errors,
            "config": self.config.source if self.config else None,
            "tree": self.tree.describe() if self.tree else None,
            "barrier": None if self.data is None else (
                'lower' if self.data.lower is not None else 'upper' if self.data.upper is not None else None),
            "output_dir": str(self.report_service.output_dir) if self.report_service else None,
            "last_run": None if self.last_result is None else {
                "subcommand": self.last_result.subcommand,
                "success": self.last_result.success,
                "checks": len(self.last_result.checks),
            },
        }


def _finish(report_service: ReportService, result: ExperimentResult) -> int:
    try:
        report_service.write(result)
    except ConfigIOError as e:
        logger.error(f"❌ Reports not written: {e}")
        return EXIT_CONFIG_ERROR
    if result.error is not None:
        return EXIT_MODULE_ERROR
    return EXIT_OK if result.success else EXIT_FAILED_CHECKS


def run_experiment(cfg: ExperimentConfig, subcommand: str,
                   output_dir: Optional[str] = None) -> Tuple[int, ExperimentResult]:
    """Run one subcommand on an already parsed config; returns (exit status, result)"""
    tree = build_tree(cfg.tree_config())
    data = build_problem(cfg, tree)
    result = ExperimentService(cfg, tree, data).run(subcommand)
    return _finish(ReportService(output_dir or cfg.output['dir']), result), result
