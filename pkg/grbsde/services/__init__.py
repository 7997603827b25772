"""
Service layer: config ingestion, experiment pipelines and reports
"""

from .config_service import ConfigService, ExperimentConfig, parse_config
from .experiment_service import ExperimentResult, ExperimentService
from .report_service import ReportService

__all__ = [
    "ConfigService",
    "ExperimentConfig",
    "parse_config",
    "ExperimentResult",
    "ExperimentService",
    "ReportService",
]
