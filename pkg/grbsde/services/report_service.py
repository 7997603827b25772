#!/usr/bin/env python3
"""
Report Service - CSV tables and plain-text summaries
"""

import logging
from pathlib import Path
from typing import List

from ..core.errors import ConfigIOError

try:
    from config import REPORT_CONFIG
except ImportError:
    REPORT_CONFIG = {'float_format': '%.17g', 'output_dir': 'results'}

logger = logging.getLogger(__name__)


def format_value(value: float) -> str:
    return REPORT_CONFIG['float_format'] % value


def summary_lines(result) -> List[str]:
    """``PASS|FAIL <name> <value>`` per check; an aborted pipeline adds its error code"""
    lines = [f"{'PASS' if passed else 'FAIL'} {name} {format_value(value)}" for name, passed, value in result.checks]
    if result.error is not None:
        lines.append(f"FAIL {result.error.code} {result.error}")
    return lines


class ReportService:
    """Writes experiment results under one output directory"""

    def __init__(self, output_dir=None):
        self.output_dir = Path(output_dir or REPORT_CONFIG['output_dir'])

    def write(self, result) -> List[Path]:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigIOError(f"cannot create output directory {self.output_dir}: {e}")

        written = []
        for name, frame in result.tables.items():
            path = self.output_dir / f"{name}.csv"
            frame.to_csv(path, index=False, float_format=REPORT_CONFIG['float_format'])
            written.append(path)
            logger.debug(f"Wrote {len(frame)} rows to {path}")

        summary = self.output_dir / f"{result.subcommand}_summary.txt"
        summary.write_text("\n".join(summary_lines(result)) + "\n")
        written.append(summary)
        logger.info(f"📊 Reports written to {self.output_dir} ({len(written)} files)")
        return written
