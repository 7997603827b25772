#!/usr/bin/env python3
"""
Command line entry point: ``grbsde <subcommand> --config <path> [--out <dir>] [--seed <n>]``
"""

import argparse
import logging
import logging.handlers
import sys
from typing import List, Optional

from pythonjsonlogger import jsonlogger

from .lab_manager import EXIT_CONFIG_ERROR, LabManager
from .services.experiment_service import SUBCOMMANDS

try:
    from config import LOGGING_CONFIG
except ImportError:
    LOGGING_CONFIG = {
        'level': 'INFO',
        'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        'json': False,
        'file': '',
        'max_bytes': 10485760,
        'backup_count': 5,
    }

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger from LOGGING_CONFIG"""
    if LOGGING_CONFIG.get('json'):
        formatter = jsonlogger.JsonFormatter(LOGGING_CONFIG['format'])
    else:
        formatter = logging.Formatter(LOGGING_CONFIG['format'])

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if LOGGING_CONFIG.get('file'):
        handlers.append(logging.handlers.RotatingFileHandler(
            LOGGING_CONFIG['file'],
            maxBytes=LOGGING_CONFIG['max_bytes'],
            backupCount=LOGGING_CONFIG['backup_count'],
        ))
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)
    root.setLevel(level or LOGGING_CONFIG['level'])


def _number_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='grbsde',
        description="Reflected generalized BSDE laboratory on scenario trees",
    )
    parser.add_argument('subcommand', choices=SUBCOMMANDS, help='pipeline to run')
    parser.add_argument('--config', required=True, help='experiment file (.json, .yaml or .yml)')
    parser.add_argument('--out', default=None, help='output directory for CSV reports and the summary')
    parser.add_argument('--seed', type=_seed, default=None, help='seed for sampled checks and random suites')
    parser.add_argument('--method', choices=('enumerate', 'nu_p'), default=None,
                        help='stopping check: brute-force enumeration or first-hitting policies')
    parser.add_argument('--n-list', type=_number_list, default=None, help='penalization parameters, e.g. 1,10,100')
    parser.add_argument('--p-list', type=_number_list, default=None, help='hitting-policy parameters, e.g. 1,10,100')
    parser.add_argument('--log-level', default=None, choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG_ERROR if e.code else 0
    setup_logging(args.log_level)

    overrides = {
        'seed': args.seed,
        'method': args.method,
        'n_list': args.n_list,
        'p_list': args.p_list,
        'out': args.out,
    }
    manager = LabManager(args.config, overrides)
    if not manager.initialized:
        for error in manager.initialization_errors:
            print(error, file=sys.stderr)
        return manager.exit_code

    code = manager.run(args.subcommand)
    result = manager.last_result
    passed = sum(1 for _, ok, _ in result.checks if ok)
    print(f"{args.subcommand}: {passed}/{len(result.checks)} checks passed"
          + (f", aborted with {result.error.code}" if result.error is not None else ""))
    return code


if __name__ == '__main__':
    sys.exit(main())
