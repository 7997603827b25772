#!/usr/bin/env python3
"""
Configuration file for the GRBSDE tree laboratory
"""

from enum import Enum

from decouple import config as env


class RunMode(Enum):
    DEVELOPMENT = "dev"
    CI = "ci"
    PRODUCTION = "prod"


# Backward solver configuration
SOLVER_CONFIG = {
    'root_tol': 1e-12,
    'max_bracket_doublings': 200,
    'residual_tol': 1e-12,
    'martingale_tol': 1e-12,
    'sweep_workers': env('GRBSDE_SWEEP_WORKERS', default=1, cast=int),
}

# Assumption spot checks (H1)-(H3")
CHECK_CONFIG = {
    'samples': 200,
    'box': 10.0,
    'tol': 1e-10,
}

# Weighted norms
NORM_CONFIG = {
    'mu': 2.0,
    'gamma': None,  # None -> 1 + 2|alpha| + 4 kappa^2
}

# Optimal stopping oracle
STOPPING_CONFIG = {
    'enumeration_cap': 10 ** 6,
    'tol': 1e-10,
}

# Experiment defaults filled in by parse_config
RUN_DEFAULTS = {
    'tol': 1e-10,
    'penalty_tol': 1e-3,
    'n_list': [1, 10, 100, 1000, 10000],
    'p_list': [1, 10, 100],
    'seed': 0,
    'max_picard_iters': 50,
    'method': 'enumerate',
    'start_layer': 0,
}

# Report emission
REPORT_CONFIG = {
    'float_format': '%.17g',
    'output_dir': env('GRBSDE_OUTPUT_DIR', default='results'),
}

# Logging Configuration
LOGGING_CONFIG = {
    'level': 'INFO',
    'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    'json': env('GRBSDE_LOG_JSON', default=False, cast=bool),
    'file': env('GRBSDE_LOG_FILE', default=''),
    'max_bytes': 10485760,  # 10MB
    'backup_count': 5
}


def get_run_mode():
    """Get run mode from environment with fallback"""
    env_mode = env('GRBSDE_MODE', default='dev').lower()

    mode_mapping = {
        'development': 'dev',
        'dev': 'dev',
        'ci': 'ci',
        'test': 'ci',
        'production': 'prod',
        'prod': 'prod'
    }

    return RunMode(mode_mapping.get(env_mode, 'dev'))


RUN_MODE = get_run_mode()

# Adjust settings based on run mode
if RUN_MODE == RunMode.PRODUCTION:
    LOGGING_CONFIG['level'] = 'WARNING'
    SOLVER_CONFIG['sweep_workers'] = max(SOLVER_CONFIG['sweep_workers'], 4)
elif RUN_MODE == RunMode.CI:
    LOGGING_CONFIG['level'] = 'INFO'
    SOLVER_CONFIG['sweep_workers'] = 1
else:  # DEVELOPMENT
    LOGGING_CONFIG['level'] = 'DEBUG'
