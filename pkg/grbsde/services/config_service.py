#!/usr/bin/env python3
"""
Config Service - experiment file ingestion, validation and model builders
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml
from jsonschema import Draft202012Validator

from ..core.errors import ConfigError, ConfigIOError
from ..core.model import Barrier, DriverSpec, ProblemData
from ..core.scenario import Mark, NodeValues, ScenarioTree, TreeConfig, build_tree

try:
    from config import NORM_CONFIG, REPORT_CONFIG, RUN_DEFAULTS, STOPPING_CONFIG, CHECK_CONFIG
except ImportError:
    NORM_CONFIG = {'mu': 2.0}
    REPORT_CONFIG = {'output_dir': 'results'}
    RUN_DEFAULTS = {'tol': 1e-10, 'penalty_tol': 1e-3, 'n_list': [1, 10, 100, 1000, 10000],
                    'p_list': [1, 10, 100], 'seed': 0, 'max_picard_iters': 50,
                    'method': 'enumerate', 'start_layer': 0}
    STOPPING_CONFIG = {'enumeration_cap': 10 ** 6}
    CHECK_CONFIG = {'samples': 200}

logger = logging.getLogger(__name__)

_NUMBER = {'type': 'number'}
_NUMBERS = {'type': 'array', 'items': _NUMBER}

EXPERIMENT_SCHEMA: Dict[str, Any] = {
    '$schema': 'https://json-schema.org/draft/2020-12/schema',
    'type': 'object',
    'required': ['tree', 'problem'],
    'additionalProperties': False,
    'properties': {
        'tree': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'steps': {'type': 'integer', 'minimum': 1},
                'horizon': {'type': 'number', 'exclusiveMinimum': 0},
                'times': {'type': 'array', 'items': _NUMBER, 'minItems': 2},
                'brownian_dim': {'type': 'integer', 'minimum': 0},
                'extra_factor': {'type': 'boolean'},
                'marks': {
                    'type': 'array',
                    'items': {
                        'type': 'object',
                        'required': ['weight'],
                        'additionalProperties': False,
                        'properties': {
                            'label': {'type': 'string'},
                            'value': _NUMBER,
                            'weight': {'type': 'number', 'minimum': 0},
                        },
                    },
                },
                'a_schedule': {
                    'type': 'object',
                    'required': ['kind'],
                    'additionalProperties': False,
                    'properties': {
                        'kind': {'enum': ['none', 'deterministic', 'marks']},
                        'increments': {'type': 'array', 'items': {'type': 'number', 'minimum': 0}},
                        'base': {'type': 'number', 'minimum': 0},
                        'per_arrival': {'type': 'number', 'minimum': 0},
                    },
                },
            },
        },
        'problem': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'driver': {
                    'type': 'object',
                    'additionalProperties': False,
                    'properties': {
                        'f': {
                            'type': 'object',
                            'additionalProperties': False,
                            'properties': {
                                'form': {'enum': ['linear', 'cubic']},
                                'a': _NUMBER, 'b': _NUMBERS, 'c': _NUMBERS, 'h0': _NUMBER, 'h1': _NUMBER,
                            },
                        },
                        'g': {
                            'type': 'object',
                            'additionalProperties': False,
                            'properties': {
                                'form': {'enum': ['linear']},
                                'slope': _NUMBER, 'h0': _NUMBER, 'h1': _NUMBER,
                            },
                        },
                        'alpha': _NUMBER, 'beta': _NUMBER, 'kappa': _NUMBER,
                        'phi': _NUMBER, 'psi': _NUMBER,
                    },
                },
                'terminal': {'$ref': '#/$defs/rule'},
                'barrier': {
                    'allOf': [{'$ref': '#/$defs/rule'}],
                    'properties': {
                        'side': {'enum': ['lower', 'upper']},
                        'jumps': {
                            'type': 'array',
                            'items': {
                                'type': 'object',
                                'required': ['step', 'size'],
                                'additionalProperties': False,
                                'properties': {
                                    'step': {'type': 'integer', 'minimum': 1},
                                    'size': {'type': 'number', 'minimum': 0},
                                },
                            },
                        },
                    },
                },
                'mu': _NUMBER,
            },
        },
        'run': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'n_list': {'type': 'array', 'items': {'type': 'number', 'minimum': 0}, 'minItems': 1},
                'p_list': {'type': 'array', 'items': _NUMBER, 'minItems': 1},
                'tol': {'type': 'number', 'exclusiveMinimum': 0},
                'penalty_tol': {'type': 'number', 'exclusiveMinimum': 0},
                'seed': {'type': 'integer', 'minimum': 0},
                'samples': {'type': 'integer', 'minimum': 1},
                'enumeration_cap': {'type': 'integer', 'minimum': 1},
                'max_picard_iters': {'type': 'integer', 'minimum': 2},
                'method': {'enum': ['enumerate', 'nu_p']},
                'start_layer': {'type': 'integer', 'minimum': 0},
                'gamma': {'type': 'number', 'exclusiveMinimum': 0},
                'nu': _NUMBERS,
                'pairs': {'type': 'integer', 'minimum': 1},
            },
        },
        'compare': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'perturbation': {
                    'type': 'object',
                    'additionalProperties': False,
                    'properties': {
                        'f_shift': {'type': 'number', 'minimum': 0},
                        'xi_shift': {'type': 'number', 'minimum': 0},
                        'g_shift': {'type': 'number', 'minimum': 0},
                    },
                },
            },
        },
        'output': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {'dir': {'type': 'string'}},
        },
    },
    '$defs': {
        'rule': {
            'type': 'object',
            'required': ['rule'],
            'properties': {
                'rule': {'enum': ['constant', 'linear_time', 'affine', 'put', 'call']},
                'value': _NUMBER,
                'slope': _NUMBER,
                'const': _NUMBER,
                'brownian': _NUMBERS,
                'counts': _NUMBERS,
                'extra': _NUMBER,
                'time': _NUMBER,
                'strike': _NUMBER,
                'spot': {'type': 'number', 'exclusiveMinimum': 0},
                'sigma': {'type': 'number', 'minimum': 0},
                'scale': _NUMBER,
            },
        },
    },
}


@dataclass
class ExperimentConfig:
    tree: Dict[str, Any]
    problem: Dict[str, Any]
    run: Dict[str, Any] = field(default_factory=dict)
    compare: Dict[str, Any] = field(default_factory=dict)
    output: Dict[str, Any] = field(default_factory=dict)
    source: Optional[str] = None

    def tree_config(self) -> TreeConfig:
        tree = self.tree
        return TreeConfig(
            steps=int(tree.get('steps', len(tree.get('times', [0, 1])) - 1)),
            horizon=float(tree.get('horizon', 1.0)),
            brownian_dim=int(tree.get('brownian_dim', 1)),
            marks=[
                Mark(label=mark.get('label', f'e{j + 1}'), value=float(mark.get('value', 1.0)),
                     weight=float(mark['weight']))
                for j, mark in enumerate(tree.get('marks', []))
            ],
            extra_factor=bool(tree.get('extra_factor', False)),
            a_schedule=dict(tree.get('a_schedule', {'kind': 'none'})),
            times=tree.get('times'),
        )


def _pointer(path) -> str:
    return '/' + '/'.join(str(part) for part in path) if path else '/'


def _grid_deltas(tree: Dict[str, Any]) -> Optional[np.ndarray]:
    if 'times' in tree:
        times = np.asarray(tree['times'], dtype=float)
        return np.diff(times)
    steps = tree.get('steps', 1)
    return np.full(steps, float(tree.get('horizon', 1.0)) / steps)


def _numeric_violations(raw: Dict[str, Any]) -> List[Dict[str, str]]:
    """Constraints the schema cannot express"""
    violations: List[Dict[str, str]] = []
    tree = raw.get('tree', {})
    problem = raw.get('problem', {})
    driver = problem.get('driver', {})
    run = raw.get('run', {})

    deltas = _grid_deltas(tree)
    if 'times' in tree:
        times = np.asarray(tree['times'], dtype=float)
        if times[0] != 0 or np.any(np.diff(times) <= 0):
            violations.append({'path': '/tree/times', 'message': 'times must start at 0 and strictly increase'})
    steps = len(deltas)
    if deltas.size and np.all(deltas > 0):
        for j, mark in enumerate(tree.get('marks', [])):
            q_delta = float(mark.get('weight', 0.0)) * float(np.max(deltas))
            if q_delta >= 1.0:
                violations.append({
                    'path': f'/tree/marks/{j}/weight',
                    'message': f'marks[{j}]: q*Delta = {q_delta:g} must be < 1 (invalid-intensity)',
                })

    schedule = tree.get('a_schedule', {})
    if schedule.get('kind') == 'deterministic' and len(schedule.get('increments', [])) != steps:
        violations.append({'path': '/tree/a_schedule/increments',
                           'message': f'deterministic A schedule needs {steps} increments'})

    d = int(tree.get('brownian_dim', 1))
    m = len(tree.get('marks', []))
    f_spec = driver.get('f', {})
    if 'b' in f_spec and len(f_spec['b']) not in (0, d):
        violations.append({'path': '/problem/driver/f/b', 'message': f'b needs {d} entries'})
    if 'c' in f_spec and len(f_spec['c']) not in (0, m):
        violations.append({'path': '/problem/driver/f/c', 'message': f'c needs {m} entries'})
    if driver.get('beta', -1.0) >= 0:
        violations.append({'path': '/problem/driver/beta',
                           'message': f"beta = {driver['beta']} violates (H2)(iv): beta must be < 0"})
    if driver.get('kappa', 1.0) <= 0:
        violations.append({'path': '/problem/driver/kappa',
                           'message': f"kappa = {driver['kappa']} violates (H2)(v): kappa must be > 0"})
    for name in ('phi', 'psi'):
        if driver.get(name, 1.0) < 1:
            violations.append({'path': f'/problem/driver/{name}', 'message': f'{name} must be >= 1'})
    if problem.get('mu', 2.0) <= 1:
        violations.append({'path': '/problem/mu', 'message': 'mu must be > 1'})

    for j, jump in enumerate(problem.get('barrier', {}).get('jumps', [])):
        if jump.get('step', 1) > steps:
            violations.append({'path': f'/problem/barrier/jumps/{j}/step',
                               'message': f'jump step must lie in 1..{steps}'})

    n_list = run.get('n_list')
    if n_list and any(b <= a for a, b in zip(n_list, n_list[1:])):
        violations.append({'path': '/run/n_list', 'message': 'n-list must be strictly increasing (invalid-schedule)'})
    for i, p in enumerate(run.get('p_list', [])):
        if p < 1:
            violations.append({'path': f'/run/p_list/{i}', 'message': 'p must be >= 1'})
    if run.get('start_layer', 0) > steps:
        violations.append({'path': '/run/start_layer', 'message': f'start layer must be <= {steps}'})
    if 'nu' in run and len(run['nu']) != m:
        violations.append({'path': '/run/nu', 'message': f'nu needs {m} entries'})
    return violations


def _with_defaults(raw: Dict[str, Any]) -> Dict[str, Any]:
    filled = copy.deepcopy(raw)
    problem = filled['problem']
    problem.setdefault('mu', NORM_CONFIG['mu'])
    problem.setdefault('driver', {})
    problem.setdefault('terminal', {'rule': 'constant', 'value': 0.0})
    run = filled.setdefault('run', {})
    for key in ('tol', 'penalty_tol', 'n_list', 'p_list', 'seed', 'max_picard_iters', 'method', 'start_layer'):
        run.setdefault(key, copy.deepcopy(RUN_DEFAULTS[key]))
    run.setdefault('samples', CHECK_CONFIG['samples'])
    run.setdefault('enumeration_cap', STOPPING_CONFIG['enumeration_cap'])
    run.setdefault('pairs', 100)
    filled.setdefault('compare', {}).setdefault('perturbation', {'f_shift': 0.5, 'xi_shift': 0.0, 'g_shift': 0.0})
    filled.setdefault('output', {}).setdefault('dir', REPORT_CONFIG['output_dir'])
    return filled


def _load_document(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigIOError(f"config file not found: {path}")
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigIOError(f"cannot read {path}: {e}")
    try:
        if path.suffix.lower() in ('.yaml', '.yml'):
            document = yaml.safe_load(text)
        else:
            document = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError([{'path': '/', 'message': f'malformed document: {e}'}])
    if not isinstance(document, dict):
        raise ConfigError([{'path': '/', 'message': 'top level must be an object'}])
    return document


def validate_document(document: Dict[str, Any]) -> ExperimentConfig:
    """Validate a loaded document; every violation is collected before raising"""
    validator = Draft202012Validator(EXPERIMENT_SCHEMA)
    violations = [
        {'path': _pointer(error.absolute_path), 'message': error.message}
        for error in sorted(validator.iter_errors(document), key=lambda e: list(map(str, e.absolute_path)))
    ]
    if not violations:
        violations = _numeric_violations(document)
    if violations:
        raise ConfigError(violations)
    filled = _with_defaults(document)
    return ExperimentConfig(tree=filled['tree'], problem=filled['problem'], run=filled['run'],
                            compare=filled['compare'], output=filled['output'])


def parse_config(path) -> ExperimentConfig:
    """Load a JSON (or YAML) experiment file into a validated ExperimentConfig"""
    path = Path(path)
    cfg = validate_document(_load_document(path))
    cfg.source = str(path)
    logger.info(f"✅ Loaded experiment config {path}")
    return cfg


def _rule_layer(tree: ScenarioTree, k: int, rule: Dict[str, Any]) -> np.ndarray:
    """Evaluate a terminal/barrier rule on layer k from the path state"""
    n = tree.layer_sizes[k]
    t = float(tree.times[k])
    kind = rule['rule']
    if kind == 'constant':
        return np.full(n, float(rule.get('value', 0.0)))
    if kind == 'linear_time':
        return np.full(n, float(rule.get('value', 0.0)) + float(rule.get('slope', 0.0)) * t)
    if kind == 'affine':
        values = np.full(n, float(rule.get('const', 0.0)) + float(rule.get('time', 0.0)) * t)
        brownian = np.asarray(rule.get('brownian', []), dtype=float)
        if brownian.size:
            values = values + tree.brownian_position[k][:, :brownian.size] @ brownian
        counts = np.asarray(rule.get('counts', []), dtype=float)
        if counts.size:
            values = values + tree.arrival_counts[k][:, :counts.size] @ counts
        values = values + float(rule.get('extra', 0.0)) * tree.extra_position[k]
        return values
    spot, sigma = float(rule.get('spot', 1.0)), float(rule.get('sigma', 0.0))
    b1 = tree.brownian_position[k][:, 0] if tree.brownian_dim else np.zeros(n)
    price = spot * np.exp(sigma * b1 - 0.5 * sigma ** 2 * t)
    strike = float(rule.get('strike', spot))
    payoff = np.maximum(strike - price, 0.0) if kind == 'put' else np.maximum(price - strike, 0.0)
    return float(rule.get('scale', 1.0)) * payoff


def build_problem(cfg: ExperimentConfig, tree: ScenarioTree) -> ProblemData:
    problem = cfg.problem
    drv = problem.get('driver', {})
    f_spec, g_spec = drv.get('f', {}), drv.get('g', {})
    driver = DriverSpec(
        f_form=f_spec.get('form', 'linear'),
        a=float(f_spec.get('a', 0.0)),
        b=np.asarray(f_spec.get('b', []), dtype=float),
        c=np.asarray(f_spec.get('c', []), dtype=float),
        h0=float(f_spec.get('h0', 0.0)),
        h1=float(f_spec.get('h1', 0.0)),
        g_slope=float(g_spec.get('slope', drv.get('beta', -1.0))),
        g_h0=float(g_spec.get('h0', 0.0)),
        g_h1=float(g_spec.get('h1', 0.0)),
        alpha=float(drv.get('alpha', 0.0)),
        beta=float(drv.get('beta', -1.0)),
        kappa=float(drv.get('kappa', 1.0)),
        phi=NodeValues.constant(tree, float(drv.get('phi', 1.0))),
        psi=NodeValues.constant(tree, float(drv.get('psi', 1.0))),
    )
    terminal = _rule_layer(tree, tree.steps, problem['terminal'])

    lower = upper = None
    if 'barrier' in problem:
        spec = problem['barrier']
        side = spec.get('side', 'lower')
        values = NodeValues([_rule_layer(tree, k, spec) for k in range(tree.steps + 1)])
        barrier = Barrier.from_values(side, values, spec.get('jumps', []))
        if side == 'lower':
            lower = barrier
        else:
            upper = barrier
    return ProblemData(tree=tree, terminal=terminal, driver=driver, lower=lower, upper=upper,
                       mu=float(problem.get('mu', NORM_CONFIG['mu'])))


class ConfigService:
    """Service for experiment configuration"""

    def __init__(self, path=None):
        self.path = path
        self.config: Optional[ExperimentConfig] = None

    def load(self, path=None) -> ExperimentConfig:
        self.path = path or self.path
        self.config = parse_config(self.path)
        return self.config

    def apply_overrides(self, overrides: Dict[str, Any]) -> ExperimentConfig:
        """Command-line values win over the file; the result is re-validated"""
        document = {
            'tree': self.config.tree, 'problem': self.config.problem, 'run': dict(self.config.run),
            'compare': self.config.compare, 'output': dict(self.config.output),
        }
        for key, value in overrides.items():
            if value is None:
                continue
            if key == 'out':
                document['output']['dir'] = value
            else:
                document['run'][key] = value
        source = self.config.source
        self.config = validate_document(document)
        self.config.source = source
        return self.config

    def build(self) -> Tuple[ScenarioTree, ProblemData]:
        tree = build_tree(self.config.tree_config())
        return tree, build_problem(self.config, tree)
