#!/usr/bin/env python3
"""
Tests for config ingestion and the command line pipelines
"""

import importlib
import json

import dotenv
import pandas as pd
import pytest

from grbsde.cli import main
from grbsde.core.errors import ConfigError, ConfigIOError
from grbsde.core.model import check_assumptions
from grbsde.lab_manager import EXIT_CONFIG_ERROR, EXIT_FAILED_CHECKS, EXIT_MODULE_ERROR, EXIT_OK, run_experiment
from grbsde.services.config_service import ConfigService, parse_config, validate_document


def _write(tmp_path, document, name='experiment.json'):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return path


def _summary(out, subcommand):
    return (out / f'{subcommand}_summary.txt').read_text().splitlines()


def test_defaults_are_filled(config_dir):
    cfg = parse_config(config_dir / 'zero.json')
    assert cfg.problem['mu'] == 2.0
    assert cfg.run['tol'] == 1e-10
    assert cfg.run['n_list'] == [1, 10, 100, 1000, 10000]
    assert cfg.run['method'] == 'enumerate'
    assert cfg.source.endswith('zero.json')


def test_invalid_intensity_is_reported_with_path():
    with pytest.raises(ConfigError) as info:
        validate_document({'tree': {'steps': 1, 'marks': [{'weight': 1.5}]}, 'problem': {}})
    violation = info.value.violations[0]
    assert violation['path'] == '/tree/marks/0/weight'
    assert 'marks[0]' in violation['message']


def test_positive_beta_is_rejected():
    with pytest.raises(ConfigError) as info:
        validate_document({'tree': {'steps': 1}, 'problem': {'driver': {'beta': 0.5}}})
    assert '(H2)(iv)' in str(info.value)


def test_all_schema_violations_are_collected():
    with pytest.raises(ConfigError) as info:
        validate_document({'tree': {'steps': 0, 'horizon': -1.0}, 'problem': {}, 'extra': 1})
    paths = {v['path'] for v in info.value.violations}
    assert {'/tree/steps', '/tree/horizon'} <= paths
    assert len(info.value.violations) >= 3


def test_missing_file(tmp_path):
    with pytest.raises(ConfigIOError):
        parse_config(tmp_path / 'nope.json')


def test_malformed_documents(tmp_path):
    broken = tmp_path / 'broken.yaml'
    broken.write_text('tree: [1, 2\n')
    with pytest.raises(ConfigError):
        parse_config(broken)
    listing = tmp_path / 'list.json'
    listing.write_text('[1, 2]')
    with pytest.raises(ConfigError):
        parse_config(listing)


def test_yaml_config(config_dir):
    cfg = parse_config(config_dir / 'upper_barrier.yaml')
    assert cfg.problem['barrier']['side'] == 'upper'
    assert cfg.run['method'] == 'nu_p'


def test_overrides_are_revalidated(config_dir, tmp_path):
    service = ConfigService(config_dir / 'two_step_put.json')
    service.load()
    cfg = service.apply_overrides({'seed': 11, 'out': str(tmp_path), 'method': None})
    assert cfg.run['seed'] == 11
    assert cfg.output['dir'] == str(tmp_path)
    assert cfg.run['method'] == 'enumerate'
    with pytest.raises(ConfigError):
        service.apply_overrides({'n_list': [10.0, 1.0]})


def test_build_problem_from_config(config_dir):
    service = ConfigService(config_dir / 'two_step_put.json')
    service.load()
    tree, data = service.build()
    assert tree.layer_sizes == [1, 4, 16]
    assert data.lower.jump_flags.tolist() == [False, True, False]
    assert data.terminal.shape == (16,)
    assert (data.terminal >= data.lower.values[2]).all()


def test_check_on_zero_problem(config_dir, tmp_path):
    code = main(['check', '--config', str(config_dir / 'zero.json'), '--out', str(tmp_path)])
    assert code == EXIT_OK
    lines = _summary(tmp_path, 'check')
    assert lines
    assert all(line.startswith('PASS ') and line.endswith(' 0') for line in lines)
    assert (tmp_path / 'assumptions.csv').is_file()


def test_penalize_writes_convergence_table(config_dir, tmp_path):
    code = main(['penalize', '--config', str(config_dir / 'two_step_put.json'), '--out', str(tmp_path),
                 '--n-list', '1,10,100'])
    assert code in (EXIT_OK, EXIT_FAILED_CHECKS)
    frame = pd.read_csv(tmp_path / 'penalize.csv')
    assert frame['n'].tolist() == [1, 10, 100]
    neg = frame['sup_neg_part'].tolist()
    assert all(b <= a for a, b in zip(neg, neg[1:]))
    auxiliary = pd.read_csv(tmp_path / 'auxiliary.csv')
    assert len(auxiliary) == 3
    assert (auxiliary['sup_abs_X'] >= auxiliary['x0'].abs()).all()
    assert any(line.startswith('PASS auxiliary_domination_n=100') for line in _summary(tmp_path, 'penalize'))


def test_stop_by_enumeration(config_dir, tmp_path):
    code = main(['stop', '--config', str(config_dir / 'two_step_put.json'), '--out', str(tmp_path),
                 '--method', 'enumerate'])
    assert code == EXIT_OK
    lines = _summary(tmp_path, 'stop')
    gap = next(line for line in lines if line.startswith('PASS stopping_enumerate'))
    assert float(gap.split()[-1]) <= 1e-10
    assert len(pd.read_csv(tmp_path / 'stop.csv')) == 17


def test_reflect_with_upper_barrier(config_dir, tmp_path):
    code = main(['reflect', '--config', str(config_dir / 'upper_barrier.yaml'), '--out', str(tmp_path)])
    assert code == EXIT_OK
    frame = pd.read_csv(tmp_path / 'reflect.csv')
    assert (frame['Y'] <= frame['barrier'] + 1e-12).all()


def test_missing_config_exits_with_config_error(tmp_path):
    assert main(['check', '--config', str(tmp_path / 'missing.json')]) == EXIT_CONFIG_ERROR


def test_bad_arguments_exit_with_config_error(config_dir, tmp_path):
    assert main(['bogus', '--config', str(config_dir / 'zero.json')]) == EXIT_CONFIG_ERROR
    assert main(['penalize', '--config', str(config_dir / 'zero.json'), '--out', str(tmp_path),
                 '--n-list', '10,1']) == EXIT_CONFIG_ERROR


def test_runs_are_reproducible(config_dir, tmp_path):
    first, second = tmp_path / 'a', tmp_path / 'b'
    for out in (first, second):
        assert main(['check', '--config', str(config_dir / 'two_step_put.json'), '--out', str(out),
                     '--seed', '5']) in (EXIT_OK, EXIT_FAILED_CHECKS)
    assert (first / 'assumptions.csv').read_bytes() == (second / 'assumptions.csv').read_bytes()
    assert (first / 'check_summary.txt').read_bytes() == (second / 'check_summary.txt').read_bytes()


def test_failed_check_exits_with_one(tmp_path):
    path = _write(tmp_path, {
        'tree': {'steps': 1, 'brownian_dim': 1, 'a_schedule': {'kind': 'deterministic', 'increments': [0.5]}},
        'problem': {'driver': {'g': {'slope': 1.0}, 'beta': -1.0}},
    })
    out = tmp_path / 'out'
    assert main(['check', '--config', str(path), '--out', str(out)]) == EXIT_FAILED_CHECKS
    assert any(line.startswith('FAIL H2_iv_monotone_g') for line in _summary(out, 'check'))


def test_cubic_driver_fails_growth_check(config_dir, tmp_path):
    code = main(['check', '--config', str(config_dir / 'cubic_driver.json'), '--out', str(tmp_path)])
    assert code == EXIT_FAILED_CHECKS
    lines = _summary(tmp_path, 'check')
    assert any(line.startswith('FAIL H2_vi_growth_f') for line in lines)
    assert any(line.startswith('PASS gamma_condition') for line in lines)


def test_module_error_exits_with_two(tmp_path):
    path = _write(tmp_path, {
        'tree': {'steps': 1, 'brownian_dim': 1},
        'problem': {'driver': {'alpha': 3.0}},
    })
    out = tmp_path / 'out'
    assert main(['solve', '--config', str(path), '--out', str(out)]) == EXIT_MODULE_ERROR
    assert any(line.startswith('FAIL non-monotone-step') for line in _summary(out, 'solve'))


def test_run_experiment_on_parsed_config(config_dir, tmp_path):
    cfg = parse_config(config_dir / 'zero.json')
    code, result = run_experiment(cfg, 'solve', output_dir=str(tmp_path))
    assert code == EXIT_OK
    assert result.success
    assert 'solve' in result.tables
    contraction = result.tables['contraction'].iloc[0]
    assert contraction['rate'] == 0.0
    assert bool(contraction['within_half'])
    assert (tmp_path / 'solve_summary.txt').is_file()


def test_compare_writes_pair_table(config_dir, tmp_path):
    code = main(['compare', '--config', str(config_dir / 'two_step_put.json'), '--out', str(tmp_path)])
    assert code == EXIT_OK
    frame = pd.read_csv(tmp_path / 'compare.csv')
    assert len(frame) == 20
    assert frame['y_violations'].sum() == 0
    assert frame['k_checked'].tolist() == [i % 2 == 1 for i in range(20)]
    lines = _summary(tmp_path, 'compare')
    assert any(line.startswith('PASS compare_config_y') for line in lines)
    assert any(line.startswith('PASS random_k_ordering') for line in lines)


def test_compare_with_upper_barrier(config_dir, tmp_path):
    code = main(['compare', '--config', str(config_dir / 'upper_barrier.yaml'), '--out', str(tmp_path)])
    assert code == EXIT_OK
    assert any(line.startswith('PASS compare_config_y') for line in _summary(tmp_path, 'compare'))


def test_cubic_driver_fails_only_growth(config_dir, tmp_path):
    check_out, stop_out = tmp_path / 'check', tmp_path / 'stop'
    main(['check', '--config', str(config_dir / 'cubic_driver.json'), '--out', str(check_out)])
    failed = [line.split()[1] for line in _summary(check_out, 'check') if line.startswith('FAIL')]
    assert failed == ['H2_vi_growth_f']
    assert main(['stop', '--config', str(config_dir / 'cubic_driver.json'), '--out', str(stop_out)]) == EXIT_OK


def test_g_defaults_to_declared_beta(tmp_path):
    path = _write(tmp_path, {'tree': {'steps': 1, 'brownian_dim': 1}, 'problem': {'driver': {'beta': -2.0}}})
    service = ConfigService(path)
    service.load()
    _, data = service.build()
    assert data.driver.g_slope == -2.0
    assert check_assumptions(data, samples=10)['H2_iv_monotone_g'].passed


def test_dotenv_is_loaded_by_the_entry_point_only(config_dir, tmp_path, monkeypatch):
    calls = []
    monkeypatch.setattr(dotenv, 'load_dotenv', lambda *a, **k: calls.append(a) or True)
    assert main(['check', '--config', str(config_dir / 'zero.json'), '--out', str(tmp_path)]) == EXIT_OK
    assert calls == []

    import app
    before = len(calls)
    importlib.reload(app)
    assert len(calls) == before + 1
