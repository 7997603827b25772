#!/usr/bin/env python3
"""
Tests for weighted norms, the a priori estimate monitor, the jump
coefficient check and the comparison harness
"""

import numpy as np
import pytest

from conftest import make_data, make_tree
from grbsde.core.analysis import (
    WeightedNormConfig,
    apriori_check,
    check_gamma_condition,
    compare_solutions,
    random_comparison_pairs,
    s2mua_parts,
    weighted_norm,
)
from grbsde.core.errors import InvalidSpaceError, PreconditionViolatedError
from grbsde.core.gbsde import solve_gbsde
from grbsde.core.model import DriverSpec
from grbsde.core.reflected import solve_reflected_direct
from grbsde.core.scenario import NodeValues


def test_norm_of_constant_process():
    tree = make_tree(steps=2, d=1)
    cfg = WeightedNormConfig(mu=2.0)
    assert weighted_norm(tree, NodeValues.constant(tree, 1.0), 'S2muA', cfg) == pytest.approx(1.0)
    zeros = [np.zeros((n, 1)) for n in tree.layer_sizes[:-1]]
    assert weighted_norm(tree, zeros, 'M2mu_dt', cfg) == 0.0


def test_norm_with_increasing_process():
    tree = make_tree(steps=2, d=0, a_schedule={'kind': 'deterministic', 'increments': [0.5, 0.5]})
    cfg = WeightedNormConfig(mu=1.0)
    sup_part, dA_part = s2mua_parts(tree, NodeValues.constant(tree, 1.0), 1.0)
    assert sup_part == pytest.approx(np.e)
    assert dA_part == pytest.approx(0.5 + 0.5 * np.exp(0.5))
    ones = [np.ones(1), np.ones(1)]
    assert weighted_norm(tree, ones, 'M2mu_dA', cfg) == pytest.approx(0.5 + 0.5 * np.exp(0.5))
    assert weighted_norm(tree, ones, 'M2mu_dt', cfg) == pytest.approx(0.5 + 0.5 * np.exp(0.5))


def test_norm_of_terminal_k():
    tree = make_tree(steps=1, d=1)
    K = NodeValues([np.zeros(1), np.array([1.0, 3.0])])
    assert weighted_norm(tree, K, 'K') == pytest.approx(5.0)


def test_unknown_space():
    tree = make_tree(steps=1, d=1)
    with pytest.raises(InvalidSpaceError):
        weighted_norm(tree, NodeValues.zeros(tree), 'L7')


def test_estimate_on_zero_data():
    tree = make_tree(steps=2, d=1)
    data = make_data(tree)
    report = apriori_check(solve_gbsde(tree, data), data)
    assert all(value == pytest.approx(0.0, abs=1e-28) for value in report.lhs.values())
    assert report.rhs['phi'] == pytest.approx(1.0)
    assert report.ratio == pytest.approx(0.0, abs=1e-28)
    assert report.bounds_hold


def test_estimate_on_reflected_solution(jump_problem):
    tree, data = jump_problem
    report = apriori_check(solve_reflected_direct(tree, data), data)
    assert np.isfinite(report.ratio)
    assert report.lhs['K'] > 0
    assert report.rhs['barrier'] > 0
    assert report.bounds_hold
    assert set(report.bounds) == {'g_integral', 'f_integral', 'exp_a'}


def test_gamma_condition_passes_inside_range():
    report = check_gamma_condition(DriverSpec(c=[0.2]), nu=[1.0], weights=[0.5], samples=50, seed=4)
    assert report.passed
    assert report.worst == 0.0
    assert report.gamma.tolist() == pytest.approx([0.2])


def test_gamma_condition_fails_outside_range():
    report = check_gamma_condition(DriverSpec(c=[2.0]), nu=[1.0], weights=[0.5], samples=50, seed=4)
    assert not report.passed
    assert report.worst >= 0.5 - 1e-12
    assert report.witness is not None


def test_gamma_condition_without_marks():
    report = check_gamma_condition(DriverSpec(), nu=[], weights=[])
    assert report.passed
    assert report.witness is None


def test_larger_driver_gives_larger_solution(binary_put_problem):
    tree, data = binary_put_problem
    bigger = data.perturbed(f_shift=1.0)
    sols = (solve_reflected_direct(tree, data), solve_reflected_direct(tree, bigger))
    report = compare_solutions(tree, data, bigger, sols=sols)
    assert report.passed
    assert sols[1].y0 > sols[0].y0


def test_identical_data_compare_equal(jump_problem):
    tree, data = jump_problem
    gamma = check_gamma_condition(data.driver, nu=[1.0], weights=tree.mark_weights)
    report = compare_solutions(tree, data, data, gamma_report=gamma)
    assert report.passed
    assert report.max_y_excess == 0.0


def test_terminal_shift_moves_solution():
    tree = make_tree(steps=2, d=1)
    data = make_data(tree, terminal=tree.brownian_position[2][:, 0], h0=0.3)
    report = compare_solutions(tree, data, data.perturbed(xi_shift=0.25))
    assert report.passed
    assert report.max_y_excess == pytest.approx(-0.25, abs=1e-13)


def test_unordered_data_is_rejected(binary_put_problem):
    tree, data = binary_put_problem
    with pytest.raises(PreconditionViolatedError) as info:
        compare_solutions(tree, data, data.perturbed(xi_shift=-0.1))
    assert info.value.witness['layer'] == tree.steps


def test_v_dependence_needs_gamma_check(jump_problem):
    tree, data = jump_problem
    with pytest.raises(PreconditionViolatedError):
        compare_solutions(tree, data, data.perturbed(f_shift=0.1))


def test_k_ordering_for_zv_free_drivers(deterministic_barrier_problem):
    tree, data = deterministic_barrier_problem
    report = compare_solutions(tree, data, data.perturbed(f_shift=0.5))
    assert report.k_checked
    assert report.passed


def test_random_pairs_are_ordered():
    tree = make_tree(steps=2, d=1, weights=(0.5,))
    pairs = random_comparison_pairs(tree, 10, seed=3)
    assert len(pairs) == 10
    for i, (data, data2) in enumerate(pairs):
        gamma = check_gamma_condition(data.driver, nu=[1.0], weights=tree.mark_weights, samples=20)
        report = compare_solutions(tree, data, data2, gamma_report=gamma)
        assert report.passed, f"pair {i}"
        assert report.k_checked == (i % 2 == 1)


def test_random_pairs_are_seeded():
    tree = make_tree(steps=1, d=1, weights=(0.5,))
    first = random_comparison_pairs(tree, 3, seed=9)
    second = random_comparison_pairs(tree, 3, seed=9)
    for (a, _), (b, _) in zip(first, second):
        assert np.array_equal(a.terminal, b.terminal)


def test_upper_barrier_problems_compare_reflected_solutions():
    tree = make_tree(steps=2, d=1)
    data = make_data(tree, terminal=0.0, upper=lambda k, t: 0.5 * (1.0 - t.times[k]), h0=1.0)
    bigger = data.perturbed(f_shift=0.5)
    sols = (solve_reflected_direct(tree, data, 'upper'), solve_reflected_direct(tree, bigger, 'upper'))
    report = compare_solutions(tree, data, bigger)
    assert report.passed
    assert not report.k_checked
    # both solutions sit on the barrier at the root, so the unreflected gap of 0.5 is gone
    assert sols[0].y0 == pytest.approx(0.5, abs=1e-14)
    assert sols[1].y0 == pytest.approx(0.5, abs=1e-14)
    assert report.max_y_excess == 0.0


def test_lowered_upper_barrier_is_rejected():
    tree = make_tree(steps=1, d=1)
    data = make_data(tree, upper=lambda k, t: 1.0)
    lowered = make_data(tree, upper=lambda k, t: 0.5)
    with pytest.raises(PreconditionViolatedError) as info:
        compare_solutions(tree, data, lowered)
    assert info.value.witness['layer'] == 0


def test_mixed_barrier_sides_are_rejected():
    tree = make_tree(steps=1, d=1)
    with pytest.raises(PreconditionViolatedError):
        compare_solutions(tree, make_data(tree, upper=lambda k, t: 1.0), make_data(tree, lower=lambda k, t: -1.0))
