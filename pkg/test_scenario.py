#!/usr/bin/env python3
"""
Tests for scenario trees: branch laws, conditional expectations and the
martingale decomposition
"""

import numpy as np
import pytest

from conftest import make_tree
from grbsde.core.errors import (
    EmptyGridError,
    IncompleteProcessError,
    InvalidIntensityError,
    InvalidScheduleError,
    NotAMartingaleIncrementError,
)
from grbsde.core.scenario import NodeValues, check_tree, conditional_expectation, martingale_decompose


def test_single_brownian_step():
    tree = make_tree(steps=1, d=1)
    table = tree.branch_table(0)
    assert tree.layer_sizes == [1, 2]
    assert table.prob.tolist() == [0.5, 0.5]
    assert sorted(table.dB[:, 0].tolist()) == [-1.0, 1.0]


def test_single_mark_step_is_compensated():
    tree = make_tree(steps=1, d=0, weights=(0.5,))
    table = tree.branch_table(0)
    assert tree.layer_sizes[-1] == 2
    assert table.prob.tolist() == [0.5, 0.5]
    assert table.dN[:, 0].tolist() == [0.5, -0.5]
    assert table.arrivals[:, 0].tolist() == [1.0, 0.0]


def test_product_tree_with_extra_factor():
    tree = make_tree(steps=1, d=1, weights=(0.25,), extra=True)
    prob = tree.branch_table(0).prob
    assert tree.layer_sizes[-1] == 8
    assert prob.sum() == pytest.approx(1.0, abs=1e-15)
    assert sorted(set(np.round(prob, 12))) == [0.0625, 0.1875]


def test_zero_weight_mark_does_not_branch():
    tree = make_tree(steps=1, d=1, weights=(0.0,))
    assert tree.branching == 2
    assert np.all(tree.branch_table(0).dN == 0)


def test_invalid_intensity_names_the_mark():
    with pytest.raises(InvalidIntensityError) as info:
        make_tree(steps=1, d=1, weights=(0.2, 1.5))
    assert 'marks[1]' in str(info.value)
    assert info.value.code == 'invalid-intensity'


def test_empty_grid():
    with pytest.raises(EmptyGridError):
        make_tree(steps=0)


def test_non_uniform_grid():
    tree = make_tree(d=1, times=[0.0, 0.25, 1.0])
    assert tree.steps == 2
    assert tree.deltas.tolist() == [0.25, 0.75]
    assert sorted(tree.branch_table(0).dB[:, 0].tolist()) == [-0.5, 0.5]


def test_deterministic_tree_has_one_child():
    tree = make_tree(steps=3, d=0)
    assert tree.layer_sizes == [1, 1, 1, 1]
    assert tree.times.tolist() == pytest.approx([0.0, 1 / 3, 2 / 3, 1.0])


def test_a_schedules():
    det = make_tree(steps=2, d=1, a_schedule={'kind': 'deterministic', 'increments': [0.5, 0.25]})
    assert det.A[2].tolist() == [0.75] * 4

    marks = make_tree(steps=2, d=0, weights=(0.5,), a_schedule={'kind': 'marks', 'per_arrival': 0.5})
    assert marks.dA[0].tolist() == [0.0]
    assert marks.dA[1].tolist() == [0.5, 0.0]
    assert marks.A[2].tolist() == [0.5, 0.5, 0.0, 0.0]

    with pytest.raises(InvalidScheduleError):
        make_tree(steps=2, a_schedule={'kind': 'deterministic', 'increments': [0.5]})
    with pytest.raises(InvalidScheduleError):
        make_tree(steps=1, a_schedule={'kind': 'deterministic', 'increments': [-0.5]})


def test_tree_navigation():
    tree = make_tree(steps=2, d=1)
    assert list(tree.children(1, 1)) == [2, 3]
    assert tree.leaf_ancestors(1).tolist() == [0, 0, 1, 1]
    assert tree.node_prob[2].tolist() == [0.25] * 4


def test_conditional_expectation_examples():
    tree = make_tree(steps=1, d=1)
    assert conditional_expectation(tree, np.array([4.0, 6.0]), 0)[0] == pytest.approx(5.0)
    assert conditional_expectation(tree, np.array([3.0, 3.0]), 0)[0] == pytest.approx(3.0)

    square = make_tree(steps=1, d=2)
    assert conditional_expectation(square, np.array([1.0, 2.0, 3.0, 4.0]), 0)[0] == pytest.approx(2.5)


def test_conditional_expectation_needs_next_layer():
    tree = make_tree(steps=1, d=1)
    with pytest.raises(IncompleteProcessError):
        conditional_expectation(tree, NodeValues.empty(tree), 0)
    with pytest.raises(IncompleteProcessError):
        conditional_expectation(tree, np.array([1.0, np.nan]), 0)


def test_decompose_brownian_increment():
    tree = make_tree(steps=1, d=1)
    dB = tree.branch_table(0).dB[:, 0]
    dec = martingale_decompose(tree, 0, dB)
    assert dec.z.tolist() == pytest.approx([1.0])
    assert dec.v.size == 0
    assert np.max(np.abs(dec.residual)) <= 1e-15


def test_decompose_keeps_extra_factor_in_residual():
    tree = make_tree(steps=1, d=1, extra=True)
    table = tree.branch_table(0)
    mu = table.dB[:, 0] + 2.0 * table.dm
    dec = martingale_decompose(tree, 0, mu)
    assert dec.z.tolist() == pytest.approx([1.0])
    assert dec.residual == pytest.approx(2.0 * table.dm)


def test_decompose_compensated_count():
    tree = make_tree(steps=1, d=0, weights=(0.5,))
    mu = 3.0 * tree.branch_table(0).dN[:, 0]
    dec = martingale_decompose(tree, 0, mu)
    assert dec.v.tolist() == pytest.approx([3.0])
    assert dec.z.size == 0
    assert np.max(np.abs(dec.residual)) <= 1e-15


def test_decompose_rejects_uncentered_values():
    tree = make_tree(steps=1, d=1)
    with pytest.raises(NotAMartingaleIncrementError):
        martingale_decompose(tree, 0, np.array([1.0, 2.0]))


def test_decompose_layerwise_matches_single_node():
    tree = make_tree(steps=2, d=1, weights=(0.4,))
    rng = np.random.default_rng(3)
    block = rng.normal(size=(tree.layer_sizes[1], tree.branching))
    block -= (block @ tree.branch_table(1).prob)[:, None]
    layer = martingale_decompose(tree, 1, block)
    for node in range(tree.layer_sizes[1]):
        single = martingale_decompose(tree, 1, block[node])
        assert single.z == pytest.approx(layer.z[node], abs=1e-14)
        assert single.v == pytest.approx(layer.v[node], abs=1e-14)


def test_check_tree_moments():
    tree = make_tree(steps=2, horizon=0.5, d=2, weights=(0.3, 0.6), extra=True)
    report = check_tree(tree)
    assert max(report.values()) <= 1e-12
