"""
Shared builders for the test suite: small scenario trees and problem data.
"""

from pathlib import Path

import numpy as np
import pytest

from grbsde.core.model import Barrier, DriverSpec, ProblemData
from grbsde.core.scenario import Mark, NodeValues, TreeConfig, build_tree

CONFIG_DIR = Path(__file__).parent / 'configs'


def make_tree(steps=1, horizon=1.0, d=1, weights=(), extra=False, a_schedule=None, times=None):
    marks = [Mark(label=f'e{j + 1}', weight=w) for j, w in enumerate(weights)]
    return build_tree(TreeConfig(steps=steps, horizon=horizon, brownian_dim=d, marks=marks,
                                 extra_factor=extra, a_schedule=a_schedule or {'kind': 'none'}, times=times))


def barrier_values(tree, fn):
    """NodeValues from fn(k, tree) evaluated layer by layer"""
    return NodeValues([np.broadcast_to(np.asarray(fn(k, tree), dtype=float), (tree.layer_sizes[k],)).copy()
                       for k in range(tree.steps + 1)])


def make_data(tree, terminal=0.0, lower=None, upper=None, jumps=None, mu=2.0, **driver):
    leaves = tree.layer_sizes[-1]
    xi = np.broadcast_to(np.asarray(terminal, dtype=float), (leaves,)).copy()
    lower_barrier = None if lower is None else Barrier.from_values('lower', barrier_values(tree, lower), jumps)
    upper_barrier = None if upper is None else Barrier.from_values('upper', barrier_values(tree, upper), jumps)
    return ProblemData(tree=tree, terminal=xi, driver=DriverSpec(**driver), lower=lower_barrier,
                       upper=upper_barrier, mu=mu)


@pytest.fixture
def tree_factory():
    return make_tree


@pytest.fixture
def data_factory():
    return make_data


@pytest.fixture
def deterministic_barrier_problem():
    """No branching, K=2 on [0, 1], f=g=0, xi=0, L = 1 - t"""
    tree = make_tree(steps=2, d=0)
    return tree, make_data(tree, terminal=0.0, lower=lambda k, t: 1.0 - t.times[k])


@pytest.fixture
def binary_put_problem():
    """Two-step binary tree with a put payoff and a put barrier"""
    tree = make_tree(steps=2, d=1)

    def put(k, t):
        return np.maximum(0.2 - t.brownian_position[k][:, 0], 0.0)

    data = make_data(tree, terminal=put(2, tree), lower=put, a=-0.5, h0=0.1, b=[0.2], alpha=-0.5)
    return tree, data


@pytest.fixture
def jump_problem():
    """Brownian plus one mark, deterministic A, linear driver with z and v terms and a lower barrier"""
    tree = make_tree(steps=2, horizon=1.0, d=1, weights=(0.5,),
                     a_schedule={'kind': 'deterministic', 'increments': [0.1, 0.2]})

    def lower(k, t):
        return 0.5 * (1.0 - t.times[k]) + 0.2 * t.brownian_position[k][:, 0]

    terminal = np.maximum(lower(2, tree), 0.0) + 0.1 * tree.arrival_counts[2][:, 0]
    data = make_data(tree, terminal=terminal, lower=lower, a=-0.5, b=[0.2], c=[0.2], h0=0.1,
                     g_slope=-0.5, g_h0=0.1, alpha=-0.5, beta=-0.5, kappa=1.0)
    return tree, data


@pytest.fixture
def config_dir():
    return CONFIG_DIR
