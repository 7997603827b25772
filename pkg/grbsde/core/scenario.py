"""
Scenario trees: the finite filtered probability space.

A tree carries the Brownian surrogate (Rademacher +/- sqrt(Delta) per
dimension), one Bernoulli-thinned compensated count per mark and an
optional Rademacher factor orthogonal to both. All nodes of a layer share
the same branch law, so a node's children are the contiguous block
``[i*b, (i+1)*b)`` of the next layer.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    EmptyGridError,
    IncompleteProcessError,
    InvalidIntensityError,
    InvalidScheduleError,
    NotAMartingaleIncrementError,
)

try:
    from config import SOLVER_CONFIG
except ImportError:
    SOLVER_CONFIG = {'martingale_tol': 1e-12}

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Instants t_0 = 0 < ... < t_K = T"""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise EmptyGridError("time grid needs at least one step")
        if times[0] != 0.0:
            raise EmptyGridError(f"time grid must start at 0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise EmptyGridError("time grid must be strictly increasing")
        object.__setattr__(self, 'times', times)

    @classmethod
    def uniform(cls, steps: int, horizon: float) -> "TimeGrid":
        if steps < 1:
            raise EmptyGridError(f"K={steps}: at least one step is required")
        if horizon <= 0:
            raise EmptyGridError(f"horizon must be positive, got {horizon}")
        return cls(np.linspace(0.0, float(horizon), steps + 1))

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass(frozen=True)
class Mark:
    label: str
    value: float = 1.0
    weight: float = 0.0  # q_j = Q(e_j) * eta, intensity per unit time


@dataclass(frozen=True)
class MarkSpace:
    marks: Tuple[Mark, ...] = ()

    @property
    def size(self) -> int:
        return len(self.marks)

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.marks], dtype=float)


@dataclass(frozen=True, eq=False)
class BranchTable:
    """Branch law of one step, shared by every node of the layer"""

    step: int
    delta: float
    prob: np.ndarray      # (b,)
    dB: np.ndarray        # (b, d)
    dN: np.ndarray        # (b, m)
    dm: np.ndarray        # (b,)
    arrivals: np.ndarray  # (b, m) 0/1 arrivals per mark

    @property
    def size(self) -> int:
        return self.prob.size


@dataclass
class TreeConfig:
    steps: int = 1
    horizon: float = 1.0
    brownian_dim: int = 1
    marks: List[Mark] = field(default_factory=list)
    extra_factor: bool = False
    a_schedule: Dict[str, Any] = field(default_factory=lambda: {'kind': 'none'})
    times: Optional[List[float]] = None


class NodeValues:
    """Node-indexed process: one array per layer, ``None`` for uncovered layers"""

    def __init__(self, layers: Sequence[Optional[np.ndarray]]):
        self.layers: List[Optional[np.ndarray]] = [
            None if layer is None else np.asarray(layer, dtype=float) for layer in layers
        ]

    @classmethod
    def constant(cls, tree: "ScenarioTree", value: float) -> "NodeValues":
        return cls([np.full(n, float(value)) for n in tree.layer_sizes])

    @classmethod
    def zeros(cls, tree: "ScenarioTree") -> "NodeValues":
        return cls.constant(tree, 0.0)

    @classmethod
    def empty(cls, tree: "ScenarioTree") -> "NodeValues":
        return cls([None] * len(tree.layer_sizes))

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, k: int) -> np.ndarray:
        layer = self.layers[k]
        if layer is None:
            raise IncompleteProcessError(f"process is not defined on layer {k}")
        return layer

    def __setitem__(self, k: int, values: np.ndarray) -> None:
        self.layers[k] = np.asarray(values, dtype=float)

    def covers(self, k: int) -> bool:
        return 0 <= k < len(self.layers) and self.layers[k] is not None

    def value(self, k: int, node: int) -> float:
        return float(self[k][node])

    def copy(self) -> "NodeValues":
        return NodeValues([None if l is None else l.copy() for l in self.layers])

    def _combine(self, other, op) -> "NodeValues":
        if isinstance(other, NodeValues):
            return NodeValues([
                None if (a is None or b is None) else op(a, b)
                for a, b in zip(self.layers, other.layers)
            ])
        return NodeValues([None if a is None else op(a, other) for a in self.layers])

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return NodeValues([None if a is None else -a for a in self.layers])

    def max_abs_diff(self, other: "NodeValues") -> float:
        worst = 0.0
        for a, b in zip(self.layers, other.layers):
            if a is not None and b is not None and a.size:
                worst = max(worst, float(np.max(np.abs(a - b))))
        return worst

    def min_value(self) -> float:
        return min(float(np.min(a)) for a in self.layers if a is not None and a.size)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Martingale increment split into dB, dN and orthogonal parts"""

    z: np.ndarray         # (d,) or (n, d)
    v: np.ndarray         # (m,) or (n, m)
    residual: np.ndarray  # (b,) or (n, b)


class ScenarioTree:
    """Immutable finite filtered probability space"""

    def __init__(self, grid: TimeGrid, marks: MarkSpace, brownian_dim: int,
                 extra_factor: bool, tables: List[BranchTable], a_schedule: Dict[str, Any]):
        self.grid = grid
        self.marks = marks
        self.brownian_dim = brownian_dim
        self.extra_factor = extra_factor
        self.tables = tables
        self.a_schedule = dict(a_schedule)
        self.branching = tables[0].size
        self.layer_sizes = [self.branching ** k for k in range(grid.steps + 1)]
        self._build_path_state()

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    def _build_path_state(self) -> None:
        K, b = self.steps, self.branching
        d, m = self.brownian_dim, self.marks.size

        prob = [np.ones(1)]
        position = [np.zeros((1, d))]
        counts = [np.zeros((1, m))]
        extra = [np.zeros(1)]
        incoming = [np.zeros(1)]  # arrivals on the edge into the node

        for k in range(K):
            table = self.tables[k]
            n = self.layer_sizes[k]
            prob.append(np.repeat(prob[k], b) * np.tile(table.prob, n))
            position.append(np.repeat(position[k], b, axis=0) + np.tile(table.dB, (n, 1)))
            counts.append(np.repeat(counts[k], b, axis=0) + np.tile(table.arrivals, (n, 1)))
            extra.append(np.repeat(extra[k], b) + np.tile(table.dm, n))
            incoming.append(np.tile(table.arrivals.sum(axis=1), n))

        self.node_prob = NodeValues(prob)
        self.brownian_position = position
        self.arrival_counts = counts
        self.extra_position = NodeValues(extra)

        schedule = self.a_schedule
        kind = schedule.get('kind', 'none')
        increments: List[np.ndarray] = []
        for k in range(K):
            n = self.layer_sizes[k]
            if kind == 'none':
                increments.append(np.zeros(n))
            elif kind == 'deterministic':
                increments.append(np.full(n, float(schedule['increments'][k])))
            elif kind == 'marks':
                increments.append(schedule.get('base', 0.0) + schedule.get('per_arrival', 0.0) * incoming[k])
            else:
                raise InvalidScheduleError(f"unknown A schedule kind '{kind}'")
            if np.any(increments[-1] < 0):
                raise InvalidScheduleError(f"A must be nondecreasing, step {k} has a negative increment")

        A = [np.zeros(1)]
        for k in range(K):
            A.append(np.repeat(A[k] + increments[k], b))
        self.A = NodeValues(A)
        self.dA = increments

    # ------------------------------------------------------------------
    # shape
    # ------------------------------------------------------------------
    @property
    def steps(self) -> int:
        return self.grid.steps

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def deltas(self) -> np.ndarray:
        return self.grid.deltas

    @property
    def mark_weights(self) -> np.ndarray:
        return self.marks.weights

    @property
    def node_count(self) -> int:
        return sum(self.layer_sizes)

    def branch_table(self, k: int) -> BranchTable:
        return self.tables[k]

    def children(self, k: int, node: int) -> range:
        b = self.branching
        return range(node * b, (node + 1) * b)

    def leaf_ancestors(self, k: int) -> np.ndarray:
        """Layer-k ancestor of every leaf"""
        span = self.branching ** (self.steps - k)
        return np.arange(self.layer_sizes[-1]) // span

    # ------------------------------------------------------------------
    # probability
    # ------------------------------------------------------------------
    def conditional_expectation(self, values_next: Union[np.ndarray, NodeValues], k: int) -> np.ndarray:
        if isinstance(values_next, NodeValues):
            if not values_next.covers(k + 1):
                raise IncompleteProcessError(f"no values on layer {k + 1}")
            values_next = values_next[k + 1]
        values_next = np.asarray(values_next, dtype=float)
        n, b = self.layer_sizes[k], self.branching
        if values_next.shape[0] != n * b:
            raise IncompleteProcessError(
                f"layer {k + 1} has {n * b} nodes, got {values_next.shape[0]} values"
            )
        if np.any(np.isnan(values_next)):
            missing = int(np.flatnonzero(np.isnan(values_next.reshape(n * b, -1)).any(axis=1))[0])
            raise IncompleteProcessError(
                f"missing value on layer {k + 1}", witness={'layer': k + 1, 'node': missing}
            )
        blocks = values_next.reshape((n, b) + values_next.shape[1:])
        return np.tensordot(self.tables[k].prob, blocks, axes=([0], [1]))

    def expectation(self, values: np.ndarray, k: int) -> float:
        """Unconditional mean of a layer-k quantity"""
        return float(np.dot(self.node_prob[k], np.asarray(values, dtype=float)))

    def children_block(self, values_next: np.ndarray, k: int) -> np.ndarray:
        """Layer-(k+1) values reshaped to (n_k, b)"""
        return np.asarray(values_next, dtype=float).reshape(self.layer_sizes[k], self.branching)

    def describe(self) -> Dict[str, Any]:
        return {
            'steps': self.steps,
            'horizon': self.grid.horizon,
            'brownian_dim': self.brownian_dim,
            'marks': self.marks.size,
            'extra_factor': self.extra_factor,
            'branching': self.branching,
            'nodes': self.node_count,
        }


def _branch_table(k: int, delta: float, brownian_dim: int, marks: MarkSpace,
                  extra_factor: bool) -> BranchTable:
    factors = []
    for _ in range(brownian_dim):
        factors.append([('B', 1.0, 0.5), ('B', -1.0, 0.5)])
    for j, mark in enumerate(marks.marks):
        lam = mark.weight * delta
        if lam > 0:
            factors.append([('N', 1.0, lam), ('N', 0.0, 1.0 - lam)])
    if extra_factor:
        factors.append([('m', 1.0, 0.5), ('m', -1.0, 0.5)])

    active = [j for j, mark in enumerate(marks.marks) if mark.weight * delta > 0]
    combos = list(itertools.product(*factors)) if factors else [()]
    b, d, m = len(combos), brownian_dim, marks.size
    prob = np.ones(b)
    dB = np.zeros((b, d))
    dN = np.zeros((b, m))
    arrivals = np.zeros((b, m))
    dm = np.zeros(b)
    root = np.sqrt(delta)
    compensator = marks.weights * delta

    for c, combo in enumerate(combos):
        brownian, mark_pos = 0, 0
        dN[c] = -compensator
        for kind, outcome, p in combo:
            prob[c] *= p
            if kind == 'B':
                dB[c, brownian] = outcome * root
                brownian += 1
            elif kind == 'N':
                j = active[mark_pos]
                arrivals[c, j] = outcome
                dN[c, j] = outcome - compensator[j]
                mark_pos += 1
            else:
                dm[c] = outcome
    return BranchTable(step=k, delta=delta, prob=prob, dB=dB, dN=dN, dm=dm, arrivals=arrivals)


def build_tree(cfg: TreeConfig) -> ScenarioTree:
    """Build the product tree described by ``cfg``"""
    if cfg.times is not None:
        grid = TimeGrid(np.asarray(cfg.times, dtype=float))
    else:
        grid = TimeGrid.uniform(cfg.steps, cfg.horizon)

    if cfg.brownian_dim < 0:
        raise EmptyGridError(f"brownian_dim must be >= 0, got {cfg.brownian_dim}")

    marks = MarkSpace(tuple(cfg.marks))
    for j, mark in enumerate(marks.marks):
        if mark.weight < 0:
            raise InvalidIntensityError(f"marks[{j}] has negative weight {mark.weight}",
                                        witness={'mark': j})
        worst = mark.weight * float(np.max(grid.deltas))
        if worst >= 1.0:
            raise InvalidIntensityError(
                f"marks[{j}]: q*Delta = {worst:g} must be < 1",
                witness={'mark': j, 'q_delta': worst},
            )

    schedule = dict(cfg.a_schedule or {'kind': 'none'})
    if schedule.get('kind') == 'deterministic' and len(schedule.get('increments', [])) != grid.steps:
        raise InvalidScheduleError(
            f"deterministic A schedule needs {grid.steps} increments, "
            f"got {len(schedule.get('increments', []))}"
        )

    tables = [
        _branch_table(k, float(delta), cfg.brownian_dim, marks, cfg.extra_factor)
        for k, delta in enumerate(grid.deltas)
    ]
    tree = ScenarioTree(grid, marks, cfg.brownian_dim, cfg.extra_factor, tables, schedule)
    logger.debug(f"Built scenario tree {tree.describe()}")
    return tree


def conditional_expectation(tree: ScenarioTree, X: Union[np.ndarray, NodeValues], k: int) -> np.ndarray:
    """E[X_{k+1} | node] for every node of layer k"""
    return tree.conditional_expectation(X, k)


def martingale_decompose(tree: ScenarioTree, k: int, mu: np.ndarray,
                         tol: Optional[float] = None) -> Decomposition:
    """
    Split centered child values into z.dB + sum_j v_j dN_j + residual.

    ``mu`` is either one node's child values (b,) or a whole layer (n_k, b).
    """
    tol = SOLVER_CONFIG['martingale_tol'] if tol is None else tol
    table = tree.branch_table(k)
    mu = np.asarray(mu, dtype=float)
    single = mu.ndim == 1
    block = np.atleast_2d(mu)
    if block.shape[-1] != table.size:
        raise IncompleteProcessError(f"expected {table.size} child values, got {block.shape[-1]}")

    means = block @ table.prob
    scale = np.maximum(1.0, np.max(np.abs(block), axis=1))
    bad = np.flatnonzero(np.abs(means) > tol * scale)
    if bad.size:
        raise NotAMartingaleIncrementError(
            f"child values have mean {means[bad[0]]:.3e} at layer {k}",
            witness={'layer': k, 'row': int(bad[0]), 'mean': float(means[bad[0]])},
        )

    weighted = block * table.prob
    z = weighted @ table.dB / table.delta
    variance = table.prob @ table.dN ** 2
    projections = weighted @ table.dN
    v = np.divide(projections, variance, out=np.zeros_like(projections), where=variance > 0)
    residual = block - z @ table.dB.T - v @ table.dN.T

    if single:
        return Decomposition(z=z[0], v=v[0], residual=residual[0])
    return Decomposition(z=z, v=v, residual=residual)


def check_tree(tree: ScenarioTree) -> Dict[str, float]:
    """Worst per-node moment errors of the branch laws"""
    report = {
        'probability_sum': 0.0,
        'layer_probability_sum': 0.0,
        'brownian_mean': 0.0,
        'brownian_second_moment': 0.0,
        'compensated_mean': 0.0,
        'extra_mean': 0.0,
        'cross_moment': 0.0,
        'a_monotone_violation': 0.0,
    }
    for k, table in enumerate(tree.tables):
        p = table.prob
        report['probability_sum'] = max(report['probability_sum'], abs(p.sum() - 1.0))
        if tree.brownian_dim:
            report['brownian_mean'] = max(report['brownian_mean'], float(np.max(np.abs(p @ table.dB))))
            gram = table.dB.T @ (table.dB * p[:, None])
            target = table.delta * np.eye(tree.brownian_dim)
            report['brownian_second_moment'] = max(report['brownian_second_moment'],
                                                   float(np.max(np.abs(gram - target))))
        if tree.marks.size:
            report['compensated_mean'] = max(report['compensated_mean'], float(np.max(np.abs(p @ table.dN))))
        report['extra_mean'] = max(report['extra_mean'], abs(float(p @ table.dm)))

        families = [table.dB, table.dN, table.dm[:, None]]
        cross = 0.0
        for a, b_ in itertools.combinations(families, 2):
            if a.size and b_.size:
                cross = max(cross, float(np.max(np.abs(a.T @ (b_ * p[:, None])))))
        if tree.marks.size > 1:
            gram_n = table.dN.T @ (table.dN * p[:, None])
            off = gram_n - np.diag(np.diag(gram_n))
            cross = max(cross, float(np.max(np.abs(off))))
        report['cross_moment'] = max(report['cross_moment'], cross)

    for k in range(tree.steps + 1):
        report['layer_probability_sum'] = max(report['layer_probability_sum'],
                                              abs(float(tree.node_prob[k].sum()) - 1.0))
    for k in range(tree.steps):
        parent_a = np.repeat(tree.A[k], tree.branching)
        report['a_monotone_violation'] = max(report['a_monotone_violation'],
                                             float(np.max(parent_a - tree.A[k + 1], initial=0.0)))
    return report
