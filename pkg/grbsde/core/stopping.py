"""
Optimal stopping on the tree: Snell envelope, brute-force enumeration of
adapted stopping times, first-hitting policies and the check that the
reflected solution is the value of the stopping problem.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import EnumerationTooLargeError, InvalidStoppingTimeError, PreconditionViolatedError
from .model import ProblemData
from .scenario import NodeValues, ScenarioTree

try:
    from config import STOPPING_CONFIG
except ImportError:
    STOPPING_CONFIG = {'enumeration_cap': 10 ** 6, 'tol': 1e-10}

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class StoppingTime:
    """
    Stop/continue decision per node. A path stops at the first layer >= start
    whose node says stop; every node of the last layer stops.
    """

    tree: ScenarioTree
    stop: List[np.ndarray]
    start: int = 0
    label: str = ''

    def __post_init__(self):
        K = self.tree.steps
        if len(self.stop) != K + 1:
            raise InvalidStoppingTimeError(f"need decisions on {K + 1} layers, got {len(self.stop)}")
        self.stop = [np.asarray(layer, dtype=bool) for layer in self.stop]
        for k, layer in enumerate(self.stop):
            if layer.shape != (self.tree.layer_sizes[k],):
                raise InvalidStoppingTimeError(f"layer {k} decision has shape {layer.shape}")
        if not self.stop[K].all():
            raise InvalidStoppingTimeError("every path must stop by the horizon")

    @classmethod
    def from_paths(cls, tree: ScenarioTree, stop_layers: Sequence[int], start: int = 0,
                   label: str = '') -> "StoppingTime":
        """Build from one stopping layer per leaf path, checking adaptedness"""
        layers = np.asarray(stop_layers, dtype=int)
        if layers.shape != (tree.layer_sizes[-1],):
            raise InvalidStoppingTimeError(f"need one stopping layer per leaf, got {layers.shape}")
        if np.any(layers < start) or np.any(layers > tree.steps):
            raise InvalidStoppingTimeError(f"stopping layers must lie in [{start}, {tree.steps}]")
        stop = []
        for k in range(tree.steps + 1):
            anc = tree.leaf_ancestors(k)
            stopped = (layers <= k).astype(float)
            share = np.bincount(anc, weights=stopped, minlength=tree.layer_sizes[k])
            count = np.bincount(anc, minlength=tree.layer_sizes[k])
            mixed = np.flatnonzero((share > 0) & (share < count))
            if mixed.size:
                raise InvalidStoppingTimeError(
                    f"{{tau <= {k}}} is not decided at layer {k}",
                    witness={'layer': k, 'node': int(mixed[0])},
                )
            stop.append(share == count)
        return cls(tree=tree, stop=stop, start=start, label=label)

    def stopping_layers(self) -> np.ndarray:
        """Stopping layer of every leaf path"""
        tree = self.tree
        result = np.full(tree.layer_sizes[-1], tree.steps)
        decided = np.zeros(tree.layer_sizes[-1], dtype=bool)
        for k in range(self.start, tree.steps + 1):
            hit = self.stop[k][tree.leaf_ancestors(k)] & ~decided
            result[hit] = k
            decided |= hit
        return result


@dataclass
class StoppingValueReport:
    side: str
    start: int
    method: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    best: Optional[np.ndarray] = None
    gap: float = 0.0
    dominance_violation: float = 0.0
    passed: bool = True


def running_reward(data: ProblemData, sol) -> List[np.ndarray]:
    """f(t_k, Y, Z, V) Delta_k + g(t_k, Y) dA_k with (Y, Z, V) frozen at ``sol``"""
    tree = data.tree
    return [
        data.f_layer(k, sol.Y[k], sol.Z[k], sol.V[k]) * tree.deltas[k] + data.g_layer(k, sol.Y[k]) * tree.dA[k]
        for k in range(tree.steps)
    ]


def snell_envelope(tree: ScenarioTree, data: ProblemData, sol, side: str = 'lower') -> NodeValues:
    """S_K = xi, S_k = max(L_k, E[S_{k+1}] + reward_k) (min with U for an upper barrier)"""
    barrier = data.barrier(side)
    reward = running_reward(data, sol)
    pick = np.maximum if side == 'lower' else np.minimum
    S: List[Optional[np.ndarray]] = [None] * (tree.steps + 1)
    S[tree.steps] = data.terminal.copy()
    for k in range(tree.steps - 1, -1, -1):
        S[k] = pick(barrier.values[k], tree.conditional_expectation(S[k + 1], k) + reward[k])
    return NodeValues(S)


def evaluate_stopping(tree: ScenarioTree, data: ProblemData, tau: StoppingTime, sol, t: int = 0,
                      side: str = 'lower', reward: Optional[List[np.ndarray]] = None) -> np.ndarray:
    """
    J(tau) at every layer-t node: accumulated running reward before tau plus
    the barrier at tau (or xi when tau = T).
    """
    if tau.tree is not tree:
        raise InvalidStoppingTimeError("stopping time belongs to a different tree")
    if t < tau.start:
        raise InvalidStoppingTimeError(f"stopping time starts at layer {tau.start}, evaluated from {t}")
    barrier = data.barrier(side)
    reward = running_reward(data, sol) if reward is None else reward
    J = data.terminal.copy()
    for k in range(tree.steps - 1, t - 1, -1):
        carry = tree.conditional_expectation(J, k) + reward[k]
        J = np.where(tau.stop[k], barrier.values[k], carry)
    return J


def count_stopping_times(tree: ScenarioTree, t: int = 0, cap: Optional[int] = None) -> int:
    """Number of adapted policies from layer t: c_K = 1, c_k = 1 + c_{k+1}^b, total c_t^{n_t}"""
    cap = STOPPING_CONFIG['enumeration_cap'] if cap is None else cap
    count = 1
    for _ in range(tree.steps - 1, t - 1, -1):
        count = 1 + count ** tree.branching if count <= cap else cap + 1
        count = min(count, cap + 1)
    total = 1
    for _ in range(tree.layer_sizes[t]):
        total = min(total * count, cap + 1)
    return total


def _frontiers(tree: ScenarioTree, k: int, node: int):
    """All stop sets of the subtree rooted at (k, node)"""
    if k == tree.steps:
        yield ((k, node),)
        return
    yield ((k, node),)
    for combo in itertools.product(*[list(_frontiers(tree, k + 1, child)) for child in tree.children(k, node)]):
        yield tuple(itertools.chain.from_iterable(combo))


def enumerate_stopping_times(tree: ScenarioTree, t: int = 0, cap: Optional[int] = None) -> List[StoppingTime]:
    """Every adapted stopping time from layer t, forced stop at the horizon"""
    cap = STOPPING_CONFIG['enumeration_cap'] if cap is None else cap
    total = count_stopping_times(tree, t, cap)
    if total > cap:
        raise EnumerationTooLargeError(
            f"more than {cap} stopping times from layer {t}; use the hitting policies instead",
            witness={'layer': t, 'cap': cap},
        )
    per_node = [list(_frontiers(tree, t, node)) for node in range(tree.layer_sizes[t])]
    policies = []
    for i, combo in enumerate(itertools.product(*per_node)):
        stop = [np.zeros(n, dtype=bool) for n in tree.layer_sizes]
        stop[-1][:] = True
        for k, node in itertools.chain.from_iterable(combo):
            stop[k][node] = True
        policies.append(StoppingTime(tree=tree, stop=stop, start=t, label=f'policy_{i}'))
    logger.debug(f"Enumerated {len(policies)} stopping times from layer {t}")
    return policies


def optimal_nu_p(sol, p: float, t: int = 0) -> StoppingTime:
    """First layer >= t where Y <= L + 1/p (Y >= U - 1/p for an upper barrier)"""
    if p < 1:
        raise PreconditionViolatedError(f"p must be >= 1, got {p}")
    tree = sol.tree
    stop = []
    for k in range(tree.steps + 1):
        if k < t:
            stop.append(np.zeros(tree.layer_sizes[k], dtype=bool))
        elif sol.side == 'lower':
            stop.append(sol.Y[k] <= sol.barrier.values[k] + 1.0 / p)
        else:
            stop.append(sol.Y[k] >= sol.barrier.values[k] - 1.0 / p)
    stop[-1] = np.ones(tree.layer_sizes[-1], dtype=bool)
    return StoppingTime(tree=tree, stop=stop, start=t, label=f'nu_p={p:g}')


def verify_representation(tree: ScenarioTree, data: ProblemData, sol, method: str = 'enumerate', t: int = 0,
                          p_list: Sequence[float] = (1, 10, 100), cap: Optional[int] = None,
                          tol: Optional[float] = None) -> StoppingValueReport:
    """
    Compare the reflected Y at layer t with the stopping values: the best
    enumerated J (max for lower, min for upper) or J(nu^p) for each p.
    """
    tol = STOPPING_CONFIG['tol'] if tol is None else tol
    side = sol.side
    sign = 1.0 if side == 'lower' else -1.0
    reward = running_reward(data, sol)
    Y_t = sol.Y[t]
    report = StoppingValueReport(side=side, start=t, method=method)

    if method == 'enumerate':
        best = None
        for tau in enumerate_stopping_times(tree, t, cap):
            J = evaluate_stopping(tree, data, tau, sol, t, side, reward)
            best = J if best is None else (np.maximum(best, J) if side == 'lower' else np.minimum(best, J))
            excess = sign * (J - Y_t)
            report.dominance_violation = max(report.dominance_violation, float(np.max(excess)))
            for node in range(tree.layer_sizes[t]):
                report.rows.append({'policy': tau.label, 'node': node, 'J': float(J[node]),
                                    'Y': float(Y_t[node]), 'gap': float(abs(J[node] - Y_t[node]))})
        report.best = best
        report.gap = float(np.max(np.abs(best - Y_t)))
        report.passed = report.gap <= tol and report.dominance_violation <= tol
    elif method == 'nu_p':
        worst_gap = 0.0
        report.passed = True
        for p in p_list:
            tau = optimal_nu_p(sol, p, t)
            J = evaluate_stopping(tree, data, tau, sol, t, side, reward)
            shortfall = sign * (Y_t - J)
            ok = bool(np.all(shortfall >= -tol) and np.all(shortfall <= 1.0 / p + tol))
            report.passed &= ok
            worst_gap = max(worst_gap, float(np.max(np.abs(shortfall))))
            for node in range(tree.layer_sizes[t]):
                report.rows.append({'policy': tau.label, 'node': node, 'J': float(J[node]),
                                    'Y': float(Y_t[node]), 'gap': float(shortfall[node])})
        report.gap = worst_gap
    else:
        raise PreconditionViolatedError(f"unknown method '{method}', expected enumerate or nu_p")

    if report.passed:
        logger.info(f"✅ Stopping representation ({method}) holds at layer {t}, gap {report.gap:.3e}")
    else:
        logger.warning(f"⚠️ Stopping representation ({method}) fails at layer {t}, gap {report.gap:.3e}")
    return report
