"""
Backward solver for the unreflected generalized BSDE on a scenario tree.

Each step projects the next layer onto the increments (z, v, M) and then
solves the implicit scalar equation

    h(y) = y - f(t_k, y, z, v) * Delta_k - g(t_k, y) * Delta A_k - E[Y_{k+1}] = 0

which is strictly increasing as long as 1 - alpha*Delta_k - beta*Delta A_k > 0.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from .analysis import default_gamma, part2_distance
from .errors import NonMonotoneStepError, SolverFailureError
from .model import ProblemData
from .scenario import NodeValues, ScenarioTree, martingale_decompose

try:
    from config import NORM_CONFIG, RUN_DEFAULTS, SOLVER_CONFIG
except ImportError:
    SOLVER_CONFIG = {'root_tol': 1e-12, 'max_bracket_doublings': 200, 'residual_tol': 1e-12}
    NORM_CONFIG = {'mu': 2.0, 'gamma': None}
    RUN_DEFAULTS = {'tol': 1e-10, 'max_picard_iters': 50}

logger = logging.getLogger(__name__)

_RTOL = 4.0 * np.finfo(float).eps


@dataclass(eq=False)
class GBSDESolution:
    tree: ScenarioTree
    Y: NodeValues
    Z: List[np.ndarray]         # layer k < K: (n_k, d)
    V: List[np.ndarray]         # layer k < K: (n_k, m)
    M: List[np.ndarray]         # layer k < K: (n_k, b) increments along child edges
    residual: List[np.ndarray]  # layer k < K: (n_k,)

    @property
    def y0(self) -> float:
        return float(self.Y[0][0])

    def max_residual(self) -> float:
        return max((float(np.max(r)) for r in self.residual if r.size), default=0.0)

    def m_orthogonality(self) -> float:
        """Worst |E[dM]|, |E[dM dB]|, |E[dM dN]| over all nodes"""
        worst = 0.0
        for k, dM in enumerate(self.M):
            table = self.tree.branch_table(k)
            weighted = dM * table.prob
            worst = max(worst, float(np.max(np.abs(weighted.sum(axis=1)))))
            if table.dB.size:
                worst = max(worst, float(np.max(np.abs(weighted @ table.dB))))
            if table.dN.size:
                worst = max(worst, float(np.max(np.abs(weighted @ table.dN))))
        return worst

    def max_abs_m(self) -> float:
        return max((float(np.max(np.abs(dM))) for dM in self.M if dM.size), default=0.0)


@dataclass
class StepResult:
    y: float
    z: np.ndarray
    v: np.ndarray
    m: np.ndarray
    residual: float


@dataclass
class PicardHistory:
    tree: ScenarioTree
    data: ProblemData
    iterates: List[GBSDESolution] = field(default_factory=list)
    differences: List[float] = field(default_factory=list)
    mu: float = 2.0
    gamma: float = 1.0
    converged_at: Optional[int] = None

    @property
    def converged(self) -> bool:
        return self.converged_at is not None

    @property
    def solution(self) -> GBSDESolution:
        return self.iterates[-1]


def solve_monotone_root(h: Callable[[float], float], center: float,
                        max_doublings: Optional[int] = None) -> float:
    """Root of an increasing scalar function: bracket by doubling, brentq, last-ulp polish"""
    max_doublings = SOLVER_CONFIG['max_bracket_doublings'] if max_doublings is None else max_doublings
    radius = max(1.0, abs(center))
    lo, hi = center - radius, center + radius
    h_lo, h_hi = h(lo), h(hi)
    doublings = 0
    while h_lo > 0 or h_hi < 0:
        if np.isnan(h_lo) or np.isnan(h_hi) or doublings >= max_doublings:
            raise SolverFailureError(
                f"could not bracket root around {center} after {doublings} doublings",
                witness={'lo': lo, 'hi': hi, 'h_lo': h_lo, 'h_hi': h_hi},
            )
        radius *= 2.0
        lo, hi = center - radius, center + radius
        h_lo, h_hi = h(lo), h(hi)
        doublings += 1
    if h_lo == 0:
        return lo
    if h_hi == 0:
        return hi

    try:
        root = brentq(h, lo, hi, xtol=1e-15, rtol=_RTOL, maxiter=500)
    except (RuntimeError, ValueError) as e:
        raise SolverFailureError(f"brentq failed on [{lo}, {hi}]: {e}")

    best, best_h = root, abs(h(root))
    for candidate in (np.nextafter(root, -np.inf), np.nextafter(root, np.inf)):
        value = abs(h(candidate))
        if value < best_h:
            best, best_h = float(candidate), value
    return float(best)


def _check_step(data: ProblemData, k: int, node: int, dA: float) -> None:
    delta = float(data.tree.deltas[k])
    margin = 1.0 - data.driver.alpha * delta - data.driver.beta * dA
    if margin <= 0:
        raise NonMonotoneStepError(
            f"1 - alpha*Delta - beta*dA = {margin:g} <= 0 at layer {k}, node {node}; use a smaller step",
            witness={'layer': k, 'node': node, 'delta': delta, 'dA': dA},
        )


def _step_equation(data: ProblemData, k: int, node: int, mean: float, z: np.ndarray, v: np.ndarray,
                   penalty: float = 0.0, level: Optional[float] = None) -> Callable[[float], float]:
    """h(y); with a penalty n the term n*(level - y)^+ * Delta is added to f"""
    delta = float(data.tree.deltas[k])
    dA = float(data.tree.dA[k][node])

    def h(y: float) -> float:
        value = y - float(data.f(k, node, y, z, v)) * delta - float(data.g(k, node, y)) * dA - mean
        if penalty:
            value -= penalty * max(level - y, 0.0) * delta
        return value

    return h


def implicit_solve(data: ProblemData, k: int, node: int, mean: float, z: np.ndarray, v: np.ndarray,
                   penalty: float = 0.0, level: Optional[float] = None) -> Tuple[float, Callable[[float], float]]:
    _check_step(data, k, node, float(data.tree.dA[k][node]))
    h = _step_equation(data, k, node, mean, z, v, penalty, level)
    return solve_monotone_root(h, mean), h


def project_layer(tree: ScenarioTree, k: int, next_values: np.ndarray):
    """Conditional mean and decomposition of the centered children, for all layer-k nodes"""
    mean = tree.conditional_expectation(next_values, k)
    centered = tree.children_block(next_values, k) - mean[:, None]
    return mean, martingale_decompose(tree, k, centered)


def backward_step(tree: ScenarioTree, data: ProblemData, k: int, node: int,
                  next_values: Union[np.ndarray, NodeValues]) -> StepResult:
    """One implicit step at a single node"""
    if isinstance(next_values, NodeValues):
        next_values = next_values[k + 1]
    children = np.asarray(next_values, dtype=float)[list(tree.children(k, node))]
    table = tree.branch_table(k)
    mean = float(children @ table.prob)
    dec = martingale_decompose(tree, k, children - mean)
    y, h = implicit_solve(data, k, node, mean, dec.z, dec.v)
    return StepResult(y=y, z=dec.z, v=dec.v, m=dec.residual, residual=abs(h(y)))


def backward_sweep(tree: ScenarioTree, data: ProblemData, penalty: float = 0.0,
                   frozen: Optional[Tuple[Sequence[np.ndarray], Sequence[np.ndarray]]] = None) -> GBSDESolution:
    """
    Full backward sweep. ``penalty`` adds n(y - L)^- to f (lower barrier
    required); ``frozen`` evaluates f at given (Z, V) instead of the
    projected ones.
    """
    K = tree.steps
    levels = data.barrier('lower').values if penalty else None
    Y: List[Optional[np.ndarray]] = [None] * (K + 1)
    Y[K] = data.terminal.copy()
    Z: List[np.ndarray] = [None] * K
    V: List[np.ndarray] = [None] * K
    M: List[np.ndarray] = [None] * K
    residual: List[np.ndarray] = [None] * K

    for k in range(K - 1, -1, -1):
        mean, dec = project_layer(tree, k, Y[k + 1])
        n = tree.layer_sizes[k]
        zf, vf = (dec.z, dec.v) if frozen is None else (frozen[0][k], frozen[1][k])
        y = np.empty(n)
        res = np.empty(n)
        for node in range(n):
            level = float(levels[k][node]) if penalty else None
            y[node], h = implicit_solve(data, k, node, float(mean[node]), zf[node], vf[node], penalty, level)
            res[node] = abs(h(y[node]))
        Y[k], Z[k], V[k], M[k], residual[k] = y, dec.z, dec.v, dec.residual, res
        logger.debug(f"layer {k}: {n} nodes, max residual {float(np.max(res)):.3e}")

    return GBSDESolution(tree=tree, Y=NodeValues(Y), Z=Z, V=V, M=M, residual=residual)


def solve_gbsde(tree: ScenarioTree, data: ProblemData) -> GBSDESolution:
    """Solve the unreflected equation; barriers on ``data`` are ignored"""
    sol = backward_sweep(tree, data)
    worst = sol.max_residual()
    if worst > SOLVER_CONFIG['residual_tol']:
        logger.warning(f"⚠️ GBSDE residual {worst:.3e} above {SOLVER_CONFIG['residual_tol']:.0e}")
    logger.info(f"✅ GBSDE solved on {tree.node_count} nodes, Y_0 = {sol.y0:.12g}")
    return sol


def _initial_iterate(tree: ScenarioTree, initial) -> GBSDESolution:
    if isinstance(initial, GBSDESolution):
        return initial
    K, d, m = tree.steps, tree.brownian_dim, tree.marks.size
    if initial is None:
        Z0 = [np.zeros((tree.layer_sizes[k], d)) for k in range(K)]
        V0 = [np.zeros((tree.layer_sizes[k], m)) for k in range(K)]
    else:
        Z0 = [np.asarray(z, dtype=float).reshape(tree.layer_sizes[k], d) for k, z in enumerate(initial[0])]
        V0 = [np.asarray(v, dtype=float).reshape(tree.layer_sizes[k], m) for k, v in enumerate(initial[1])]
    return GBSDESolution(
        tree=tree,
        Y=NodeValues.zeros(tree),
        Z=Z0,
        V=V0,
        M=[np.zeros((tree.layer_sizes[k], tree.branching)) for k in range(K)],
        residual=[np.zeros(tree.layer_sizes[k]) for k in range(K)],
    )


def picard_solve(tree: ScenarioTree, data: ProblemData, initial=None, max_iters: Optional[int] = None,
                 tol: Optional[float] = None, mu: Optional[float] = None,
                 gamma: Optional[float] = None) -> Tuple[GBSDESolution, PicardHistory]:
    """
    Iterate the map that solves the equation with f frozen at the previous
    (Z, V). ``initial`` is a GBSDESolution, a (Z0, V0) pair, or None for zeros.
    Non-convergence is reported on the history, not raised.
    """
    max_iters = RUN_DEFAULTS['max_picard_iters'] if max_iters is None else max_iters
    tol = RUN_DEFAULTS['tol'] if tol is None else tol
    mu = NORM_CONFIG['mu'] if mu is None else mu
    if gamma is None:
        gamma = NORM_CONFIG.get('gamma') or default_gamma(data.driver.alpha, data.driver.kappa)

    history = PicardHistory(tree=tree, data=data, mu=mu, gamma=gamma)
    history.iterates.append(_initial_iterate(tree, initial))

    for i in range(1, max(max_iters, 2) + 1):
        previous = history.iterates[-1]
        current = backward_sweep(tree, data, frozen=(previous.Z, previous.V))
        diff = part2_distance(tree, current, previous, mu, gamma)
        history.iterates.append(current)
        history.differences.append(diff)
        logger.debug(f"Picard iterate {i}: distance {diff:.3e}")
        if history.converged_at is None and diff <= tol:
            history.converged_at = i - 1
        if history.converged and len(history.iterates) >= 3:
            break

    if history.converged:
        logger.info(f"✅ Picard converged at iterate {history.converged_at} "
                    f"({len(history.iterates)} iterates kept)")
    else:
        logger.warning(f"⚠️ Picard did not reach tol {tol:g} in {max_iters} iterations, "
                       f"last distance {history.differences[-1]:.3e}")
    return history.solution, history
