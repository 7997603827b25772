"""
Weighted norms, a priori estimate monitors, contraction measurement and
the comparison harness.

Solutions are read by attribute (Y, Z, V, M and optionally K), so every
solver output in the package can be passed in.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InsufficientHistoryError, InvalidSpaceError, PreconditionViolatedError
from .scenario import NodeValues, ScenarioTree

try:
    from config import CHECK_CONFIG, NORM_CONFIG
except ImportError:
    CHECK_CONFIG = {'samples': 200, 'box': 10.0, 'tol': 1e-10}
    NORM_CONFIG = {'mu': 2.0, 'gamma': None}

logger = logging.getLogger(__name__)

SPACES = ('S2muA', 'M2mu_dt', 'M2mu_dA', 'M2mart', 'K')
HALF_SLACK = 0.05


def default_gamma(alpha: float, kappa: float) -> float:
    return 1.0 + 2.0 * abs(alpha) + 4.0 * kappa ** 2


@dataclass
class WeightedNormConfig:
    mu: float = 2.0
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.mu <= 0:
            raise PreconditionViolatedError(f"mu must be positive, got {self.mu}")
        if self.gamma is not None and self.gamma <= 0:
            raise PreconditionViolatedError(f"gamma must be positive, got {self.gamma}")

    @classmethod
    def for_driver(cls, driver, mu: Optional[float] = None) -> "WeightedNormConfig":
        mu = NORM_CONFIG['mu'] if mu is None else mu
        gamma = NORM_CONFIG.get('gamma') or default_gamma(driver.alpha, driver.kappa)
        return cls(mu=mu, gamma=gamma)

    def phi(self, tree: ScenarioTree, k: int) -> np.ndarray:
        """Phi = e^{gamma t_k + mu A_k} on layer k"""
        return np.exp((self.gamma or 0.0) * tree.times[k] + self.mu * tree.A[k])


def _layer(component, k: int) -> np.ndarray:
    if isinstance(component, NodeValues):
        return component[k]
    return np.asarray(component[k], dtype=float)


def _squared(values: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-node squared Euclidean (or q-weighted) norm"""
    if values.ndim == 1:
        return values ** 2 if weights is None else values ** 2 * weights
    if weights is None:
        return np.sum(values ** 2, axis=1)
    return (values ** 2) @ weights


def s2mua_parts(tree: ScenarioTree, Y, mu: float) -> Tuple[float, float]:
    """(E[sup_k e^{mu A_k}|Y_k|^2], E[sum_k e^{mu A_k}|Y_k|^2 dA_k])"""
    sup_path = np.zeros(tree.layer_sizes[-1])
    integral = 0.0
    for k in range(tree.steps + 1):
        weighted = np.exp(mu * tree.A[k]) * _layer(Y, k) ** 2
        sup_path = np.maximum(sup_path, weighted[tree.leaf_ancestors(k)])
        if k < tree.steps:
            integral += tree.expectation(weighted * tree.dA[k], k)
    return tree.expectation(sup_path, tree.steps), integral


def weighted_norm(tree: ScenarioTree, component, space: str, cfg: Optional[WeightedNormConfig] = None,
                  marks: bool = False) -> float:
    """
    Squared weighted norm of ``component`` in one of the discrete spaces.

    S2muA and K take a process on every layer; M2mu_dt / M2mu_dA take one
    array per non-terminal layer ((n_k,) or (n_k, d)); M2mart takes the
    per-edge increments ((n_k, b) per layer). ``marks`` weights columns by q.
    """
    cfg = cfg or WeightedNormConfig(mu=NORM_CONFIG['mu'])
    mu = cfg.mu
    if space == 'S2muA':
        sup_part, dA_part = s2mua_parts(tree, component, mu)
        return sup_part + dA_part
    if space in ('M2mu_dt', 'M2mu_dA'):
        weights = tree.mark_weights if marks else None
        total = 0.0
        for k in range(tree.steps):
            step = tree.deltas[k] if space == 'M2mu_dt' else tree.dA[k]
            total += tree.expectation(np.exp(mu * tree.A[k]) * _squared(_layer(component, k), weights) * step, k)
        return total
    if space == 'M2mart':
        total = 0.0
        for k in range(tree.steps):
            prob = tree.branch_table(k).prob
            edge = (_layer(component, k) ** 2) @ prob
            total += tree.expectation(np.exp(mu * (tree.A[k] + tree.dA[k])) * edge, k)
        return total
    if space == 'K':
        return tree.expectation(_layer(component, tree.steps) ** 2, tree.steps)
    raise InvalidSpaceError(f"unknown space '{space}', expected one of {SPACES}")


def part2_distance(tree: ScenarioTree, a, b, mu: float, gamma: float) -> float:
    """Distance of two (Y, Z, V, M) iterates in the e^{gamma t + mu A} weighted norm"""
    q = tree.mark_weights
    total = 0.0
    for k in range(tree.steps):
        phi = np.exp(gamma * tree.times[k] + mu * tree.A[k])
        phi_next = np.exp(gamma * tree.times[k + 1] + mu * (tree.A[k] + tree.dA[k]))
        dY = a.Y[k] - b.Y[k]
        dZ = _squared(np.asarray(a.Z[k]) - np.asarray(b.Z[k]))
        dV = _squared(np.asarray(a.V[k]) - np.asarray(b.V[k]), q)
        dM = ((a.M[k] - b.M[k]) ** 2) @ tree.branch_table(k).prob
        integrand = phi * ((dY ** 2 + dZ + dV) * tree.deltas[k] + dY ** 2 * tree.dA[k]) + phi_next * dM
        total += tree.expectation(integrand, k)
    return float(np.sqrt(total))


# ----------------------------------------------------------------------
# a priori estimates
# ----------------------------------------------------------------------
@dataclass
class EstimateReport:
    lhs: Dict[str, float] = field(default_factory=dict)
    rhs: Dict[str, float] = field(default_factory=dict)
    ratio: float = 0.0
    bounds: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @property
    def bounds_hold(self) -> bool:
        return all(bound['holds'] for bound in self.bounds.values())

    def to_row(self) -> Dict[str, Any]:
        row = {f'lhs_{name}': value for name, value in self.lhs.items()}
        row.update({f'rhs_{name}': value for name, value in self.rhs.items()})
        row['ratio'] = self.ratio
        for name, bound in self.bounds.items():
            row[f'{name}_lhs'] = bound['lhs']
            row[f'{name}_rhs'] = bound['rhs']
        return row


def _bound(lhs: np.ndarray, rhs: np.ndarray) -> Dict[str, Any]:
    excess = lhs - rhs * (1.0 + 1e-12) - 1e-14
    worst = int(np.argmax(excess))
    return {'lhs': float(lhs[worst]), 'rhs': float(rhs[worst]), 'holds': bool(excess[worst] <= 0)}


def growth_bounds(tree: ScenarioTree, data, Y, cfg: WeightedNormConfig) -> Dict[str, Dict[str, Any]]:
    """
    Cauchy-Schwarz bounds on the dA and dt integrals of g(Y) and f(Y, 0, 0),
    evaluated for every horizon t_j, plus the bound on E[e^{mu A_T}].
    Right-endpoint exponential weights keep the discrete versions exact.
    """
    mu, kappa = cfg.mu, data.driver.kappa
    gamma = cfg.gamma or default_gamma(data.driver.alpha, kappa)
    d, m = tree.brownian_dim, tree.marks.size
    K, leaves = tree.steps, tree.layer_sizes[-1]

    g_sum = np.zeros(leaves)
    f_sum = np.zeros(leaves)
    g_rhs = np.zeros(leaves)
    f_rhs = np.zeros(leaves)
    a_rhs = np.zeros(leaves)
    g_lhs_t, g_rhs_t, f_lhs_t, f_rhs_t = [], [], [], []

    for k in range(K):
        anc = tree.leaf_ancestors(k)
        y = _layer(Y, k)
        n = tree.layer_sizes[k]
        f0 = data.f_layer(k, y, np.zeros((n, d)), np.zeros((n, m)))
        g0 = data.g_layer(k, y)
        phi, psi = data.driver.phi[k], data.driver.psi[k]
        a_next = np.exp(mu * (tree.A[k] + tree.dA[k]))
        t_next = np.exp(gamma * tree.times[k + 1])

        g_sum += (g0 * tree.dA[k])[anc]
        f_sum += (f0 * tree.deltas[k])[anc]
        g_rhs += (a_next * (psi ** 2 + kappa ** 2 * y ** 2) * tree.dA[k])[anc]
        f_rhs += (t_next * (phi ** 2 + kappa ** 2 * y ** 2) * tree.deltas[k])[anc]
        a_rhs += (a_next * psi ** 2 * tree.dA[k])[anc]

        g_lhs_t.append(tree.expectation(g_sum ** 2, K))
        g_rhs_t.append(2.0 / mu * tree.expectation(g_rhs, K))
        f_lhs_t.append(tree.expectation(f_sum ** 2, K))
        f_rhs_t.append(2.0 / gamma * tree.expectation(f_rhs, K))

    exp_a = tree.expectation(np.exp(mu * tree.A[K]), K)
    return {
        'g_integral': _bound(np.array(g_lhs_t), np.array(g_rhs_t)),
        'f_integral': _bound(np.array(f_lhs_t), np.array(f_rhs_t)),
        'exp_a': _bound(np.array([exp_a]), np.array([1.0 + mu * tree.expectation(a_rhs, K)])),
    }


def apriori_check(sol, data, cfg: Optional[WeightedNormConfig] = None) -> EstimateReport:
    """Left and right sides of the uniform estimate, their ratio and the exact integral bounds"""
    from .model import barrier_weight_sup

    tree = sol.tree
    cfg = cfg or WeightedNormConfig.for_driver(data.driver, mu=data.mu)
    mu = cfg.mu
    report = EstimateReport()

    sup_part, dA_part = s2mua_parts(tree, sol.Y, mu)
    K = getattr(sol, 'K', None)
    report.lhs = {
        'sup_Y': sup_part,
        'Y_dA': dA_part,
        'ZV_dt': weighted_norm(tree, sol.Z, 'M2mu_dt', cfg) + weighted_norm(tree, sol.V, 'M2mu_dt', cfg, marks=True),
        'M': weighted_norm(tree, sol.M, 'M2mart', cfg),
        'K': 0.0 if K is None else weighted_norm(tree, K, 'K', cfg),
    }

    T = tree.steps
    barrier = data.lower if data.lower is not None else data.upper
    report.rhs = {
        'xi': tree.expectation(np.exp(mu * tree.A[T]) * data.terminal ** 2, T),
        'phi': weighted_norm(tree, data.driver.phi, 'M2mu_dt', cfg),
        'psi': weighted_norm(tree, data.driver.psi, 'M2mu_dA', cfg),
        'barrier': 0.0 if barrier is None else barrier_weight_sup(tree, barrier, mu),
    }
    lhs, rhs = sum(report.lhs.values()), sum(report.rhs.values())
    report.ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else float('inf'))

    report.bounds = growth_bounds(tree, data, sol.Y, cfg)
    if not report.bounds_hold:
        failed = [name for name, bound in report.bounds.items() if not bound['holds']]
        logger.warning(f"⚠️ Integral bounds violated: {failed}")
    return report


# ----------------------------------------------------------------------
# contraction
# ----------------------------------------------------------------------
@dataclass
class ContractionReport:
    rate: float
    ratios: List[float]
    distances: List[float]
    gamma: float
    mu: float

    @property
    def contracting(self) -> bool:
        return self.rate < 1.0

    @property
    def within_half(self) -> bool:
        return self.rate <= 0.5 + HALF_SLACK


def contraction_rate(history, cfg: Optional[WeightedNormConfig] = None) -> ContractionReport:
    """Max over consecutive iterates of |delta^{i+1}|^2 / |delta^i|^2"""
    iterates = history.iterates
    if len(iterates) < 3:
        raise InsufficientHistoryError(f"need at least 3 iterates, got {len(iterates)}")
    if cfg is None:
        mu, gamma = history.mu, history.gamma
        distances = list(history.differences)
    else:
        mu = cfg.mu
        gamma = cfg.gamma or default_gamma(history.data.driver.alpha, history.data.driver.kappa)
        distances = [part2_distance(history.tree, iterates[i + 1], iterates[i], mu, gamma)
                     for i in range(len(iterates) - 1)]

    ratios = []
    for before, after in zip(distances, distances[1:]):
        ratios.append(0.0 if before == 0 else (after / before) ** 2)
    rate = max(ratios)
    logger.info(f"Measured contraction rate {rate:.6g} over {len(ratios)} pairs (gamma={gamma:g}, mu={mu:g})")
    return ContractionReport(rate=rate, ratios=ratios, distances=distances, gamma=gamma, mu=mu)


# ----------------------------------------------------------------------
# comparison
# ----------------------------------------------------------------------
@dataclass
class GammaReport:
    passed: bool
    worst: float
    gamma: np.ndarray
    witness: Optional[Dict[str, Any]] = None


def check_gamma_condition(driver, nu: Sequence[float], weights: Sequence[float], samples: Optional[int] = None,
                          seed: int = 0, box: Optional[float] = None, tol: Optional[float] = None) -> GammaReport:
    """
    Check f(v) - f(v') <= sum_j gamma_j q_j (v_j - v'_j) for some gamma_j in
    [max(-1, -nu_j), nu_j], using the best such gamma for each sample.
    """
    samples = CHECK_CONFIG['samples'] if samples is None else samples
    box = CHECK_CONFIG['box'] if box is None else box
    tol = CHECK_CONFIG['tol'] if tol is None else tol
    nu = np.asarray(nu, dtype=float)
    q = np.asarray(weights, dtype=float)
    m = q.size
    if nu.size != m:
        raise PreconditionViolatedError(f"nu has {nu.size} entries, mark space has {m}")
    lo = np.maximum(-1.0, -nu)
    d = driver.b.size
    rng = np.random.default_rng(seed)

    def f(y, z, v):
        return float(driver.f(0.0, 0, 0, y, z, v, q))

    tuples = []
    for j in range(m):
        for sign in (1.0, -1.0):
            v = np.zeros(m)
            v[j] = sign
            tuples.append((0.0, np.zeros(d), v, np.zeros(m)))
    for _ in range(samples if m else 0):
        y = float(rng.uniform(-box, box))
        z = rng.uniform(-box, box, size=d)
        v, v2 = rng.uniform(-box, box, size=(2, m))
        tuples.append((y, z, v, v2))

    worst, witness = 0.0, None
    for y, z, v, v2 in tuples:
        delta = v - v2
        best = float(np.sum(q * np.where(delta > 0, delta * nu, delta * lo)))
        excess = f(y, z, v) - f(y, z, v2) - best
        if excess > worst + tol:
            worst = excess
            witness = {'y': y, 'z': z.tolist(), 'v': v.tolist(), "v'": v2.tolist(), 'excess': excess}

    gamma = np.clip(driver.c, lo, nu) if driver.c.size == m else np.zeros(m)
    passed = worst <= tol
    if not passed:
        logger.warning(f"⚠️ Jump-coefficient condition fails by {worst:.3e}")
    return GammaReport(passed=passed, worst=worst, gamma=gamma, witness=None if passed else witness)


@dataclass
class ComparisonReport:
    y_violations: int = 0
    max_y_excess: float = -np.inf  # max of Y - Y', signed
    k_checked: bool = False
    k_violations: int = 0
    max_k_excess: float = 0.0

    @property
    def passed(self) -> bool:
        return self.y_violations == 0 and self.k_violations == 0


def _solve_for_comparison(tree, data):
    from .gbsde import solve_gbsde
    from .reflected import solve_reflected_direct

    if data.lower is not None:
        return solve_reflected_direct(tree, data, 'lower')
    if data.upper is not None:
        return solve_reflected_direct(tree, data, 'upper')
    return solve_gbsde(tree, data.without_barriers())


def compare_solutions(tree: ScenarioTree, data, data2, sols=None, gamma_report: Optional[GammaReport] = None,
                      tol: Optional[float] = None) -> ComparisonReport:
    """Check Y <= Y' (and dK >= dK' for (z, v)-free drivers) for ordered data"""
    tol = CHECK_CONFIG['tol'] if tol is None else tol
    for side in ('lower', 'upper'):
        if (getattr(data, side) is None) != (getattr(data2, side) is None):
            raise PreconditionViolatedError(f"both problems must carry a {side} barrier, or neither")
    if data.lower is not None and data.upper is not None:
        raise PreconditionViolatedError("comparison takes one barrier side, got both")
    if data.driver.depends_on_v and not (gamma_report is not None and gamma_report.passed):
        raise PreconditionViolatedError("f depends on v: a passing jump-coefficient check is required")

    excess = data.terminal - data2.terminal
    if np.max(excess) > tol:
        node = int(np.argmax(excess))
        raise PreconditionViolatedError("terminal values are not ordered",
                                        witness={'layer': tree.steps, 'node': node, 'excess': float(excess[node])})
    side = 'lower' if data.lower is not None else 'upper' if data.upper is not None else None
    if side is not None:
        barrier, barrier2 = data.barrier(side), data2.barrier(side)
        for k in range(tree.steps + 1):
            excess = barrier.values[k] - barrier2.values[k]
            if np.max(excess) > tol:
                node = int(np.argmax(excess))
                raise PreconditionViolatedError("barriers are not ordered",
                                                witness={'layer': k, 'node': node, 'excess': float(excess[node])})

    sol, sol2 = sols if sols is not None else (_solve_for_comparison(tree, data), _solve_for_comparison(tree, data2))

    for k in range(tree.steps):
        y2, z2, v2 = sol2.Y[k], sol2.Z[k], sol2.V[k]
        for name, lhs, rhs in (
            ('f', data.f_layer(k, y2, z2, v2), data2.f_layer(k, y2, z2, v2)),
            ('g', data.g_layer(k, y2), data2.g_layer(k, y2)),
        ):
            excess = lhs - rhs
            if np.max(excess) > tol:
                node = int(np.argmax(excess))
                raise PreconditionViolatedError(
                    f"{name} <= {name}' fails along the second solution",
                    witness={'layer': k, 'node': node, 'excess': float(excess[node])},
                )

    report = ComparisonReport()
    for k in range(tree.steps + 1):
        excess = sol.Y[k] - sol2.Y[k]
        report.y_violations += int(np.sum(excess > tol))
        report.max_y_excess = max(report.max_y_excess, float(np.max(excess)))

    zv_free = not (data.driver.depends_on_z or data.driver.depends_on_v
                   or data2.driver.depends_on_z or data2.driver.depends_on_v)
    same_barrier = data.lower is not None and all(
        np.array_equal(data.lower.values[k], data2.lower.values[k]) for k in range(tree.steps + 1)
    )
    if zv_free and same_barrier and getattr(sol, 'dK', None) is not None:
        report.k_checked = True
        for k in range(tree.steps):
            excess = sol2.dK[k] - sol.dK[k]
            report.k_violations += int(np.sum(excess > tol))
            report.max_k_excess = max(report.max_k_excess, float(np.max(excess)))

    if report.passed:
        logger.debug(f"Comparison holds, max Y excess {report.max_y_excess:.3e}")
    else:
        logger.warning(f"⚠️ Comparison violated: {report.y_violations} Y, {report.k_violations} K")
    return report


def random_comparison_pairs(tree: ScenarioTree, count: int, seed: int = 0,
                            with_barrier: bool = True) -> List[Tuple[Any, Any]]:
    """
    Seeded ordered data pairs: the second problem adds nonnegative offsets to
    f, xi and g. Odd pairs use (z, v)-free drivers so K ordering is checked.
    Coefficients stay in ranges where the one-step weights remain positive
    for Delta <= 1 and q*Delta <= 0.5.
    """
    from .model import Barrier, DriverSpec, ProblemData

    rng = np.random.default_rng(seed)
    d, m = tree.brownian_dim, tree.marks.size
    leaves = tree.layer_sizes[-1]
    pairs = []
    for i in range(count):
        zv_free = i % 2 == 1
        a = float(rng.uniform(-1.0, 0.0))
        h0 = float(rng.uniform(-0.5, 0.5))
        g_slope = float(rng.uniform(-1.0, -0.1))
        g_h0 = float(rng.uniform(-0.5, 0.5))
        driver = DriverSpec(
            a=a,
            b=np.zeros(d) if zv_free else rng.uniform(-0.3, 0.3, size=d) / max(d, 1),
            c=np.zeros(m) if zv_free else rng.uniform(0.0, 0.3, size=m) / max(m, 1),
            h0=h0,
            g_slope=g_slope,
            g_h0=g_h0,
            alpha=a,
            beta=g_slope,
            kappa=1.0,
            phi=NodeValues.constant(tree, 2.0),
            psi=NodeValues.constant(tree, 2.0),
        )
        terminal = rng.uniform(-1.0, 1.0, size=leaves)
        lower = None
        if with_barrier:
            layers = [rng.uniform(-1.0, 0.5, size=n) for n in tree.layer_sizes]
            layers[-1] = np.minimum(layers[-1], terminal)
            lower = Barrier.from_values('lower', NodeValues(layers))
        data = ProblemData(tree=tree, terminal=terminal, driver=driver, lower=lower)
        data2 = data.perturbed(
            f_shift=float(rng.uniform(0.0, 0.5)),
            xi_shift=float(rng.uniform(0.0, 0.5)),
            g_shift=float(rng.uniform(0.0, 0.5)),
        )
        pairs.append((data, data2))
    return pairs
