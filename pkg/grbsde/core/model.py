"""
Problem data for reflected generalized BSDEs on a scenario tree.

Holds the terminal value, the drivers f and g, the barriers and the
declared constants (alpha, beta, kappa, phi, psi, mu), and spot-checks the
standing assumptions on the data.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .errors import MarkDimensionError, PreconditionViolatedError
from .scenario import NodeValues, ScenarioTree

try:
    from config import CHECK_CONFIG
except ImportError:
    CHECK_CONFIG = {'samples': 200, 'box': 10.0, 'tol': 1e-10}

logger = logging.getLogger(__name__)

F_FORMS = ('linear', 'cubic')
G_FORMS = ('linear',)
SIDES = ('lower', 'upper')


@dataclass
class DriverSpec:
    """
    f(t, y, z, v) = a*y + b.z + sum_j c_j q_j v_j + h0 + h1*t + shift(node)
    (cubic form subtracts y**3) and g(t, y) = g_slope*y + g_h0 + g_h1*t + g_shift(node).
    """

    f_form: str = 'linear'
    a: float = 0.0
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    h0: float = 0.0
    h1: float = 0.0
    f_shift: Optional[NodeValues] = None
    g_slope: float = -1.0
    g_h0: float = 0.0
    g_h1: float = 0.0
    g_shift: Optional[NodeValues] = None
    alpha: float = 0.0
    beta: float = -1.0
    kappa: float = 1.0
    phi: Optional[NodeValues] = None
    psi: Optional[NodeValues] = None

    def __post_init__(self):
        if self.f_form not in F_FORMS:
            raise ValueError(f"unknown f form '{self.f_form}', expected one of {F_FORMS}")
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.c = np.asarray(self.c, dtype=float).reshape(-1)

    @property
    def depends_on_z(self) -> bool:
        return bool(np.any(self.b != 0))

    @property
    def depends_on_v(self) -> bool:
        return bool(np.any(self.c != 0))

    def f(self, t: float, k: int, node, y, z, v, weights: np.ndarray):
        z = np.asarray(z, dtype=float)
        v = np.asarray(v, dtype=float)
        value = self.a * y + self.h0 + self.h1 * t
        if self.b.size:
            value = value + z @ self.b
        if self.c.size:
            value = value + v @ (self.c * weights)
        if self.f_shift is not None:
            value = value + self.f_shift[k][node]
        if self.f_form == 'cubic':
            value = value - np.power(y, 3)
        return value

    def g(self, t: float, k: int, node, y):
        value = self.g_slope * y + self.g_h0 + self.g_h1 * t
        if self.g_shift is not None:
            value = value + self.g_shift[k][node]
        return value

    def shifted(self, f_shift: float = 0.0, g_shift: float = 0.0) -> "DriverSpec":
        """Same driver with constant offsets added to f and g"""
        return replace(self, h0=self.h0 + f_shift, g_h0=self.g_h0 + g_shift,
                       b=self.b.copy(), c=self.c.copy())

    def mirrored(self) -> "DriverSpec":
        """f~(t,y,z,v) = -f(t,-y,-z,-v), g~(t,y) = -g(t,-y)"""
        return replace(
            self,
            b=self.b.copy(),
            c=self.c.copy(),
            h0=-self.h0,
            h1=-self.h1,
            f_shift=None if self.f_shift is None else -self.f_shift,
            g_h0=-self.g_h0,
            g_h1=-self.g_h1,
            g_shift=None if self.g_shift is None else -self.g_shift,
        )


@dataclass
class Barrier:
    side: str
    values: NodeValues
    jump_flags: np.ndarray
    left_limits: NodeValues

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"barrier side must be one of {SIDES}, got '{self.side}'")
        self.jump_flags = np.asarray(self.jump_flags, dtype=bool)

    @classmethod
    def from_values(cls, side: str, values: NodeValues,
                    jumps: Optional[List[Dict[str, Any]]] = None) -> "Barrier":
        """
        Build a barrier from its values before scheduled jumps.

        Each jump ``{'step': k, 'size': s}`` relaxes the barrier by ``s`` from
        layer k on (down for a lower barrier, up for an upper one) and is
        flagged as predictable; the left limit at k is the pre-jump value.
        """
        layers = [values[k].copy() for k in range(len(values))]
        flags = np.zeros(len(layers), dtype=bool)
        sign = -1.0 if side == 'lower' else 1.0
        sizes = np.zeros(len(layers))
        for jump in sorted(jumps or [], key=lambda j: j['step']):
            step, size = int(jump['step']), float(jump['size'])
            if not 1 <= step < len(layers):
                raise PreconditionViolatedError(f"barrier jump step {step} outside 1..{len(layers) - 1}")
            for k in range(step, len(layers)):
                layers[k] = layers[k] + sign * size
            flags[step] = True
            sizes[step] += size
        left = [layers[k] - sign * sizes[k] for k in range(len(layers))]
        if flags.any():
            logger.debug(f"{side} barrier with {int(flags.sum())} predictable jumps")
        return cls(side=side, values=NodeValues(layers), jump_flags=flags, left_limits=NodeValues(left))

    def mirrored(self) -> "Barrier":
        other = 'upper' if self.side == 'lower' else 'lower'
        return Barrier(side=other, values=-self.values, jump_flags=self.jump_flags.copy(),
                       left_limits=-self.left_limits)


@dataclass
class ProblemData:
    tree: ScenarioTree
    terminal: np.ndarray
    driver: DriverSpec
    lower: Optional[Barrier] = None
    upper: Optional[Barrier] = None
    mu: float = 2.0

    def __post_init__(self):
        self.terminal = np.asarray(self.terminal, dtype=float)
        leaves = self.tree.layer_sizes[-1]
        if self.terminal.shape != (leaves,):
            raise PreconditionViolatedError(f"terminal value needs {leaves} entries, got {self.terminal.shape}")
        d, m = self.tree.brownian_dim, self.tree.marks.size
        if self.driver.b.size == 0:
            self.driver.b = np.zeros(d)
        if self.driver.c.size == 0:
            self.driver.c = np.zeros(m)
        if self.driver.b.size != d:
            raise MarkDimensionError(f"z coefficient has {self.driver.b.size} entries, tree has d={d}")
        if self.driver.c.size != m:
            raise MarkDimensionError(f"v coefficient has {self.driver.c.size} entries, tree has {m} marks")
        if self.driver.phi is None:
            self.driver.phi = NodeValues.constant(self.tree, 1.0)
        if self.driver.psi is None:
            self.driver.psi = NodeValues.constant(self.tree, 1.0)

    @property
    def weights(self) -> np.ndarray:
        return self.tree.mark_weights

    def barrier(self, side: str) -> Barrier:
        barrier = self.lower if side == 'lower' else self.upper
        if barrier is None:
            raise PreconditionViolatedError(f"problem has no {side} barrier")
        return barrier

    def f(self, k: int, node, y, z, v):
        return self.driver.f(self.tree.times[k], k, node, y, z, v, self.weights)

    def g(self, k: int, node, y):
        return self.driver.g(self.tree.times[k], k, node, y)

    def f_layer(self, k: int, y: np.ndarray, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        nodes = np.arange(self.tree.layer_sizes[k])
        return np.broadcast_to(self.f(k, nodes, y, z, v), nodes.shape).astype(float)

    def g_layer(self, k: int, y: np.ndarray) -> np.ndarray:
        nodes = np.arange(self.tree.layer_sizes[k])
        return np.broadcast_to(self.g(k, nodes, y), nodes.shape).astype(float)

    def without_barriers(self) -> "ProblemData":
        return replace(self, lower=None, upper=None)

    def mirrored(self) -> "ProblemData":
        """Dual data (-xi, f~, g~) with barriers swapped and negated"""
        return ProblemData(
            tree=self.tree,
            terminal=-self.terminal,
            driver=self.driver.mirrored(),
            lower=None if self.upper is None else self.upper.mirrored(),
            upper=None if self.lower is None else self.lower.mirrored(),
            mu=self.mu,
        )

    def perturbed(self, f_shift: float = 0.0, xi_shift: float = 0.0, g_shift: float = 0.0) -> "ProblemData":
        return replace(self, terminal=self.terminal + xi_shift,
                       driver=self.driver.shifted(f_shift=f_shift, g_shift=g_shift))


def evaluate_f(data: ProblemData, k: int, node: int, y: float, z, v) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float)) if data.tree.brownian_dim else np.zeros(0)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != data.tree.marks.size:
        raise MarkDimensionError(
            f"v has {v.size} entries, mark space has {data.tree.marks.size}",
            witness={'layer': k, 'node': node},
        )
    if z.size != data.tree.brownian_dim:
        raise MarkDimensionError(f"z has {z.size} entries, tree has d={data.tree.brownian_dim}")
    return float(data.f(k, node, float(y), z, v))


def evaluate_g(data: ProblemData, k: int, node: int, y: float) -> float:
    return float(data.g(k, node, float(y)))


@dataclass
class AssumptionCheck:
    name: str
    passed: bool = True
    worst: float = 0.0
    witness: Optional[Dict[str, Any]] = None
    applicable: bool = True


@dataclass
class AssumptionReport:
    checks: Dict[str, AssumptionCheck] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())

    def __getitem__(self, name: str) -> AssumptionCheck:
        return self.checks[name]

    def failures(self) -> List[str]:
        return [name for name, check in self.checks.items() if not check.passed]

    def to_rows(self) -> List[Dict[str, Any]]:
        return [
            {
                'assumption': name,
                'passed': check.passed,
                'applicable': check.applicable,
                'worst': check.worst,
                'witness': '' if check.witness is None else repr(check.witness),
            }
            for name, check in self.checks.items()
        ]


class _Tracker:
    """Keeps the largest violation seen; near-ties keep the first witness"""

    def __init__(self, name: str, tol: float, applicable: bool = True):
        self.check = AssumptionCheck(name=name, worst=-np.inf, applicable=applicable)
        self.tol = tol

    def offer(self, violation: float, witness: Callable[[], Dict[str, Any]]) -> None:
        if self.check.witness is None or violation > self.check.worst + self.tol:
            self.check.worst = float(violation)
            self.check.witness = witness()

    def done(self) -> AssumptionCheck:
        if not self.check.applicable or self.check.witness is None:
            self.check.worst = 0.0
            self.check.witness = None
            return self.check
        self.check.worst = max(0.0, self.check.worst)
        self.check.passed = self.check.worst <= self.tol
        if self.check.passed:
            self.check.witness = None
        return self.check


def check_assumptions(data: ProblemData, tree: Optional[ScenarioTree] = None, samples: Optional[int] = None,
                      seed: int = 0, box: Optional[float] = None, tol: Optional[float] = None) -> AssumptionReport:
    """
    Spot-check monotonicity, Lipschitz and growth conditions plus the barrier
    ordering. Violations are reported with a witness, never raised.
    """
    tree = tree or data.tree
    samples = CHECK_CONFIG['samples'] if samples is None else samples
    box = CHECK_CONFIG['box'] if box is None else box
    tol = CHECK_CONFIG['tol'] if tol is None else tol
    if samples < 1:
        raise PreconditionViolatedError(f"samples must be >= 1, got {samples}")

    drv = data.driver
    d, m = tree.brownian_dim, tree.marks.size
    q = tree.mark_weights
    rng = np.random.default_rng(seed)

    mono_f = _Tracker('H2_iii_monotone_f', tol)
    mono_g = _Tracker('H2_iv_monotone_g', tol)
    lipschitz = _Tracker('H2_v_lipschitz_zv', tol, applicable=d + m > 0)
    growth_f = _Tracker('H2_vi_growth_f', tol)
    growth_g = _Tracker('H2_vi_growth_g', tol)

    probes = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)]
    tuples = []
    zero_z, zero_v = np.zeros(d), np.zeros(m)
    for y, y2 in probes:
        tuples.append((0, 0, y, y2, zero_z, zero_z, zero_v, zero_v))
    for _ in range(samples):
        k = int(rng.integers(tree.steps))
        node = int(rng.integers(tree.layer_sizes[k]))
        y, y2 = rng.uniform(-box, box, size=2)
        z, z2 = rng.uniform(-box, box, size=(2, d))
        v, v2 = rng.uniform(-box, box, size=(2, m))
        tuples.append((k, node, float(y), float(y2), z, z2, v, v2))

    for k, node, y, y2, z, z2, v, v2 in tuples:
        t = float(tree.times[k])
        phi = drv.phi.value(k, node)
        psi = drv.psi.value(k, node)

        def witness(**extra):
            return lambda: {'layer': k, 'node': node, 't': t, 'y': y, "y'": y2, **extra}

        if y != y2:
            f1, f2 = float(data.f(k, node, y, z, v)), float(data.f(k, node, y2, z, v))
            ratio = (y - y2) * (f1 - f2) / (y - y2) ** 2
            mono_f.offer(ratio - drv.alpha, witness(z=z.tolist(), v=v.tolist(), ratio=ratio))
            g1, g2 = float(data.g(k, node, y)), float(data.g(k, node, y2))
            ratio_g = (y - y2) * (g1 - g2) / (y - y2) ** 2
            mono_g.offer(ratio_g - drv.beta, witness(ratio=ratio_g))

        distance = float(np.linalg.norm(z - z2)) + float(np.sqrt(np.sum(q * (v - v2) ** 2)))
        if distance > 0:
            gap = abs(float(data.f(k, node, y, z, v)) - float(data.f(k, node, y, z2, v2)))
            lipschitz.offer(gap / distance - drv.kappa,
                            witness(z=z.tolist(), v=v.tolist(), **{"z'": z2.tolist(), "v'": v2.tolist()}))

        f0 = abs(float(data.f(k, node, y, zero_z, zero_v)))
        growth_f.offer(f0 - phi - drv.kappa * abs(y), witness(value=f0, phi=phi))
        g0 = abs(float(data.g(k, node, y)))
        growth_g.offer(g0 - psi - drv.kappa * abs(y), witness(value=g0, psi=psi))

    report = AssumptionReport()
    for tracker in (mono_f, mono_g, lipschitz, growth_f, growth_g):
        report.checks[tracker.check.name] = tracker.done()

    floor = AssumptionCheck(name='H2_phi_psi_floor')
    lowest = min(drv.phi.min_value(), drv.psi.min_value())
    floor.worst = max(0.0, 1.0 - lowest)
    floor.passed = lowest >= 1.0
    if not floor.passed:
        floor.witness = {'min_value': lowest}
    report.checks[floor.name] = floor

    report.checks['H2_constants'] = AssumptionCheck(
        name='H2_constants',
        passed=drv.beta < 0 and drv.kappa > 0,
        worst=max(drv.beta, 0.0) + max(-drv.kappa, 0.0),
        witness=None if (drv.beta < 0 and drv.kappa > 0) else {'beta': drv.beta, 'kappa': drv.kappa},
    )

    for side, name in (('lower', 'H3_terminal_above_barrier'), ('upper', 'H3pp_terminal_below_barrier')):
        barrier = data.lower if side == 'lower' else data.upper
        check = AssumptionCheck(name=name, applicable=barrier is not None)
        if barrier is not None:
            gap = data.terminal - barrier.values[tree.steps]
            if side == 'upper':
                gap = -gap
            worst_node = int(np.argmin(gap))
            check.worst = max(0.0, float(-gap[worst_node]))
            check.passed = bool(gap[worst_node] >= 0)
            if not check.passed:
                check.witness = {'layer': tree.steps, 'node': worst_node,
                                 'xi': float(data.terminal[worst_node]),
                                 'barrier': float(barrier.values[tree.steps][worst_node])}
        report.checks[name] = check

        bound = AssumptionCheck(name=f'{name}_integrable', applicable=barrier is not None)
        if barrier is not None:
            bound.worst = barrier_weight_sup(tree, barrier, data.mu)
            bound.passed = bool(np.isfinite(bound.worst))
            bound.worst = 0.0 if bound.passed else float('inf')
        report.checks[bound.name] = bound

    if report.passed:
        logger.info(f"✅ Assumption checks passed ({len(tuples)} tuples)")
    else:
        logger.warning(f"⚠️ Assumption checks failed: {', '.join(report.failures())}")
    return report


def barrier_weight_sup(tree: ScenarioTree, barrier: Barrier, mu: float) -> float:
    """E[sup_k e^{2 mu A_k} (L_k^+)^2], or (U_k^-)^2 for an upper barrier"""
    worst = np.zeros(tree.layer_sizes[-1])
    for k in range(tree.steps + 1):
        values = barrier.values[k]
        part = np.maximum(values, 0.0) if barrier.side == 'lower' else np.maximum(-values, 0.0)
        weighted = np.exp(2.0 * mu * tree.A[k]) * part ** 2
        worst = np.maximum(worst, weighted[tree.leaf_ancestors(k)])
    return tree.expectation(worst, tree.steps)
