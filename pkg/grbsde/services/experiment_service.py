#!/usr/bin/env python3
"""
Experiment Service - one pipeline per subcommand
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..core.analysis import (
    apriori_check,
    check_gamma_condition,
    compare_solutions,
    contraction_rate,
    random_comparison_pairs,
)
from ..core.errors import GRBSDEError
from ..core.gbsde import picard_solve, solve_gbsde
from ..core.model import ProblemData, check_assumptions
from ..core.reflected import check_mirror, penalization_sweep, solve_auxiliary, solve_reflected_direct
from ..core.scenario import ScenarioTree, check_tree
from ..core.stopping import snell_envelope, verify_representation
from .config_service import ExperimentConfig

try:
    from config import SOLVER_CONFIG
except ImportError:
    SOLVER_CONFIG = {'martingale_tol': 1e-12, 'sweep_workers': 1}

logger = logging.getLogger(__name__)

SUBCOMMANDS = ('solve', 'penalize', 'reflect', 'stop', 'compare', 'check')


@dataclass
class ExperimentResult:
    subcommand: str
    checks: List[Tuple[str, bool, float]] = field(default_factory=list)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    error: Optional[GRBSDEError] = None

    @property
    def success(self) -> bool:
        return self.error is None and all(passed for _, passed, _ in self.checks)

    def record(self, name: str, passed: bool, value: float) -> None:
        self.checks.append((name, bool(passed), float(value)))
        if not passed:
            logger.warning(f"⚠️ {self.subcommand}: {name} failed ({value:.6g})")


def _layer_max(values, k_range) -> float:
    return max(float(np.max(values[k])) for k in k_range)


def node_frame(tree: ScenarioTree, sol, barrier=None) -> pd.DataFrame:
    """One row per node, layers in order"""
    rows = []
    K = tree.steps
    for k in range(K + 1):
        for node in range(tree.layer_sizes[k]):
            row = {'layer': k, 'node': node, 't': float(tree.times[k]), 'A': float(tree.A[k][node]),
                   'Y': float(sol.Y[k][node])}
            if k < K:
                for i, z in enumerate(np.atleast_1d(sol.Z[k][node])):
                    row[f'Z{i + 1}'] = float(z)
                for j, v in enumerate(np.atleast_1d(sol.V[k][node])):
                    row[f'V{j + 1}'] = float(v)
                row['residual'] = float(sol.residual[k][node])
            if barrier is not None:
                row['barrier'] = float(barrier.values[k][node])
            if getattr(sol, 'K', None) is not None:
                row['K'] = float(sol.K[k][node])
                row['dK'] = float(sol.dK[k][node]) if k < K else 0.0
            if getattr(sol, 'Kc', None) is not None:
                row['Kc'] = float(sol.Kc[k][node])
                row['Kd'] = float(sol.Kd[k][node])
            rows.append(row)
    return pd.DataFrame(rows)


class ExperimentService:
    """Service running the experiment pipelines on one built problem"""

    def __init__(self, config: ExperimentConfig, tree: ScenarioTree, data: ProblemData):
        self.config = config
        self.tree = tree
        self.data = data
        self.run_cfg = config.run
        self.tol = float(config.run['tol'])

    def run(self, subcommand: str) -> ExperimentResult:
        """Dispatch; module errors abort the pipeline and are kept on the result"""
        if subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand '{subcommand}', expected one of {SUBCOMMANDS}")
        result = ExperimentResult(subcommand=subcommand)
        logger.info(f"🚀 Running {subcommand} on {self.tree.describe()}")
        try:
            getattr(self, f'run_{subcommand}')(result)
        except GRBSDEError as e:
            logger.error(f"❌ {subcommand} aborted: {e}")
            result.error = e
        if result.success:
            logger.info(f"✅ {subcommand}: all {len(result.checks)} checks passed")
        return result

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------
    def _side(self) -> str:
        return 'lower' if self.data.lower is not None else 'upper'

    def _scaled(self, *arrays) -> float:
        scale = max([1.0] + [float(np.max(np.abs(a))) for a in arrays if np.size(a)])
        return self.tol * scale

    def _noise_factors(self) -> int:
        tree = self.tree
        active = int(np.sum(tree.mark_weights > 0))
        return tree.brownian_dim + active + int(tree.extra_factor)

    def _nu(self) -> np.ndarray:
        if 'nu' in self.run_cfg:
            return np.asarray(self.run_cfg['nu'], dtype=float)
        return np.maximum(np.abs(self.data.driver.c), 1.0)

    # ------------------------------------------------------------------
    # pipelines
    # ------------------------------------------------------------------
    def run_solve(self, result: ExperimentResult) -> None:
        tree = self.tree
        data = self.data.without_barriers()
        sol = solve_gbsde(tree, data)
        martingale_tol = SOLVER_CONFIG['martingale_tol'] * max(1.0, float(np.max(np.abs(data.terminal))))

        result.record('backward_residual', sol.max_residual() <= self._scaled(*sol.Y.layers), sol.max_residual())
        result.record('m_orthogonality', sol.m_orthogonality() <= martingale_tol, sol.m_orthogonality())
        if self._noise_factors() <= 1:
            result.record('m_vanishes', sol.max_abs_m() <= martingale_tol, sol.max_abs_m())
        moments = max(check_tree(tree).values())
        result.record('tree_moments', moments <= SOLVER_CONFIG['martingale_tol'], moments)

        _, history = picard_solve(tree, data, max_iters=self.run_cfg['max_picard_iters'], tol=self.tol,
                                  mu=data.mu)
        rate = contraction_rate(history)
        result.record('picard_contraction', rate.contracting, rate.rate)
        result.record('picard_converged', history.converged,
                      -1 if history.converged_at is None else history.converged_at)
        gap = max(float(np.max(np.abs(history.solution.Y[k] - sol.Y[k]))) for k in range(tree.steps + 1))
        result.record('picard_fixed_point', gap <= 1e3 * self._scaled(*sol.Y.layers), gap)

        estimate = apriori_check(sol, data)
        for name, bound in estimate.bounds.items():
            result.record(f'bound_{name}', bound['holds'], bound['lhs'] - bound['rhs'])

        result.tables['solve'] = node_frame(tree, sol)
        result.tables['picard'] = pd.DataFrame({
            'iteration': np.arange(1, len(rate.distances) + 1),
            'distance': rate.distances,
            'ratio': [np.nan] + rate.ratios,
        })
        result.tables['contraction'] = pd.DataFrame([{
            'rate': rate.rate,
            'gamma': rate.gamma,
            'mu': rate.mu,
            'contracting': rate.contracting,
            'within_half': rate.within_half,
        }])

    def run_penalize(self, result: ExperimentResult) -> None:
        tree, data = self.tree, self.data
        n_list = self.run_cfg['n_list']
        penalty_tol = float(self.run_cfg['penalty_tol'])
        report = penalization_sweep(tree, data, n_list, tol=penalty_tol)
        frame = report.to_frame()
        for flag in ('monotone_in_n', 'neg_part_decreasing', 'below_oracle', 'oracle_gap_decreasing',
                     'uniformly_bounded', 'converged'):
            value = {'converged': frame['sup_neg_part'].iloc[-1],
                     'monotone_in_n': frame['monotonicity_violation'].max(),
                     'below_oracle': frame['oracle_excess'].max()}.get(flag, float(report.flags[flag]))
            result.record(f'penalize_{flag}', report.flags[flag], value)
        last_gap = float(frame['oracle_gap'].iloc[-1])
        result.record('penalize_oracle_gap', last_gap <= penalty_tol, last_gap)

        rows = []
        for n, sol in report.solutions.items():
            diag = solve_auxiliary(tree, data, n, penalized=sol)
            rows.append({
                'n': n,
                'representation_residual': diag.representation_residual,
                'domination_gap': diag.domination_gap,
                'neg_part_excess': diag.neg_part_excess,
                'sup_neg_Y': diag.sup_neg_Y,
                'sup_neg_Ybar': diag.sup_neg_Ybar,
                'doob_lhs': diag.doob_lhs,
                'doob_rhs': diag.doob_rhs,
                'x0': float(diag.X[0][0]),
                'sup_abs_X': max(float(np.max(np.abs(diag.X[k]))) for k in range(tree.steps + 1)),
            })
            result.record(f'auxiliary_representation_n={n:g}',
                          diag.representation_residual <= self._scaled(*diag.Ybar.layers), diag.representation_residual)
            result.record(f'auxiliary_domination_n={n:g}', diag.domination_gap >= -self.tol, diag.domination_gap)
            result.record(f'auxiliary_neg_part_n={n:g}', diag.neg_part_excess <= self.tol, diag.neg_part_excess)
            result.record(f'auxiliary_doob_n={n:g}', diag.doob_holds, diag.doob_lhs - 4.0 * diag.doob_rhs)

        result.tables['penalize'] = frame
        result.tables['auxiliary'] = pd.DataFrame(rows)
        result.tables['penalize_flags'] = pd.DataFrame(
            [{'flag': name, 'value': bool(ok)} for name, ok in report.flags.items()])

    def run_reflect(self, result: ExperimentResult) -> None:
        tree, data = self.tree, self.data
        side = self._side()
        sign = 1.0 if side == 'lower' else -1.0
        sol = solve_reflected_direct(tree, data, side)
        barrier = sol.barrier
        K_range = range(tree.steps + 1)

        breach = _layer_max([sign * (barrier.values[k] - sol.Y[k]) for k in K_range], K_range)
        result.record('barrier_respected', breach <= self.tol, max(breach, 0.0))
        dk_min = min(float(np.min(dK)) for dK in sol.dK)
        result.record('dK_nonnegative', dk_min >= -self.tol, dk_min)
        result.record('skorokhod', sol.skorokhod_residual <= self.tol, sol.skorokhod_residual)
        split = _layer_max([np.abs(sol.K[k] - sol.Kc[k] - sol.Kd[k]) for k in K_range], K_range)
        result.record('k_reconstruction', split <= self.tol, split)
        result.record('backward_residual', sol.max_residual() <= self._scaled(*sol.Y.layers), sol.max_residual())

        free = solve_gbsde(tree, data.without_barriers())
        shortfall = _layer_max([sign * (free.Y[k] - sol.Y[k]) for k in K_range], K_range)
        result.record('dominates_unreflected', shortfall <= self.tol, max(shortfall, 0.0))

        mirror = check_mirror(tree, data if side == 'upper' else data.mirrored())
        result.record('mirror_y', mirror['y_gap'] <= self.tol, mirror['y_gap'])
        result.record('mirror_k', mirror['k_gap'] <= self.tol, mirror['k_gap'])

        estimate = apriori_check(sol, data)
        for name, bound in estimate.bounds.items():
            result.record(f'bound_{name}', bound['holds'], bound['lhs'] - bound['rhs'])
        result.record('apriori_ratio_finite', bool(np.isfinite(estimate.ratio)), estimate.ratio)

        result.tables['reflect'] = node_frame(tree, sol, barrier)

    def run_stop(self, result: ExperimentResult) -> None:
        tree, data = self.tree, self.data
        side = self._side()
        sol = solve_reflected_direct(tree, data, side)
        S = snell_envelope(tree, data, sol, side)
        gap = max(float(np.max(np.abs(S[k] - sol.Y[k]))) for k in range(tree.steps + 1))
        result.record('snell_envelope', gap <= self._scaled(*sol.Y.layers), gap)

        method = self.run_cfg['method']
        report = verify_representation(
            tree, data, sol,
            method=method,
            t=int(self.run_cfg['start_layer']),
            p_list=self.run_cfg['p_list'],
            cap=int(self.run_cfg['enumeration_cap']),
            tol=self._scaled(*sol.Y.layers),
        )
        result.record(f'stopping_{method}', report.passed, report.gap)
        if method == 'enumerate':
            result.record('stopping_dominance', report.dominance_violation <= self._scaled(*sol.Y.layers),
                          report.dominance_violation)
        result.tables['stop'] = pd.DataFrame(report.rows)

    def run_compare(self, result: ExperimentResult) -> None:
        tree, data = self.tree, self.data
        perturbation = self.config.compare['perturbation']
        data2 = data.perturbed(
            f_shift=float(perturbation.get('f_shift', 0.0)),
            xi_shift=float(perturbation.get('xi_shift', 0.0)),
            g_shift=float(perturbation.get('g_shift', 0.0)),
        )
        seed = int(self.run_cfg['seed'])
        gamma = check_gamma_condition(data.driver, self._nu(), tree.mark_weights,
                                      samples=self.run_cfg['samples'], seed=seed)
        result.record('gamma_condition', gamma.passed, gamma.worst)
        primary = compare_solutions(tree, data, data2, gamma_report=gamma, tol=self.tol)
        result.record('compare_config_y', primary.y_violations == 0, primary.max_y_excess)
        if primary.k_checked:
            result.record('compare_config_k', primary.k_violations == 0, primary.max_k_excess)

        rows = []
        pairs = random_comparison_pairs(tree, int(self.run_cfg['pairs']), seed=seed)
        for i, (first, second) in enumerate(pairs):
            pair_gamma = check_gamma_condition(first.driver, np.ones(tree.marks.size), tree.mark_weights,
                                               samples=20, seed=seed + i)
            report = compare_solutions(tree, first, second, gamma_report=pair_gamma, tol=self.tol)
            rows.append({
                'pair': i,
                'zv_free': not (first.driver.depends_on_z or first.driver.depends_on_v),
                'y_violations': report.y_violations,
                'max_y_excess': report.max_y_excess,
                'k_checked': report.k_checked,
                'k_violations': report.k_violations,
                'max_k_excess': report.max_k_excess,
            })
        frame = pd.DataFrame(rows)
        result.record('random_y_ordering', int(frame['y_violations'].sum()) == 0, frame['y_violations'].sum())
        result.record('random_k_ordering', int(frame['k_violations'].sum()) == 0, frame['k_violations'].sum())
        result.tables['compare'] = frame

    def run_check(self, result: ExperimentResult) -> None:
        tree, data = self.tree, self.data
        moments = check_tree(tree)
        for name, value in moments.items():
            result.record(f'tree_{name}', value <= SOLVER_CONFIG['martingale_tol'], value)

        report = check_assumptions(data, samples=self.run_cfg['samples'], seed=int(self.run_cfg['seed']))
        for name, check in report.checks.items():
            result.record(name, check.passed, check.worst)

        gamma = check_gamma_condition(data.driver, self._nu(), tree.mark_weights,
                                      samples=self.run_cfg['samples'], seed=int(self.run_cfg['seed']))
        result.record('gamma_condition', gamma.passed, gamma.worst)

        result.tables['tree_moments'] = pd.DataFrame([moments])
        result.tables['assumptions'] = pd.DataFrame(report.to_rows())
