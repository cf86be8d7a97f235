"""Oracle thresholds from a known generator, closed forms and classical baselines."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .core import InputError, PValueLattice
from .engine import AdjustmentResult, MinPDistribution, single_step, step_down, wy_threshold
from .marginal import MarginalTest, rank_sum_lattice
from .simulate import SimulationScenario, null_pvalues

ORACLE_SIMS = 1000


class OracleEstimate(NamedTuple):
    threshold: float
    effective_level: float
    n_sims: int
    mc_stderr: float
    alpha: float


class LevelEstimate(NamedTuple):
    level: float
    stderr: float
    n_sims: int


def _stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n else math.nan


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")


def simulate_null_pvalues(scenario: SimulationScenario, test: MarginalTest | None,
                          n_sims: int, seed: int = 0) -> np.ndarray:
    """Marginal p-values (n_sims x m) of complete-null draws from ``scenario``.

    Wilcoxon marginals take a vectorised path; other tests run the marginal
    test on each simulated dataset with its own inner plan.
    """
    if n_sims < 1:
        raise InputError("n_sims must be >= 1")
    if test is None or test.kind == "wilcoxon":
        return null_pvalues(scenario, n_sims, seed)
    from .engine import sweep

    null = scenario.complete_null()
    out = np.empty((n_sims, scenario.m))
    for i in range(n_sims):
        W, _ = null.generate(i, stream=seed + 1)
        out[i] = sweep(W, test, test.plan, keep=False).observed
    return out


def candidate_lattice(scenario: SimulationScenario, test: MarginalTest | None) -> PValueLattice | None:
    if test is None or test.kind == "wilcoxon":
        return rank_sum_lattice(scenario.n1, scenario.n2)
    return None


def oracle_from_minima(minima, alpha: float, lattice=None) -> OracleEstimate:
    """Largest candidate ``s`` with simulated ``P(min <= s) <= alpha``, or 0."""
    _check_alpha(alpha)
    dist = MinPDistribution(minima)
    c = wy_threshold(dist, lattice, alpha)
    level = float(dist.cdf(c)) if c > 0 else 0.0
    return OracleEstimate(c, level, dist.size, _stderr(level, dist.size), alpha)


def true_null_minima(null_p: np.ndarray, true_nulls) -> np.ndarray:
    idx = np.asarray(list(true_nulls), dtype=np.int64)
    if idx.size == 0:
        # no true null: the min over the empty set never falls below a threshold
        return np.full(null_p.shape[0], np.inf)
    return null_p[:, idx].min(axis=1)


def oracle_threshold_mc(scenario: SimulationScenario, test: MarginalTest | None = None,
                        alpha: float = 0.05, n_sims: int = ORACLE_SIMS, seed: int = 0,
                        alternatives=None) -> OracleEstimate:
    """Monte Carlo estimate of the single-step oracle threshold.

    The min over the true nulls is taken on complete-null draws: a true null's
    p-value depends only on its own row, which the shift leaves untouched.
    """
    if alternatives is None:
        alternatives = scenario.alternatives_for(0)
    true_nulls = scenario.partition(alternatives).true_nulls
    null_p = simulate_null_pvalues(scenario, test, n_sims, seed)
    minima = true_null_minima(null_p, true_nulls)
    if np.isinf(minima).all():
        return OracleEstimate(1.0, 0.0, n_sims, 0.0, alpha)
    return oracle_from_minima(minima, alpha, candidate_lattice(scenario, test))


def effective_level(scenario: SimulationScenario, test: MarginalTest | None, threshold: float,
                    n_sims: int = ORACLE_SIMS, seed: int = 1, alternatives=None) -> LevelEstimate:
    """Fresh-simulation estimate of ``P(min over true nulls <= threshold)``."""
    if threshold < 0:
        raise InputError("threshold must be >= 0")
    if alternatives is None:
        alternatives = scenario.alternatives_for(0)
    true_nulls = scenario.partition(alternatives).true_nulls
    null_p = simulate_null_pvalues(scenario, test, n_sims, seed)
    level = float(np.mean(true_null_minima(null_p, true_nulls) <= threshold))
    return LevelEstimate(level, _stderr(level, n_sims), n_sims)


def min_sample_size(m: int, alpha: float) -> int:
    """Smallest even ``n`` with ``n >= 2 log2(m / alpha) + 2``."""
    if m < 1:
        raise InputError("m must be >= 1")
    _check_alpha(alpha)
    n = math.ceil(2 * math.log2(m / alpha) + 2)
    return n + (n % 2)


def perfect_block_threshold(B: int, alpha: float) -> float:
    """``1 - (1 - alpha)**(1/B)``, computed without cancellation."""
    if B < 1:
        raise InputError("B must be >= 1")
    _check_alpha(alpha)
    return -math.expm1(math.log1p(-alpha) / B)


def block_bound(B: int, alpha: float) -> tuple[float, float]:
    """``(B * c, -log(1 - alpha))`` for the perfect-block threshold ``c``; the first never exceeds the second."""
    return B * perfect_block_threshold(B, alpha), -math.log1p(-alpha)


def bonferroni_threshold(m: int, alpha: float) -> float:
    if m < 1:
        raise InputError("m must be >= 1")
    return alpha / m


def bonferroni(pvalues, alpha: float = 0.05) -> AdjustmentResult:
    p = np.asarray(pvalues, dtype=float)
    adjusted = np.minimum(1.0, p * p.size)
    reject = np.flatnonzero(p <= bonferroni_threshold(p.size, alpha))
    return AdjustmentResult(p, adjusted, alpha / p.size, reject, "bonferroni", alpha)


def holm(pvalues, alpha: float = 0.05) -> AdjustmentResult:
    """Holm's step-down: reject ``p_(k)`` while ``p_(l) <= alpha / (m - l + 1)`` for all ``l <= k``."""
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    factors = m - np.arange(m)
    adj_sorted = np.maximum.accumulate(np.minimum(1.0, p[order] * factors))
    adjusted = np.empty(m)
    adjusted[order] = adj_sorted
    ok = p[order] <= alpha / factors
    k = m if ok.all() else int(np.argmin(ok))
    reject = np.sort(order[:k])
    threshold = float(p[order[k - 1]]) if k else 0.0
    return AdjustmentResult(p, adjusted, threshold, reject, "holm", alpha)


def holm_reject(pvalues, alpha: float = 0.05) -> set[int]:
    return set(holm(pvalues, alpha).rejections.tolist())


def oracle_single_step(raw, minima, alpha: float, lattice=None) -> AdjustmentResult:
    """Reject ``raw <= c`` with ``c`` the oracle threshold from simulated true-null minima."""
    return single_step(raw, MinPDistribution(minima), lattice, alpha, method="oracle")


def oracle_step_down(raw, null_p: np.ndarray, alpha: float, true_nulls=None) -> AdjustmentResult:
    """Free step-down with simulated null p-values in place of permutations.

    With ``true_nulls`` given, the other hypotheses never enter the minimum, so
    the first step uses the single-step oracle distribution.
    """
    null = np.array(null_p, dtype=float).T
    if true_nulls is not None:
        keep = np.zeros(null.shape[0], dtype=bool)
        keep[np.asarray(list(true_nulls), dtype=np.int64)] = True
        null[~keep] = np.inf
    return step_down(raw, null, alpha, method="oracle_step_down")
