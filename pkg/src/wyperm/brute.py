"""Slow reference implementations used to check the fast paths.

Everything here enumerates directly and uses exact integer or rational
arithmetic where possible. Only the test suite and ``wy verify`` import this module.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np
from scipy import stats

from .core import DataMatrix, InputError, PermutationPlan, response_draws

# override per call through the ``budget`` arguments
ENUMERATION_BUDGET = 1_000_000
NAIVE_BUDGET = 250_000


def _check_budget(size: int, budget: int, what: str) -> None:
    if size > budget:
        raise InputError(f"{what} needs {size} evaluations, budget is {budget}")


def wilcoxon_null_by_enumeration(n1: int, n2: int, budget: int = ENUMERATION_BUDGET) -> Counter:
    """Rank sum of the first group over every choice of its ``n1`` ranks out of ``1..n``."""
    if n1 < 1 or n2 < 1:
        raise InputError("both groups need at least one observation")
    _check_budget(math.comb(n1 + n2, n1), budget, "enumeration")
    return Counter(sum(c) for c in itertools.combinations(range(1, n1 + n2 + 1), n1))


def enumeration_pvalues(n1: int, n2: int, budget: int = ENUMERATION_BUDGET) -> dict[int, Fraction]:
    """Two-sided p-value ``min(1, 2 min(P(R <= r), P(R >= r)))`` for every rank sum ``r``."""
    dist = wilcoxon_null_by_enumeration(n1, n2, budget)
    total = sum(dist.values())
    out = {}
    for r in dist:
        lower = sum(c for s, c in dist.items() if s <= r)
        upper = sum(c for s, c in dist.items() if s >= r)
        out[r] = min(Fraction(1), Fraction(2 * min(lower, upper), total))
    return out


def enumeration_lattice(n1: int, n2: int, budget: int = ENUMERATION_BUDGET) -> list[Fraction]:
    return sorted(set(enumeration_pvalues(n1, n2, budget).values()))


def brute_wilcoxon_pvalue(group1, group2) -> Fraction:
    """Exact two-sided p-value by ranking the pooled sample and enumerating."""
    pooled = list(group1) + list(group2)
    if len(set(pooled)) != len(pooled):
        raise InputError("ties in pooled sample")
    order = sorted(pooled)
    r = sum(order.index(v) + 1 for v in group1)
    return enumeration_pvalues(len(group1), len(group2))[r]


def partitions(j: int, max_parts: int, max_part: int):
    """Yield the partitions of ``j`` (non-increasing tuples) with bounded count and size."""
    def rec(rest, parts_left, cap):
        if rest == 0:
            yield ()
            return
        if parts_left == 0:
            return
        for first in range(min(rest, cap), 0, -1):
            for tail in rec(rest - first, parts_left - 1, first):
                yield (first,) + tail

    yield from rec(j, max_parts, max_part)


def brute_partition_count(n: int, j: int) -> int:
    return sum(1 for _ in partitions(j, n, n))


def hypergeometric_2x2(table) -> Fraction:
    """Fisher's two-sided p-value of a 2x2 table by summing factorial-form probabilities."""
    (a, b), (c, d) = [[int(v) for v in row] for row in table]
    r1, r2, c1 = a + b, c + d, a + c
    n = r1 + r2
    f = math.factorial

    def prob(x):
        return Fraction(f(r1) * f(r2) * f(c1) * f(n - c1),
                        f(n) * f(x) * f(r1 - x) * f(c1 - x) * f(r2 - c1 + x))

    lo, hi = max(0, c1 - r2), min(r1, c1)
    p_obs = prob(a)
    return min(Fraction(1), sum(p for p in map(prob, range(lo, hi + 1)) if p <= p_obs))


def _scalar_statistic(statistic: str, x: np.ndarray, y: np.ndarray) -> float:
    if statistic == "abs_t":
        g0, g1 = x[y == 0], x[y != 0]
        if np.ptp(x) == 0:
            return 0.0
        if np.ptp(g0) == 0 and np.ptp(g1) == 0:
            return math.inf
        return abs(float(stats.ttest_ind(g0, g1).statistic))
    if statistic == "abs_spearman":
        # a constant row ranks to all-equal values and carries no association
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            return 0.0
        return abs(float(stats.spearmanr(x, y).statistic))
    if statistic == "abs_rank_sum":
        g0, g1 = x[y == 0], x[y != 0]
        u = stats.mannwhitneyu(g0, g1).statistic
        return abs(2 * float(u) - g0.size * g1.size)
    raise InputError(f"unknown statistic {statistic!r}")


def _at_least(values: list[float], obs: float, rtol: float) -> int:
    finite = [abs(v) for v in values if math.isfinite(v)]
    tol = rtol * max([1.0] + finite) if rtol else 0.0
    return sum(1 for v in values if v >= obs - tol)


def naive_two_round(W: DataMatrix, statistic: str, plan: PermutationPlan,
                    rtol: float = 1e-9, budget: int = NAIVE_BUDGET):
    """Marginal p-values and min-p samples with an explicit inner round per outer draw.

    For every outer draw ``g`` and hypothesis ``j`` the inner round re-applies
    the plan to the response of ``gW`` and counts statistics at least
    ``T_j(gW)``. Returns ``(observed p-values, permuted p-value matrix, min-p samples)``.
    """
    outer = response_draws(W, plan)
    P = outer.size
    _check_budget(W.m * P * P, budget, "naive two-round computation")
    X = np.asarray(W.features, dtype=float)
    obs_codes = W.response_codes()

    def marginal(codes):
        inner = response_draws(W.with_response(codes), plan).codes
        out = np.empty(W.m)
        for j in range(W.m):
            t_obs = _scalar_statistic(statistic, X[j], codes)
            ts = [_scalar_statistic(statistic, X[j], h) for h in inner]
            out[j] = _at_least(ts, t_obs, rtol) / len(ts)
        return out

    observed = marginal(obs_codes)
    permuted = np.column_stack([marginal(c) for c in outer.codes])
    return observed, permuted, permuted.min(axis=0)


def cross_checks(seed: int = 0) -> list[tuple[str, bool]]:
    """Compare each fast path with its brute-force counterpart on small instances."""
    from .engine import shared_sweep
    from .marginal import (
        fisher_exact_pvalue,
        lattice_formula_values,
        partition_count,
        rank_sum_counts,
        wilcoxon_lattice,
    )

    checks = []
    ok = all(
        list(wilcoxon_lattice(n).exact) == enumeration_lattice(n // 2, n // 2)
        for n in range(2, 13, 2)
    )
    checks.append(("wilcoxon lattice equals enumeration, even n <= 12", ok))
    ok = True
    for n in range(2, 13, 2):
        h = n // 2
        scale = Fraction(2 * math.factorial(h) ** 2, math.factorial(n))
        ok &= lattice_formula_values(n)[0] == scale and wilcoxon_lattice(n).exact[0] == scale
    checks.append(("smallest lattice value equals 2 (n/2)!^2 / n!", ok))
    ok = all(partition_count(n, j) == brute_partition_count(n, j)
             for n in range(0, 9) for j in range(0, 33))
    checks.append(("bounded partition counts, n <= 8, j <= 32", ok))
    ok = True
    for n1 in range(1, 7):
        for n2 in range(1, 7):
            dist = wilcoxon_null_by_enumeration(n1, n2)
            base = n1 * (n1 + 1) // 2
            ok &= tuple(dist.get(base + u, 0) for u in range(n1 * n2 + 1)) == rank_sum_counts(n1, n2)
    checks.append(("rank-sum distribution equals enumeration, n1, n2 <= 6", ok))
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(50):
        t = rng.integers(0, 12, size=(2, 2))
        if t.sum(axis=0).min() == 0 or t.sum(axis=1).min() == 0:
            continue
        exact = float(hypergeometric_2x2(t))
        ok &= abs(fisher_exact_pvalue(t).pvalue - exact) <= 1e-12 * exact
    checks.append(("2x2 Fisher equals direct hypergeometric sum", ok))
    ok = True
    for statistic in ("abs_t", "abs_rank_sum"):
        W = DataMatrix(np.array([0, 0, 0, 1, 1, 1]), rng.standard_normal((3, 6)))
        fast = shared_sweep(W, statistic, PermutationPlan.exhaustive())
        obs, perm, minp = naive_two_round(W, statistic, PermutationPlan.exhaustive())
        ok &= np.array_equal(fast.observed, obs) and np.array_equal(fast.permuted, perm)
        ok &= np.array_equal(fast.minp.samples, minp)
    checks.append(("shared sweep equals naive two-round computation, n=6, m=3", ok))
    return checks
