"""End-to-end acceptance checks, one test per criterion.

Each test records a verdict through the ``verdict`` fixture before asserting,
so the terminal summary lists PASS or FAIL for every criterion that ran.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from wyperm.brute import brute_partition_count, enumeration_lattice, naive_two_round
from wyperm.core import DataMatrix, PermutationPlan, enumerate_assignments
from wyperm.engine import shared_sweep, sweep, wy_threshold
from wyperm.experiment import benchmark, run_experiment
from wyperm.marginal import (
    MarginalTest,
    partition_count,
    permutation_t_pvalue,
    rank_sum_lattice,
    wilcoxon_lattice,
    wilcoxon_pvalue_table,
)
from wyperm.oracle import (
    block_bound,
    effective_level,
    min_sample_size,
    oracle_threshold_mc,
    perfect_block_threshold,
)
from wyperm.simulate import SimulationScenario

pytestmark = pytest.mark.acceptance
ALPHA = 0.05
EXHAUSTIVE = PermutationPlan.exhaustive()


def iid_null(m, n, seed=0):
    return SimulationScenario(m=m, n1=n // 2, n2=n // 2, structure="independent",
                              n_alternatives=0, seed=seed)


def lattice_steps(lattice, a, b):
    i = np.searchsorted(lattice.values, [a, b])
    return abs(int(i[0]) - int(i[1]))


@pytest.mark.criterion(1)
def test_c01_exact_lattice(verdict):
    t0 = time.perf_counter()
    ok = True
    for n in range(2, 13, 2):
        h = n // 2
        lat = wilcoxon_lattice(n)
        ok &= list(lat.exact) == enumeration_lattice(h, h)
        ok &= lat.exact[0] == Fraction(2 * math.factorial(h) ** 2, math.factorial(n))
    elapsed = time.perf_counter() - t0
    verdict(1, ok and elapsed < 1.0, f"lattices equal enumeration for n<=12 in {elapsed:.3f}s")
    assert ok and elapsed < 1.0


@pytest.mark.criterion(2)
def test_c02_partition_counts(verdict):
    t0 = time.perf_counter()
    bad = [(n, j) for n in range(9) for j in range(33)
           if partition_count(n, j) != brute_partition_count(n, j)]
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 1.0
    verdict(2, ok, f"{9 * 33 - len(bad)}/{9 * 33} counts match in {elapsed:.3f}s")
    assert ok


@pytest.mark.criterion(3)
def test_c03_uniformity(verdict):
    failures = []
    for n in (6, 8):
        h = n // 2
        x = np.random.default_rng(n).standard_normal(n)
        assignments = enumerate_assignments(n, h)
        total = len(assignments)

        # Wilcoxon, exact rationals from the rank-sum table
        table = wilcoxon_pvalue_table(h, h, exact=True)
        ranks = np.argsort(np.argsort(x)) + 1
        ps = [table[int(ranks[a].sum()) - h * (h + 1) // 2] for a in assignments]
        for s in set(ps):
            if Fraction(sum(p <= s for p in ps), total) != s:
                failures.append(("wilcoxon", n, s))

        # permutation t: counts out of the C(n, n/2) arrangements
        ps = [Fraction(round(permutation_t_pvalue(x, a.astype(int), EXHAUSTIVE) * total), total)
              for a in assignments]
        for s in set(ps):
            if Fraction(sum(p <= s for p in ps), total) != s:
                failures.append(("perm-t", n, s))
    verdict(3, not failures, f"P(p <= s) = s exactly for n=6, 8 ({len(failures)} violations)")
    assert not failures


@pytest.mark.criterion(4)
def test_c04_weak_fwer(verdict):
    reps = 2000
    scenario = SimulationScenario(m=200, n1=10, n2=10, structure="block", rho=0.75,
                                  n_alternatives=0, seed=4)
    rep = run_experiment(scenario, ("wy",), ALPHA, reps, PermutationPlan(count=500), seed=4)
    fwer = rep.summary["wy"]["fwer"]
    bound = ALPHA + 3 * math.sqrt(ALPHA * (1 - ALPHA) / reps)
    ok = fwer <= bound
    verdict(4, ok, f"complete-null FWER {fwer:.4f} <= {bound:.4f} over {reps} replicates")
    assert ok


@pytest.mark.criterion(5)
def test_c05_perfect_block(verdict):
    B, copies, n = 20, 10, 16
    rng = np.random.default_rng(5)
    base = rng.standard_normal((B, n))
    W = DataMatrix(np.array([0] * (n // 2) + [1] * (n // 2)), np.repeat(base, copies, axis=0))
    s = sweep(W, MarginalTest("wilcoxon"), EXHAUSTIVE, keep=False)
    c_hat = wy_threshold(s.minp, s.lattice, ALPHA)
    closed = perfect_block_threshold(B, ALPHA)
    steps = lattice_steps(s.lattice, c_hat, closed)
    bound_ok = all(bc <= lim * (1 + 1e-12) for bc, lim in (block_bound(b, ALPHA) for b in range(1, 10_001)))
    ok = steps <= 1 and bound_ok
    verdict(5, ok, f"WY {c_hat:.6g} vs closed form {closed:.6g}: {steps} lattice step(s); "
                   f"B*c <= -log(1-alpha) for B<=1e4: {bound_ok}")
    assert ok


@pytest.mark.criterion(6)
def test_c06_sample_size_bound(verdict):
    details, ok = [], True
    for m in (10, 100, 1000):
        n = min_sample_size(m, ALPHA)
        at = oracle_threshold_mc(iid_null(m, n), alpha=ALPHA, n_sims=1000, seed=m).threshold
        below = oracle_threshold_mc(iid_null(m, n - 2), alpha=ALPHA, n_sims=1000, seed=m + 1).threshold
        ok &= at > 0 and below == 0
        details.append(f"m={m}: c(n={n})={at:.3g}, c(n={n - 2})={below:.3g}")
    verdict(6, ok, "; ".join(details))
    assert ok


@pytest.mark.criterion(7)
def test_c07_relational_power(verdict):
    runs = 100
    scenario = SimulationScenario(m=1000, structure="block", rho=0.9, seed=7)
    rep = run_experiment(scenario, ("holm", "oracle", "wy", "wy_stepdown"), ALPHA, runs,
                         PermutationPlan(count=500), seed=7, oracle_sims=1000)
    s = rep.summary
    wy, holm, oracle = s["wy"]["mean_tp"], s["holm"]["mean_tp"], s["oracle"]["mean_tp"]
    diff = np.array([r["methods"]["wy"]["tp"] - r["methods"]["oracle"]["tp"] for r in rep.runs])
    diff_se = diff.std(ddof=1) / math.sqrt(runs)
    a = wy >= 1.2 * holm
    b = abs(wy - oracle) <= 0.1 * oracle + 3 * diff_se
    c = 0.02 <= s["wy"]["fwer"] <= 0.10
    d = all(r["stepdown_contains_single_step"] for r in rep.runs)
    ok = a and b and c and d
    verdict(7, ok, f"(a) WY {wy:.2f} vs Holm {holm:.2f}: {a}; (b) oracle {oracle:.2f}: {b}; "
                   f"(c) FWER {s['wy']['fwer']:.3f}: {c}; (d) step-down contains single-step: {d}")
    assert ok


@pytest.mark.criterion(8)
def test_c08_effective_level(verdict):
    sims = 20_000
    levels, ok, details = [], True, []
    for n in (24, 48, 96):
        sc = SimulationScenario(m=100, n1=n // 2, n2=n // 2, structure="block", rho=0.5,
                                block_size=5, n_alternatives=0, seed=8)
        est = oracle_threshold_mc(sc, alpha=ALPHA, n_sims=sims, seed=n)
        lvl = effective_level(sc, None, est.threshold, n_sims=sims, seed=n + 1)
        ok &= lvl.level <= ALPHA + 3 * lvl.stderr
        levels.append(lvl)
        details.append(f"n={n}: {lvl.level:.4f}")
    for lo, hi in zip(levels, levels[1:]):
        ok &= hi.level >= lo.level - 3 * math.hypot(lo.stderr, hi.stderr)
    verdict(8, ok, "effective level " + ", ".join(details))
    assert ok


@pytest.mark.criterion(9)
def test_c09_shared_sweep_equivalence(verdict):
    rng = np.random.default_rng(9)
    W = DataMatrix(np.array([0, 0, 0, 1, 1, 1]), rng.standard_normal((3, 6)))
    ok = True
    for statistic in ("abs_t", "abs_rank_sum"):
        fast = shared_sweep(W, statistic, EXHAUSTIVE)
        obs, perm, minp = naive_two_round(W, statistic, EXHAUSTIVE)
        ok &= np.array_equal(fast.observed, obs)
        ok &= np.array_equal(fast.permuted, perm)
        ok &= np.array_equal(fast.minp.samples, minp)
    verdict(9, ok, "shared sweep equals two-round computation for n=6, m=3")
    assert ok


@pytest.mark.criterion(10)
def test_c10_performance(verdict):
    def best(m):
        return min(benchmark(m, permutations=1000, seed=10)["total"] for _ in range(3))

    t_half, t_full = best(5000), best(10_000)
    ratio = t_full / t_half
    ok = t_full < 600 and ratio <= 2.5
    verdict(10, ok, f"m=10000 in {t_full:.2f}s, doubling ratio {ratio:.2f}")
    assert ok
