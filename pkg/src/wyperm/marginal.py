"""Per-hypothesis p-values: Wilcoxon, permutation t, Spearman and Fisher.

The Wilcoxon null distribution is kept in exact integer arithmetic. The count
of label assignments whose group-1 rank sum exceeds its minimum by ``u`` is
the number of partitions of ``u`` into at most ``n1`` parts none larger than
``n2``, i.e. the coefficient of ``q**u`` in the Gaussian binomial
``[n1 + n2 choose n1]_q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .core import (
    DataMatrix,
    InputError,
    PermutationPlan,
    PreconditionError,
    PValueLattice,
    _is_numeric,
    response_draws,
)

KINDS = ("wilcoxon", "permutation_t", "spearman", "fisher_exact")
ALIASES = {"perm-t": "permutation_t", "fisher": "fisher_exact", "t": "permutation_t"}

FISHER_BUDGET = 1_000_000
FISHER_MC_DRAWS = 100_000
# relative tolerance for ties between floating permutation statistics
STAT_RTOL = 1e-9


@dataclass(frozen=True)
class MarginalTest:
    """Which test produces ``p_j(W)`` and how.

    ``plan`` is only used when a permutation test runs on its own; inside the
    Westfall-Young sweep the outer plan doubles as the inner one.
    """

    kind: str = "wilcoxon"
    plan: PermutationPlan = field(default_factory=lambda: PermutationPlan(count=9999))
    ties: str = "strict"
    fisher_budget: int = FISHER_BUDGET
    fisher_draws: int = FISHER_MC_DRAWS
    fisher_seed: int = 0

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise InputError(f"unknown test {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.ties not in ("strict", "permissive"):
            raise InputError("ties must be 'strict' or 'permissive'")
        object.__setattr__(self, "kind", kind)

    def check(self, W: DataMatrix) -> None:
        if self.kind in ("wilcoxon", "permutation_t"):
            if not W.categorical:
                raise PreconditionError(f"{self.kind} needs a categorical two-label response")
            n0, n1 = W.group_sizes()
            if self.kind == "permutation_t" and min(n0, n1) < 2:
                raise PreconditionError("permutation t-test needs both groups of size >= 2")
        elif self.kind == "spearman":
            if not _is_numeric(W.response):
                raise PreconditionError("spearman needs a numeric response")
            if W.n < 3:
                raise PreconditionError("spearman needs n >= 3")
        elif self.kind == "fisher_exact" and not W.categorical:
            raise PreconditionError("fisher_exact needs a categorical response")


# --------------------------------------------------------------------------
# partition counts and the exact rank-sum distribution
# --------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _partition_table(max_parts: int, max_part: int) -> tuple[int, ...]:
    """Counts of partitions of j = 0..max_parts*max_part into at most
    ``max_parts`` parts, each at most ``max_part``.

    Built by the recurrence over the largest allowed part ``l``:
    ``P(j, k, l) = P(j, k, l - 1) + P(j - l, k - 1, l)``.
    """
    size = max_parts * max_part + 1
    # rows[k][j] for the current value of l
    rows = [np.zeros(size, dtype=object) for _ in range(max_parts + 1)]
    for row in rows:
        row[0] = 1
    for l in range(1, max_part + 1):
        for k in range(1, max_parts + 1):
            rows[k][l:] = rows[k][l:] + rows[k - 1][:-l]
    return tuple(int(x) for x in rows[max_parts])


def partition_count(n: int, j: int) -> int:
    """``q_n(j)``: partitions of ``j`` with at most ``n`` parts, each at most ``n``."""
    if n < 0 or j < 0:
        raise InputError("partition_count needs n >= 0 and j >= 0")
    if j == 0:
        return 1
    if j > n * n:
        return 0
    return _partition_table(n, n)[j]


@lru_cache(maxsize=256)
def rank_sum_counts(n1: int, n2: int) -> tuple[int, ...]:
    """Exact counts of ``U = R1 - n1(n1+1)/2`` over all ``C(n1+n2, n1)`` assignments.

    Uses the product form of the Gaussian binomial,
    ``prod_{i=1..n1} (1 - q**(n2+i)) / (1 - q**i)``, one multiply and one
    exact division per factor; every partial product is a polynomial.
    """
    if n1 < 0 or n2 < 0:
        raise InputError("group sizes must be nonnegative")
    if n1 > n2:
        n1, n2 = n2, n1
    deg = n1 * n2
    c = np.zeros(deg + n1 + n2 + 2, dtype=object)
    c[:] = 0
    c[0] = 1
    for i in range(1, n1 + 1):
        a = n2 + i
        c[a:] = c[a:] - c[:-a]
        for r in range(i):
            c[r::i] = np.cumsum(c[r::i])
    return tuple(int(x) for x in c[: deg + 1])


@lru_cache(maxsize=256)
def _exact_pvalue_table(n1: int, n2: int) -> tuple[Fraction, ...]:
    counts = rank_sum_counts(n1, n2)
    total = math.comb(n1 + n2, n1)
    out = []
    below = 0
    for u, cnt in enumerate(counts):
        lower = below + cnt
        upper = total - below
        out.append(min(Fraction(1), Fraction(2 * min(lower, upper), total)))
        below = lower
    return tuple(out)


@lru_cache(maxsize=256)
def _pvalue_table(n1: int, n2: int) -> np.ndarray:
    t = np.array([float(f) for f in _exact_pvalue_table(n1, n2)])
    t.flags.writeable = False
    return t


def wilcoxon_pvalue_table(n1: int, n2: int, exact: bool = False):
    """Two-sided p-value for each ``U = 0..n1*n2`` (group-1 rank sum minus its minimum)."""
    return _exact_pvalue_table(n1, n2) if exact else _pvalue_table(n1, n2)


def rank_sum_lattice(n1: int, n2: int) -> PValueLattice:
    """All attainable two-sided Wilcoxon p-values for group sizes ``n1``, ``n2``."""
    return PValueLattice.from_fractions(_exact_pvalue_table(n1, n2))


def wilcoxon_lattice(n: int) -> PValueLattice:
    """The lattice for equal groups of ``n/2`` from the partition-count formula.

    ``s_i = 2 (n/2)!^2 / n! * sum_{j<=i} q_{n/2}(j)`` for ``i < r_n`` with
    ``r_n = floor(n^2/8 + 1)``, then ``s_{r_n} = 1``. Raw values above one are
    capped and duplicates merged.
    """
    if n < 2 or n % 2:
        raise InputError("wilcoxon_lattice needs an even n >= 2; use rank_sum_lattice otherwise")
    values = [min(Fraction(1), s) for s in lattice_formula_values(n)]
    values.append(Fraction(1))
    return PValueLattice.from_fractions(values)


def lattice_formula_values(n: int) -> list[Fraction]:
    """Uncapped ``s_0..s_{r_n - 1}`` from the partition-count formula."""
    half = n // 2
    scale = Fraction(2 * math.factorial(half) ** 2, math.factorial(n))
    cum = 0
    out = []
    for i in range((n * n) // 8 + 1):
        cum += partition_count(half, i)
        out.append(scale * cum)
    return out


def _has_ties(X: np.ndarray) -> np.ndarray:
    s = np.sort(X, axis=-1)
    return np.any(np.diff(s, axis=-1) == 0, axis=-1)


def wilcoxon_pvalue(group1, group2, exact: bool = False, ties: str = "strict",
                    plan: PermutationPlan | None = None):
    """Exact two-sided rank-sum p-value, ``2 * min(P(R <= r), P(R >= r))`` capped at 1.

    With ``ties="permissive"`` tied data fall back to a permutation t-test on
    mid-ranks using ``plan``.
    """
    x = np.asarray(group1, dtype=float).ravel()
    y = np.asarray(group2, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise PreconditionError("both groups need at least one observation")
    pooled = np.concatenate([x, y])
    if _has_ties(pooled):
        if ties == "strict":
            raise PreconditionError("ties in pooled sample; exact Wilcoxon needs tie-free data")
        labels = np.array([0] * x.size + [1] * y.size)
        return permutation_t_pvalue(rankdata(pooled), labels, plan or PermutationPlan(count=9999))
    ranks = rankdata(pooled)
    u = int(round(ranks[: x.size].sum())) - x.size * (x.size + 1) // 2
    table = wilcoxon_pvalue_table(x.size, y.size, exact=exact)
    return table[u]


# --------------------------------------------------------------------------
# vectorised statistics: features (m x n) against draws (P x n)
# --------------------------------------------------------------------------


def rank_sum_u(ranks: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """``U`` of the label-0 group for each feature row and each draw."""
    in_first = (codes == 0).astype(float)
    n0 = int(in_first[0].sum())
    r = ranks @ in_first.T
    return np.rint(r).astype(np.int64) - n0 * (n0 + 1) // 2


def abs_t_statistics(X: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Pooled-variance two-sample ``|t|`` of each row for each labelling.

    A zero pooled variance gives a statistic of 0.
    """
    X = np.asarray(X, dtype=float)
    X = X - X.mean(axis=1, keepdims=True)
    g = (codes == 0).astype(float)
    n = X.shape[1]
    n0 = g[0].sum()
    n1 = n - n0
    s0 = X @ g.T
    q0 = (X * X) @ g.T
    total_ss = (X * X).sum(axis=1, keepdims=True)
    s1 = -s0  # rows are centred
    mean_diff = s0 / n0 - s1 / n1
    ss = (q0 - s0 * s0 / n0) + (total_ss - q0 - s1 * s1 / n1)
    var = np.maximum(ss, 0.0) / (n - 2) * (1.0 / n0 + 1.0 / n1)
    scale = np.maximum(total_ss, np.finfo(float).tiny)
    # zero within-group spread: infinite if the groups differ, 0 if constant
    separated = np.where(mean_diff * mean_diff > 1e-14 * scale, np.inf, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(var > 1e-14 * scale, np.abs(mean_diff) / np.sqrt(var), separated)
    return t


def centred_ranks(X: np.ndarray) -> np.ndarray:
    """Twice the mid-ranks minus ``n + 1``: integer valued, zero mean."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return 2.0 * rankdata(X, axis=1) - (X.shape[1] + 1)


def abs_spearman_statistics(X: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """``|sum a_x a_y|`` with integer centred ranks; monotone in ``|rho|`` per row.

    ``codes`` are permuted response values; ranking them per draw keeps the
    statistic exact in floating point.
    """
    ax = centred_ranks(X)
    ay = centred_ranks(codes)
    return np.abs(ax @ ay.T)


def spearman_rho(x, y) -> float:
    ax = centred_ranks(x)[0]
    ay = centred_ranks(y)[0]
    den = math.sqrt(float(ax @ ax) * float(ay @ ay))
    return float(ax @ ay) / den if den > 0 else 0.0


def permutation_pvalues_from_stats(T: np.ndarray, observed: np.ndarray, rtol: float = 0.0) -> np.ndarray:
    """Fraction of columns of ``T`` at least as extreme as ``observed``, per row.

    ``observed`` may be a vector (one value per row) or a matrix with the same
    number of rows (each entry ranked within its row).
    """
    T = np.atleast_2d(T)
    obs = np.asarray(observed, dtype=float)
    squeeze = obs.ndim == 1
    obs = obs.reshape(T.shape[0], -1)
    P = T.shape[1]
    out = np.empty(obs.shape)
    for j in range(T.shape[0]):
        row = np.sort(T[j])
        tol = 0.0
        if rtol:
            finite = row[np.isfinite(row)]
            tol = rtol * max(1.0, float(np.abs(finite).max())) if finite.size else 0.0
        out[j] = P - np.searchsorted(row, obs[j] - tol, side="left")
    out /= P
    return out[:, 0] if squeeze else out


def permutation_t_pvalue(feature, response, plan: PermutationPlan) -> float:
    """Fraction of plan permutations with ``|t|`` at least the observed ``|t|``."""
    W = DataMatrix(np.asarray(response), np.asarray(feature, dtype=float)[None, :], categorical=True)
    MarginalTest("permutation_t").check(W)
    draws = response_draws(W, plan)
    if draws.size == 0:
        raise InputError("plan is empty")
    T = abs_t_statistics(W.features, draws.codes)
    obs = abs_t_statistics(W.features, W.response_codes()[None, :])[:, 0]
    return float(permutation_pvalues_from_stats(T, obs, STAT_RTOL)[0])


def spearman_pvalue(feature, response, plan: PermutationPlan) -> float:
    """Two-sided permutation p-value of ``|rho|`` under response permutation."""
    W = DataMatrix(np.asarray(response, dtype=float), np.asarray(feature, dtype=float)[None, :],
                   categorical=False)
    MarginalTest("spearman").check(W)
    draws = response_draws(W, plan)
    if draws.size == 0:
        raise InputError("plan is empty")
    T = abs_spearman_statistics(W.features, draws.codes)
    obs = abs_spearman_statistics(W.features, W.response_codes()[None, :])[:, 0]
    return float(permutation_pvalues_from_stats(T, obs)[0])


# --------------------------------------------------------------------------
# Fisher's exact test for K_x x K_y tables
# --------------------------------------------------------------------------


class FisherResult(NamedTuple):
    pvalue: float
    monte_carlo: bool


class _BudgetExceeded(Exception):
    pass


def _log_factorial_sum(a) -> float:
    return sum(math.lgamma(int(x) + 1) for x in np.ravel(a))


def _fisher_2x2(t: np.ndarray) -> float:
    (a, b), (c, d) = t.tolist()
    r1, c1, n = a + b, a + c, a + b + c + d
    lo, hi = max(0, c1 - (n - r1)), min(r1, c1)
    weights = [math.comb(r1, x) * math.comb(n - r1, c1 - x) for x in range(lo, hi + 1)]
    obs = weights[a - lo]
    tail = sum(w for w in weights if w <= obs)
    return float(Fraction(tail, math.comb(n, c1)))


def _enumerate_tables(rows: list[int], cols: list[int], budget: int):
    """Yield every table (as a flat tuple, column-major) with the given margins."""
    K, L = len(rows), len(cols)
    seen = 0
    cells = [0] * (K * L)

    def fill_column(j, remaining_rows):
        nonlocal seen
        if j == L - 1:
            for i in range(K):
                cells[j * K + i] = remaining_rows[i]
            seen += 1
            if seen > budget:
                raise _BudgetExceeded
            yield tuple(cells)
            return
        yield from fill_cell(j, 0, cols[j], remaining_rows)

    def fill_cell(j, i, left, remaining_rows):
        if i == K - 1:
            if left > remaining_rows[i]:
                return
            cells[j * K + i] = left
            new = list(remaining_rows)
            new[i] -= left
            yield from fill_column(j + 1, new)
            return
        # capacity of the rows below i must absorb what is left
        cap_below = sum(remaining_rows[i + 1:])
        for x in range(max(0, left - cap_below), min(left, remaining_rows[i]) + 1):
            cells[j * K + i] = x
            new = list(remaining_rows)
            new[i] -= x
            yield from fill_cell(j, i + 1, left - x, new)

    yield from fill_column(0, list(rows))


def _fisher_distribution(rows: tuple[int, ...], cols: tuple[int, ...], budget: int):
    """Map table key -> log-probability over all tables with these margins."""
    n = sum(rows)
    const = _log_factorial_sum(rows) + _log_factorial_sum(cols) - math.lgamma(n + 1)
    out = {}
    for cells in _enumerate_tables(list(rows), list(cols), budget):
        out[cells] = const - _log_factorial_sum(cells)
    return out


def _fisher_pvalues_from_distribution(dist: dict) -> dict:
    keys = list(dist)
    logp = np.array([dist[k] for k in keys])
    order = np.argsort(logp, kind="stable")
    sorted_lp = logp[order]
    probs = np.exp(sorted_lp)
    cum = np.cumsum(probs)
    # tables within 1e-7 relative probability of each other count as ties
    idx = np.searchsorted(sorted_lp, sorted_lp + 1e-7, side="right") - 1
    pv = np.minimum(cum[idx], 1.0)
    out = {}
    for pos, k in enumerate(order):
        out[keys[k]] = float(pv[pos])
    return out


def _trim(table: np.ndarray) -> np.ndarray:
    t = table[table.sum(axis=1) > 0]
    return t[:, t.sum(axis=0) > 0]


def _fisher_mc(table: np.ndarray, draws: int, seed: int) -> float:
    K, L = table.shape
    x = np.repeat(np.arange(K), table.sum(axis=1))
    y = np.concatenate([np.repeat(np.arange(L), table[i]) for i in range(K)])
    rows, cols = table.sum(axis=1), table.sum(axis=0)
    const = _log_factorial_sum(rows) + _log_factorial_sum(cols) - math.lgamma(table.sum() + 1)
    obs = const - _log_factorial_sum(table)
    rng = np.random.default_rng(seed)
    hits = 0
    batch = 2000
    from scipy.special import gammaln

    done = 0
    while done < draws:
        b = min(batch, draws - done)
        perm = rng.permuted(np.broadcast_to(y, (b, y.size)), axis=1)
        idx = x[None, :] * L + perm + (np.arange(b) * K * L)[:, None]
        tabs = np.bincount(idx.ravel(), minlength=b * K * L).reshape(b, K * L)
        lp = const - gammaln(tabs + 1).sum(axis=1)
        hits += int(np.sum(lp <= obs + 1e-7 * abs(obs)))
        done += b
    return (1 + hits) / (1 + draws)


def fisher_exact_pvalue(table, budget: int = FISHER_BUDGET, draws: int = FISHER_MC_DRAWS,
                        seed: int = 0) -> FisherResult:
    """Exact conditional p-value of a ``K_x x K_y`` table.

    Sums the probabilities of all tables with the observed margins that are no
    more likely than the observed one. When more than ``budget`` tables would
    have to be enumerated a seeded Monte Carlo estimate over ``draws``
    conditional tables is returned with ``monte_carlo=True``.
    """
    t = np.asarray(table)
    if t.ndim != 2 or t.size == 0:
        raise InputError("contingency table must be a non-empty 2-d array")
    if np.any(t < 0) or np.any(t != np.round(t)):
        raise InputError("contingency table needs nonnegative integer counts")
    t = _trim(t.astype(np.int64))
    if t.size == 0:
        raise InputError("contingency table is empty")
    if t.shape[0] == 1 or t.shape[1] == 1:
        return FisherResult(1.0, False)
    if t.shape == (2, 2):
        return FisherResult(_fisher_2x2(t), False)
    rows = tuple(int(x) for x in t.sum(axis=1))
    cols = tuple(int(x) for x in t.sum(axis=0))
    try:
        dist = _fisher_distribution(rows, cols, budget)
    except _BudgetExceeded:
        return FisherResult(_fisher_mc(t, draws, seed), True)
    pv = _fisher_pvalues_from_distribution(dist)
    return FisherResult(pv[tuple(t.T.ravel())], False)


def contingency_table(x, y) -> np.ndarray:
    xs, xi = np.unique(np.asarray(x), return_inverse=True)
    ys, yi = np.unique(np.asarray(y), return_inverse=True)
    out = np.zeros((xs.size, ys.size), dtype=np.int64)
    np.add.at(out, (xi, yi), 1)
    return out


class FisherHypothesis:
    """Conditional distribution of one feature's tables under response permutation.

    Margins do not change when the response is permuted, so every permuted
    table's p-value comes from one enumeration.
    """

    def __init__(self, x_codes: np.ndarray, kx: int, ky: int, y_codes: np.ndarray,
                 test: MarginalTest):
        self.x = x_codes
        self.kx, self.ky = kx, ky
        self.test = test
        obs = self.tables(y_codes[None, :])[0].reshape(ky, kx).T
        self.observed_table = obs
        self._cache: dict = {}
        trimmed = _trim(obs)
        self.lattice_values = None
        if trimmed.shape[0] > 1 and trimmed.shape[1] > 1:
            rows = tuple(int(v) for v in trimmed.sum(axis=1))
            cols = tuple(int(v) for v in trimmed.sum(axis=0))
            try:
                dist = _fisher_distribution(rows, cols, test.fisher_budget)
            except _BudgetExceeded:
                dist = None
            if dist is not None:
                self._cache = {"exact": _fisher_pvalues_from_distribution(dist)}
                self.lattice_values = np.unique(list(self._cache["exact"].values()))
        else:
            self.lattice_values = np.array([1.0])

    def tables(self, codes: np.ndarray) -> np.ndarray:
        P = codes.shape[0]
        K = self.kx * self.ky
        idx = codes * self.kx + self.x[None, :] + (np.arange(P) * K)[:, None]
        return np.bincount(idx.ravel(), minlength=P * K).reshape(P, K)

    def pvalues(self, codes: np.ndarray) -> np.ndarray:
        flat = self.tables(codes)
        out = np.empty(flat.shape[0])
        exact = self._cache.get("exact")
        mc = self._cache.setdefault("mc", {})
        for i, row in enumerate(flat):
            t = _trim(row.reshape(self.ky, self.kx).T)
            if t.shape[0] == 1 or t.shape[1] == 1:
                out[i] = 1.0
            elif exact is not None:
                out[i] = exact[tuple(t.T.ravel())]
            else:
                key = row.tobytes()
                if key not in mc:
                    mc[key] = fisher_exact_pvalue(t, self.test.fisher_budget,
                                                  self.test.fisher_draws, self.test.fisher_seed).pvalue
                out[i] = mc[key]
        return out
