"""Westfall-Young min-p procedures.

One sweep over the plan produces, for every hypothesis and every permutation,
the marginal p-value of the permuted data. For permutation tests the marginal
p-value of ``gW`` is the rank of its statistic among the same sweep's
statistics, so no inner round of permutations is needed. The min over
hypotheses per permutation gives the min-p distribution; the full matrix is
kept only when the step-down procedure asks for it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import rankdata

from .core import (
    DataMatrix,
    InputError,
    PermutationPlan,
    PreconditionError,
    PValueLattice,
    response_draws,
)
from .marginal import (
    STAT_RTOL,
    FisherHypothesis,
    MarginalTest,
    _has_ties,
    abs_spearman_statistics,
    abs_t_statistics,
    permutation_pvalues_from_stats,
    rank_sum_lattice,
    rank_sum_u,
    wilcoxon_pvalue_table,
)

ROW_CHUNK = 1024
# slack when comparing an empirical count with alpha * |plan|
_COUNT_SLACK = 1e-9


def _level_ok(counts, size: int, alpha: float):
    return np.asarray(counts) <= alpha * size + _COUNT_SLACK


@dataclass(frozen=True)
class MinPDistribution:
    """Min over hypotheses of the permuted p-values, one sample per plan element."""

    samples: np.ndarray
    plan: PermutationPlan | None = None
    scope: tuple[int, ...] | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise InputError("min-p distribution needs at least one sample")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "_sorted", np.sort(s))

    @property
    def size(self) -> int:
        return self.samples.size

    def counts(self, s) -> np.ndarray:
        """Number of samples ``<= s`` (closed, as in the indicator ``1{min p <= s}``)."""
        return np.searchsorted(self._sorted, np.asarray(s, dtype=float), side="right")

    def cdf(self, s):
        return self.counts(s) / self.size


@dataclass(frozen=True)
class AdjustmentResult:
    raw_pvalues: np.ndarray
    adjusted_pvalues: np.ndarray
    threshold: float
    rejections: np.ndarray
    method: str
    alpha: float

    @property
    def rejected(self) -> np.ndarray:
        mask = np.zeros(self.raw_pvalues.size, dtype=bool)
        mask[self.rejections] = True
        return mask

    def to_rows(self) -> list[dict]:
        rej = self.rejected
        return [
            {"hypothesis": j, "raw_p": float(p), "adjusted_p": float(a), "rejected": bool(r)}
            for j, (p, a, r) in enumerate(zip(self.raw_pvalues, self.adjusted_pvalues, rej))
        ]


class Sweep(NamedTuple):
    """Observed p-values, the permuted p-value matrix (m x P) and the min-p samples."""

    observed: np.ndarray
    permuted: np.ndarray | None
    minp: MinPDistribution
    lattice: PValueLattice | None


# --------------------------------------------------------------------------
# statistics for the shared sweep
# --------------------------------------------------------------------------


def _abs_rank_sum(X: np.ndarray, codes: np.ndarray) -> np.ndarray:
    ranks = rankdata(np.asarray(X, dtype=float), axis=1)
    n0 = int((codes[0] == 0).sum())
    n1 = codes.shape[1] - n0
    u = rank_sum_u(ranks, codes)
    return np.abs(2 * u - n0 * n1).astype(float)


STATISTICS: dict[str, tuple[Callable, float]] = {
    "abs_t": (abs_t_statistics, STAT_RTOL),
    "abs_spearman": (abs_spearman_statistics, 0.0),
    "abs_rank_sum": (_abs_rank_sum, 0.0),
}


def _resolve_statistic(statistic, rtol):
    if isinstance(statistic, str):
        if statistic not in STATISTICS:
            raise InputError(f"unknown statistic {statistic!r}")
        fn, default = STATISTICS[statistic]
        return fn, default if rtol is None else rtol
    return statistic, STAT_RTOL if rtol is None else rtol


def _row_chunks(m: int, chunk: int = ROW_CHUNK):
    return [(a, min(a + chunk, m)) for a in range(0, m, chunk)]


def _map_chunks(fn, chunks, workers: int):
    if workers <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def _assemble(results, m: int, P: int, keep: bool, plan, lattice) -> Sweep:
    observed = np.concatenate([r[0] for r in results])
    permuted = np.concatenate([r[1] for r in results], axis=0) if keep else None
    minp = np.min(np.vstack([r[2] for r in results]), axis=0)
    return Sweep(observed, permuted, MinPDistribution(minp, plan), lattice)


def _stat_chunk(X, codes, obs_codes, fn, rtol, observed_index, keep):
    T = fn(X, codes)
    if observed_index is not None:
        obs_stat = T[:, observed_index]
    else:
        obs_stat = fn(X, obs_codes[None, :])[:, 0]
    pm = permutation_pvalues_from_stats(T, T, rtol)
    po = permutation_pvalues_from_stats(T, obs_stat, rtol)
    return po, (pm if keep else None), pm.min(axis=0)


def _perm_lattice(P: int, observed_included: bool) -> PValueLattice | None:
    if not observed_included:
        return None
    return PValueLattice(np.arange(1, P + 1) / P)


def shared_sweep(W: DataMatrix, statistic, plan: PermutationPlan, keep: bool = True,
                 rtol: float | None = None, workers: int = 1) -> Sweep:
    """Marginal permutation p-values and the min-p distribution from one sweep.

    ``statistic`` is ``"abs_t"``, ``"abs_spearman"``, ``"abs_rank_sum"`` or a
    callable ``(features, codes) -> (m, P)`` where larger means more extreme.
    The permuted p-value of hypothesis ``j`` under plan element ``g`` is the
    fraction of plan elements whose statistic is at least the one at ``g``.
    """
    fn, rtol = _resolve_statistic(statistic, rtol)
    draws = response_draws(W, plan, workers)
    P = draws.size
    if P == 0:
        raise InputError("plan is empty")
    X = W.features
    obs_codes = W.response_codes()

    def run(chunk):
        a, b = chunk
        return _stat_chunk(X[a:b], draws.codes, obs_codes, fn, rtol, draws.observed_index, keep)

    results = _map_chunks(run, _row_chunks(W.m), workers)
    return _assemble(results, W.m, P, keep, plan, _perm_lattice(P, draws.observed_index is not None))


# --------------------------------------------------------------------------
# per-test sweeps
# --------------------------------------------------------------------------


def _wilcoxon_sweep(W, test, plan, keep, workers) -> Sweep:
    n0, n1 = W.group_sizes()
    X = np.asarray(W.features, dtype=float)
    tied = _has_ties(X)
    if tied.any() and test.ties == "strict":
        rows = np.flatnonzero(tied)
        raise PreconditionError(
            f"ties in feature rows {rows[:10].tolist()}{'...' if rows.size > 10 else ''}; "
            "exact Wilcoxon needs tie-free data (use ties='permissive')"
        )
    draws = response_draws(W, plan, workers)
    P = draws.size
    if P == 0:
        raise InputError("plan is empty")
    table = wilcoxon_pvalue_table(n0, n1)
    obs_codes = W.response_codes()[None, :]

    def run(chunk):
        a, b = chunk
        ranks = rankdata(X[a:b], axis=1)
        pm = table[rank_sum_u(ranks, draws.codes)]
        po = table[rank_sum_u(ranks, obs_codes)[:, 0]]
        tied_here = tied[a:b]
        if tied_here.any():
            # permissive: permutation t-test on mid-ranks for tied rows
            sub = _stat_chunk(ranks[tied_here], draws.codes, obs_codes[0], abs_t_statistics,
                              STAT_RTOL, draws.observed_index, True)
            po[tied_here] = sub[0]
            pm[tied_here] = sub[1]
        return po, (pm if keep else None), pm.min(axis=0)

    results = _map_chunks(run, _row_chunks(W.m), workers)
    lattice = rank_sum_lattice(n0, n1)
    if tied.any():
        extra = _perm_lattice(P, draws.observed_index is not None)
        lattice = lattice.union(extra) if extra is not None else None
    return _assemble(results, W.m, P, keep, plan, lattice)


def _category_codes(row) -> tuple[np.ndarray, int]:
    levels, codes = np.unique(np.asarray(row), return_inverse=True)
    return codes.astype(np.int64), levels.size


def _fisher_sweep(W, test, plan, keep, workers) -> Sweep:
    draws = response_draws(W, plan, workers)
    P = draws.size
    if P == 0:
        raise InputError("plan is empty")
    y = W.response_codes()
    ky = int(y.max()) + 1
    observed = np.empty(W.m)
    permuted = np.empty((W.m, P)) if keep else None
    minp = np.ones(P)
    lattice_parts = []
    for j in range(W.m):
        x, kx = _category_codes(W.features[j])
        hyp = FisherHypothesis(x, kx, ky, y, test)
        pj = hyp.pvalues(draws.codes)
        observed[j] = hyp.pvalues(y[None, :])[0]
        if keep:
            permuted[j] = pj
        np.minimum(minp, pj, out=minp)
        lattice_parts.append(hyp.lattice_values)
    lattice = None
    if all(v is not None for v in lattice_parts):
        lattice = PValueLattice.from_values(np.concatenate(lattice_parts))
    return Sweep(observed, permuted, MinPDistribution(minp, plan), lattice)


def sweep(W: DataMatrix, test: MarginalTest, plan: PermutationPlan, keep: bool = True,
          workers: int = 1) -> Sweep:
    """Observed and permuted marginal p-values of ``W`` under ``test`` over ``plan``."""
    test.check(W)
    if test.kind == "wilcoxon":
        return _wilcoxon_sweep(W, test, plan, keep, workers)
    if test.kind == "permutation_t":
        return shared_sweep(W, "abs_t", plan, keep, workers=workers)
    if test.kind == "spearman":
        return shared_sweep(W, "abs_spearman", plan, keep, workers=workers)
    return _fisher_sweep(W, test, plan, keep, workers)


def minp_distribution(W: DataMatrix, test: MarginalTest, plan: PermutationPlan,
                      scope=None, workers: int = 1) -> MinPDistribution:
    """Distribution of ``min_j p_j(gW)`` over the plan, optionally over a subset of hypotheses."""
    if scope is not None:
        scope = tuple(int(i) for i in scope)
        W = W.subset(list(scope))
    s = sweep(W, test, plan, keep=False, workers=workers)
    return MinPDistribution(s.minp.samples, plan, scope)


# --------------------------------------------------------------------------
# thresholds and adjusted p-values
# --------------------------------------------------------------------------


def wy_threshold(dist: MinPDistribution, lattice, alpha: float) -> float:
    """Largest candidate ``s`` whose min-p CDF is at most ``alpha``; 0 if none qualifies.

    ``lattice`` is a :class:`PValueLattice`, an array of candidate values, or
    ``None`` to fall back to the min-p samples themselves.
    """
    if isinstance(lattice, PValueLattice):
        cand = lattice.values
    elif lattice is None:
        cand = np.unique(dist.samples)
    else:
        cand = np.unique(np.asarray(lattice, dtype=float))
    ok = _level_ok(dist.counts(cand), dist.size, alpha)
    return float(cand[ok].max()) if ok.any() else 0.0


def single_step(raw, dist: MinPDistribution, lattice, alpha: float,
                method: str = "wy_single_step") -> AdjustmentResult:
    """Single-step adjustment of ``raw`` against a min-p distribution."""
    raw = np.asarray(raw, dtype=float)
    counts = dist.counts(raw)
    adjusted = counts / dist.size
    if lattice is None:
        lattice = np.union1d(dist.samples, raw)
    threshold = wy_threshold(dist, lattice, alpha)
    reject = np.flatnonzero(_level_ok(counts, dist.size, alpha))
    return AdjustmentResult(raw, adjusted, threshold, reject, method, alpha)


def step_down(raw, permuted: np.ndarray, alpha: float,
              method: str = "wy_step_down") -> AdjustmentResult:
    """Free step-down min-p adjustment from an (m x P) matrix of null p-values.

    With raw p-values sorted ascending, the ``k``-th adjusted value is the
    fraction of columns whose min over hypotheses ranked ``k`` or later is at
    most ``p_(k)``, made monotone by a running maximum.
    """
    raw = np.asarray(raw, dtype=float)
    m, P = permuted.shape
    order = np.argsort(raw, kind="stable")
    tail_min = permuted[order][::-1]
    np.minimum.accumulate(tail_min, axis=0, out=tail_min)
    tail_min = tail_min[::-1]
    counts_sorted = np.count_nonzero(tail_min <= raw[order][:, None], axis=1)
    counts_sorted = np.maximum.accumulate(counts_sorted)
    counts = np.empty(m, dtype=np.int64)
    counts[order] = counts_sorted
    adjusted = counts / P
    reject = np.flatnonzero(_level_ok(counts, P, alpha))
    threshold = float(raw[reject].max()) if reject.size else 0.0
    return AdjustmentResult(raw, adjusted, threshold, reject, method, alpha)


def wy_adjusted_pvalues(W: DataMatrix, test: MarginalTest, plan: PermutationPlan,
                        alpha: float = 0.05, workers: int = 1) -> AdjustmentResult:
    """Single-step Westfall-Young: ``adjusted_j = P*(min_k p_k <= p_j(W))``."""
    _check_alpha(alpha)
    s = sweep(W, test, plan, keep=False, workers=workers)
    return single_step(s.observed, s.minp, s.lattice, alpha)


def wy_stepdown(W: DataMatrix, test: MarginalTest, plan: PermutationPlan,
                alpha: float = 0.05, workers: int = 1) -> AdjustmentResult:
    _check_alpha(alpha)
    s = sweep(W, test, plan, keep=True, workers=workers)
    return step_down(s.observed, s.permuted, alpha)


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha <= 1:
        raise InputError(f"alpha must lie in (0, 1], got {alpha}")
