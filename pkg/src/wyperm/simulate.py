"""Gaussian two-sample location-shift scenarios with known truth.

Correlated noise is generated without a Cholesky factor: the Toeplitz model
``corr(Z_i, Z_j) = rho**|i-j|`` is an AR(1) recursion down the hypothesis
axis, and the block model is a one-factor model per block. Both cost O(m n).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DataMatrix, HypothesisPartition, InputError

STRUCTURES = ("toeplitz", "block", "independent", "perfect_block")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_rho(rho: float) -> None:
    if not 0.0 <= rho < 1.0:
        raise InputError(f"rho must lie in [0, 1), got {rho}")


def sample_toeplitz(m: int, n: int, rho: float, seed=None, size: tuple = ()) -> np.ndarray:
    """Noise of shape ``size + (m, n)``; each column is a stationary AR(1) path over rows."""
    _check_rho(rho)
    rng = _rng(seed)
    eps = rng.standard_normal(size + (m, n))
    if rho == 0.0:
        return eps
    scale = math.sqrt(1.0 - rho * rho)
    z = eps
    for j in range(1, m):
        z[..., j, :] = rho * z[..., j - 1, :] + scale * eps[..., j, :]
    return z


def block_index(m: int, block_size: int) -> np.ndarray:
    return np.arange(m) // block_size


def sample_block(m: int, n: int, rho: float, block_size: int, seed=None,
                 size: tuple = ()) -> np.ndarray:
    """``Z_j = sqrt(rho) F_b + sqrt(1 - rho) eps_j`` for rows ``j`` in block ``b``.

    Blocks are consecutive runs of ``block_size`` rows (the last may be shorter).
    """
    _check_rho(rho)
    if block_size < 1:
        raise InputError("block_size must be >= 1")
    rng = _rng(seed)
    n_blocks = -(-m // block_size)
    factors = rng.standard_normal(size + (n_blocks, n))
    eps = rng.standard_normal(size + (m, n))
    if block_size == 1:
        return eps
    idx = block_index(m, block_size)
    return math.sqrt(rho) * factors[..., idx, :] + math.sqrt(1.0 - rho) * eps


def sample_perfect_block(m: int, n: int, block_size: int, seed=None, size: tuple = ()) -> np.ndarray:
    """Each block is one standard normal row repeated ``block_size`` times."""
    rng = _rng(seed)
    n_blocks = -(-m // block_size)
    base = rng.standard_normal(size + (n_blocks, n))
    return base[..., block_index(m, block_size), :]


def apply_shift(features: np.ndarray, response, alternatives, delta: float) -> np.ndarray:
    """Add ``delta`` to the alternative rows in the columns of the second label."""
    features = np.asarray(features, dtype=float)
    alternatives = np.asarray(list(alternatives), dtype=np.int64)
    m = features.shape[-2]
    if alternatives.size and (alternatives.min() < 0 or alternatives.max() >= m):
        raise InputError("alternative index out of range")
    out = features.copy()
    if alternatives.size == 0 or delta == 0:
        return out
    labels = np.unique(np.asarray(response))
    if labels.size != 2:
        raise InputError("apply_shift needs a two-label response")
    second = np.asarray(response) == labels[1]
    rows = out[..., alternatives, :]
    rows[..., second] += delta
    out[..., alternatives, :] = rows
    return out


@dataclass(frozen=True)
class SimulationScenario:
    """A data-generating distribution with a known set of alternatives.

    Alternatives are ``n_alternatives`` indices drawn without replacement from
    the first ``alternative_pool`` hypotheses, redrawn for every replicate
    unless ``redraw_alternatives`` is false or ``alternatives`` pins them.
    """

    m: int
    n1: int = 50
    n2: int = 50
    structure: str = "block"
    rho: float = 0.0
    block_size: int = 50
    n_alternatives: int = 10
    alternative_pool: int = 100
    alternatives: tuple[int, ...] | None = None
    shift: float = 0.75
    redraw_alternatives: bool = True
    seed: int = 0
    labels: tuple[str, str] = field(default=("1", "2"))

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise InputError(f"unknown structure {self.structure!r}")
        if self.m < 1 or self.n1 < 1 or self.n2 < 1:
            raise InputError("m, n1 and n2 must be positive")
        if self.structure in ("toeplitz", "block"):
            _check_rho(self.rho)
        if self.block_size < 1:
            raise InputError("block_size must be >= 1")
        if self.alternatives is not None:
            alts = tuple(sorted(int(i) for i in self.alternatives))
            if alts and (alts[0] < 0 or alts[-1] >= self.m):
                raise InputError("alternative index out of range")
            object.__setattr__(self, "alternatives", alts)
        elif self.n_alternatives > min(self.alternative_pool, self.m):
            raise InputError("more alternatives than the pool can supply")
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    def response(self) -> np.ndarray:
        return np.array([self.labels[0]] * self.n1 + [self.labels[1]] * self.n2)

    def blocks(self) -> tuple[tuple[int, ...], ...] | None:
        if self.structure in ("block", "perfect_block"):
            idx = block_index(self.m, self.block_size)
            return tuple(tuple(np.flatnonzero(idx == b).tolist()) for b in range(idx.max() + 1))
        if self.structure == "independent":
            return tuple((j,) for j in range(self.m))
        return None

    def draw_alternatives(self, rng: np.random.Generator) -> np.ndarray:
        if self.alternatives is not None:
            return np.array(self.alternatives, dtype=np.int64)
        pool = min(self.alternative_pool, self.m)
        return np.sort(rng.choice(pool, size=self.n_alternatives, replace=False))

    def replicate_rng(self, replicate: int, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream, replicate])

    def alternatives_for(self, replicate: int, stream: int = 0) -> np.ndarray:
        if not self.redraw_alternatives:
            replicate = 0
        return self.draw_alternatives(np.random.default_rng([self.seed, stream, replicate, 1]))

    def noise(self, rng, size: tuple = ()) -> np.ndarray:
        if self.structure == "toeplitz":
            return sample_toeplitz(self.m, self.n, self.rho, rng, size)
        if self.structure == "block":
            return sample_block(self.m, self.n, self.rho, self.block_size, rng, size)
        if self.structure == "perfect_block":
            return sample_perfect_block(self.m, self.n, self.block_size, rng, size)
        return _rng(rng).standard_normal(size + (self.m, self.n))

    def generate(self, replicate: int = 0, stream: int = 0) -> tuple[DataMatrix, np.ndarray]:
        """One dataset and its alternative indices, reproducible from ``(seed, stream, replicate)``."""
        alts = self.alternatives_for(replicate, stream)
        z = self.noise(self.replicate_rng(replicate, stream))
        y = self.response()
        x = apply_shift(z, y, alts, self.shift)
        return DataMatrix(y, x), alts

    def partition(self, alternatives) -> HypothesisPartition:
        blocks = self.blocks()
        alts = set(int(a) for a in alternatives)
        if blocks is not None:
            # blocks made only of alternatives carry no true null and are dropped
            # into the neighbouring block to keep the partition valid
            kept, pending = [], []
            for b in blocks:
                if set(b) - alts:
                    kept.append(tuple(pending) + b)
                    pending = []
                else:
                    pending.extend(b)
            if pending and kept:
                kept[-1] = kept[-1] + tuple(pending)
            blocks = tuple(kept) if kept else None
        return HypothesisPartition.from_alternatives(self.m, alts, blocks)

    def diagnostics(self, alternatives=None) -> dict:
        if alternatives is None:
            alternatives = self.alternatives_for(0)
        return self.partition(alternatives).diagnostics()

    def complete_null(self) -> "SimulationScenario":
        d = self.to_dict()
        d.update(alternatives=(), shift=0.0)
        return SimulationScenario.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = list(self.labels)
        if self.alternatives is not None:
            d["alternatives"] = list(self.alternatives)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationScenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown scenario fields: {sorted(unknown)}")
        d = dict(d)
        if d.get("alternatives") is not None:
            d["alternatives"] = tuple(d["alternatives"])
        if "labels" in d:
            d["labels"] = tuple(str(v) for v in d["labels"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(str(exc)) from None


def load_scenario(path) -> SimulationScenario:
    """Read a scenario from a JSON object with the :class:`SimulationScenario` fields."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: scenario must be a JSON object")
    return SimulationScenario.from_dict(data)


def null_pvalues(scenario: SimulationScenario, n_sims: int, seed: int = 0,
                 batch: int | None = None) -> np.ndarray:
    """Wilcoxon p-values (n_sims x m) of complete-null draws from ``scenario``.

    A null hypothesis's p-value depends only on its own row and the labels, so
    these rows also give the true-null p-values of any shifted version.
    """
    from .marginal import rank_sum_u, wilcoxon_pvalue_table
    from scipy.stats import rankdata

    table = wilcoxon_pvalue_table(scenario.n1, scenario.n2)
    codes = (np.arange(scenario.n) >= scenario.n1).astype(np.int64)[None, :]
    out = np.empty((n_sims, scenario.m))
    if batch is None:
        batch = max(1, min(n_sims, 2_000_000 // max(1, scenario.m * scenario.n)))
    rng = np.random.default_rng([seed, 0x5EED])
    for start in range(0, n_sims, batch):
        b = min(batch, n_sims - start)
        z = scenario.noise(rng, (b,))
        ranks = rankdata(z, axis=-1).reshape(b * scenario.m, scenario.n)
        out[start:start + b] = table[rank_sum_u(ranks, codes)[:, 0]].reshape(b, scenario.m)
    return out
