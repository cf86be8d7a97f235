"""Data matrix, permutation plans and p-value lattices.

Everything here is immutable after construction so the same objects can be
handed to several worker threads without copying.
"""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, NamedTuple, Sequence

import numpy as np

EXHAUSTIVE_BUDGET = 2_000_000
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "?"})


class WYError(Exception):
    """Base class for errors raised by this package."""


class InputError(WYError, ValueError):
    """Malformed input data or configuration (CLI exit code 2)."""


class PreconditionError(WYError, ValueError):
    """A test precondition does not hold for the data (CLI exit code 3)."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def _is_numeric(a: np.ndarray) -> bool:
    return a.dtype.kind in "iuf"


@dataclass(frozen=True)
class DataMatrix:
    """One response row plus ``m`` feature rows over ``n`` samples.

    ``categorical`` controls whether the response is treated as labels; by
    default strings, booleans and numeric rows with exactly two distinct values
    are labels and other numeric rows are values.
    """

    response: np.ndarray
    features: np.ndarray
    categorical: bool | None = None

    def __post_init__(self):
        response = np.asarray(self.response)
        features = np.asarray(self.features)
        if response.ndim != 1:
            raise InputError("response must be one-dimensional")
        if features.ndim == 1:
            features = features[None, :]
        if features.ndim != 2:
            raise InputError("features must be a 2-d array (m x n)")
        if features.shape[1] != response.shape[0]:
            raise InputError(
                f"every feature row needs {response.shape[0]} entries, "
                f"got {features.shape[1]}"
            )
        if response.shape[0] < 2:
            raise InputError("need at least two samples")
        if features.shape[0] < 1:
            raise InputError("need at least one feature row")
        categorical = self.categorical
        if categorical is None:
            categorical = not _is_numeric(response) or np.unique(response).size == 2
        object.__setattr__(self, "response", _frozen(response))
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "categorical", bool(categorical))

    @property
    def n(self) -> int:
        return self.response.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return np.unique(self.response)

    @property
    def is_two_sample(self) -> bool:
        return len(self.labels) == 2

    def response_codes(self) -> np.ndarray:
        """Integer label codes for categorical responses, values otherwise."""
        if self.categorical:
            return np.unique(self.response, return_inverse=True)[1].astype(np.int64)
        return self.response.astype(float)

    def group_sizes(self) -> tuple[int, int]:
        if not self.is_two_sample:
            raise PreconditionError(
                f"two-sample test needs exactly two response labels, got {len(self.labels)}"
            )
        codes = self.response_codes()
        n0 = int(np.sum(codes == 0))
        return n0, self.n - n0

    def with_response(self, response) -> "DataMatrix":
        return DataMatrix(np.asarray(response), self.features, self.categorical)

    def subset(self, rows) -> "DataMatrix":
        return DataMatrix(self.response, self.features[np.asarray(rows)], self.categorical)


def permute_response(W: DataMatrix, g) -> DataMatrix:
    """Return ``gW``: the response reordered as ``response[g]``, features untouched."""
    g = np.asarray(g)
    if g.shape != (W.n,):
        raise InputError(f"permutation has length {g.size}, data has n={W.n}")
    if not np.array_equal(np.sort(g), np.arange(W.n)):
        raise InputError("g is not a permutation of 0..n-1")
    return W.with_response(W.response[g])


def enumerate_assignments(n: int, n1: int) -> np.ndarray:
    """All ``C(n, n1)`` ways of marking ``n1`` of ``n`` positions, lexicographic.

    Row ``k`` is a boolean mask with ``True`` at the marked positions.
    """
    if not 0 < n1 < n:
        raise InputError(f"need 0 < n1 < n, got n={n}, n1={n1}")
    total = math.comb(n, n1)
    if total > EXHAUSTIVE_BUDGET:
        raise InputError(f"C({n},{n1}) = {total} assignments exceeds the exhaustive budget")
    out = np.zeros((total, n), dtype=bool)
    for k, pos in enumerate(itertools.combinations(range(n), n1)):
        out[k, pos] = True
    return out


def _distinct_arrangements(codes: Sequence) -> Iterator[tuple]:
    """Distinct permutations of a multiset in lexicographic order of its sorted values."""
    counts = Counter(codes)
    values = sorted(counts)
    n = len(codes)
    current: list = []

    def rec():
        if len(current) == n:
            yield tuple(current)
            return
        for v in values:
            if counts[v]:
                counts[v] -= 1
                current.append(v)
                yield from rec()
                current.pop()
                counts[v] += 1

    yield from rec()


def count_arrangements(codes: Sequence) -> int:
    total = math.factorial(len(codes))
    for c in Counter(codes).values():
        total //= math.factorial(c)
    return total


@dataclass(frozen=True)
class PermutationPlan:
    """How the permutation group is traversed.

    ``exhaustive`` visits every distinct rearrangement of the response once
    (for a two-label response these are the ``C(n, n1)`` label assignments).
    ``sampled`` draws ``count`` uniform permutations; permutation ``k`` comes
    from a Philox stream keyed by ``seed`` with counter block ``k``, so the
    sequence does not depend on how the index range is split across workers.
    """

    mode: str = "sampled"
    count: int = 1000
    seed: int = 0
    include_identity: bool = True

    def __post_init__(self):
        if self.mode not in ("sampled", "exhaustive"):
            raise InputError(f"unknown plan mode {self.mode!r}")
        if self.mode == "sampled" and self.count < (0 if self.include_identity else 1):
            raise InputError("sampled plan needs count >= 1")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")

    @classmethod
    def exhaustive(cls) -> "PermutationPlan":
        return cls(mode="exhaustive", count=0)

    @classmethod
    def identity_only(cls) -> "PermutationPlan":
        """A degenerate plan holding just the observed labelling."""
        return cls(mode="sampled", count=0, include_identity=True)

    @property
    def size(self) -> int | None:
        """Number of plan elements; ``None`` for exhaustive plans (data dependent)."""
        if self.mode == "exhaustive":
            return None
        return self.count + int(self.include_identity)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "count": self.count,
            "seed": self.seed,
            "include_identity": self.include_identity,
        }


def _philox_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def _permutation_block(key: np.ndarray, n: int, start: int, stop: int) -> np.ndarray:
    out = np.empty((stop - start, n), dtype=np.int64)
    for row, k in enumerate(range(start, stop)):
        bitgen = np.random.Philox(key=key, counter=[0, 0, k, 0])
        out[row] = np.random.Generator(bitgen).permutation(n)
    return out


def sample_permutations(plan: PermutationPlan, n: int, workers: int = 1) -> np.ndarray:
    """Permutations of ``range(n)`` as rows of an integer array.

    Sampled plans yield ``count`` random rows, preceded by the identity when
    ``include_identity`` is set. Exhaustive plans yield all ``n!`` rows.
    """
    if plan.mode == "exhaustive":
        if math.factorial(n) > EXHAUSTIVE_BUDGET:
            raise InputError(f"{n}! permutations exceeds the exhaustive budget")
        return np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)
    key = _philox_key(plan.seed)
    workers = max(1, int(workers))
    edges = np.linspace(0, plan.count, workers + 1).astype(int)
    spans = [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    if workers == 1 or len(spans) <= 1:
        blocks = [_permutation_block(key, n, a, b) for a, b in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda ab: _permutation_block(key, n, *ab), spans))
    if plan.include_identity:
        blocks.insert(0, np.arange(n, dtype=np.int64)[None, :])
    if not blocks:
        return np.empty((0, n), dtype=np.int64)
    return np.concatenate(blocks, axis=0)


class Draws(NamedTuple):
    """Permuted response codes, one row per element of the plan."""

    codes: np.ndarray
    observed_index: int | None

    @property
    def size(self) -> int:
        return self.codes.shape[0]


def response_draws(W: DataMatrix, plan: PermutationPlan, workers: int = 1) -> Draws:
    """Apply every permutation of ``plan`` to the response codes of ``W``."""
    codes = W.response_codes()
    if plan.mode == "sampled":
        perms = sample_permutations(plan, W.n, workers)
        return Draws(codes[perms], 0 if plan.include_identity else None)
    if W.categorical and W.is_two_sample:
        n0 = int(np.sum(codes == 0))
        assign = enumerate_assignments(W.n, n0)
        rows = np.where(assign, 0, 1).astype(np.int64)
    else:
        total = count_arrangements(codes.tolist())
        if total > EXHAUSTIVE_BUDGET:
            raise InputError(f"{total} distinct arrangements exceeds the exhaustive budget")
        rows = np.array(list(_distinct_arrangements(codes.tolist())), dtype=codes.dtype)
    observed = int(np.flatnonzero(np.all(rows == codes, axis=1))[0])
    return Draws(rows, observed)


@dataclass(frozen=True, eq=False)
class PValueLattice:
    """Sorted distinct attainable p-values; ``exact`` keeps rationals when known."""

    values: np.ndarray
    exact: tuple[Fraction, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise InputError("lattice needs at least one value")
        if np.any(np.diff(v) <= 0):
            raise InputError("lattice values must be strictly increasing")
        if v[0] <= 0 or v[-1] != 1.0:
            raise InputError("lattice values must lie in (0, 1] with maximum 1")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_fractions(cls, fracs) -> "PValueLattice":
        exact = tuple(sorted(set(Fraction(f) for f in fracs)))
        return cls(np.array([float(f) for f in exact]), exact)

    @classmethod
    def from_values(cls, values) -> "PValueLattice":
        v = np.unique(np.asarray(values, dtype=float))
        v = v[v > 0]
        if v.size == 0 or v[-1] != 1.0:
            v = np.append(v[v < 1.0], 1.0)
        return cls(v)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, PValueLattice):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None

    @property
    def min(self) -> float:
        return float(self.values[0])

    def bracket(self, x: float) -> tuple[float, float]:
        """Adjacent lattice values ``lo <= x < hi`` (``lo`` is 0 below the lattice)."""
        i = int(np.searchsorted(self.values, x, side="right"))
        lo = 0.0 if i == 0 else float(self.values[i - 1])
        hi = float(self.values[min(i, self.values.size - 1)])
        return lo, hi

    def union(self, other: "PValueLattice") -> "PValueLattice":
        return PValueLattice(np.union1d(self.values, other.values))


@dataclass(frozen=True)
class HypothesisPartition:
    """True nulls, alternatives and an optional block structure over ``range(m)``."""

    m: int
    true_nulls: frozenset[int]
    alternatives: frozenset[int]
    blocks: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        nulls = frozenset(int(i) for i in self.true_nulls)
        alts = frozenset(int(i) for i in self.alternatives)
        universe = frozenset(range(self.m))
        if nulls & alts or (nulls | alts) != universe:
            raise InputError("true nulls and alternatives must partition range(m)")
        object.__setattr__(self, "true_nulls", nulls)
        object.__setattr__(self, "alternatives", alts)
        if self.blocks is not None:
            blocks = tuple(tuple(int(i) for i in b) for b in self.blocks)
            flat = [i for b in blocks for i in b]
            if len(flat) != len(set(flat)) or set(flat) != universe:
                raise InputError("blocks must partition range(m)")
            if any(not (set(b) & nulls) for b in blocks):
                raise InputError("every block needs at least one true null")
            object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_alternatives(cls, m: int, alternatives, blocks=None) -> "HypothesisPartition":
        alts = frozenset(int(i) for i in alternatives)
        return cls(m, frozenset(range(m)) - alts, alts, blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks) if self.blocks is not None else self.m

    @property
    def max_block_size(self) -> int:
        return max(len(b) for b in self.blocks) if self.blocks is not None else 1

    def null_mask(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        mask[list(self.true_nulls)] = True
        return mask

    def diagnostics(self) -> dict:
        """Sparsity ratio |I'|/B and block-size ratio m_B/sqrt(B)."""
        B = self.n_blocks
        return {
            "n_blocks": B,
            "max_block_size": self.max_block_size,
            "sparsity_ratio": len(self.alternatives) / B,
            "block_size_ratio": self.max_block_size / math.sqrt(B),
        }


def read_data(path, header: bool = False, categorical: bool | None = None,
              categorical_features: bool = False) -> DataMatrix:
    """Load a delimited file: first row is the response, each further row a feature.

    The delimiter (comma or tab) is detected from the first line. With
    ``header`` the first line is skipped as column names. A missing cell raises
    :class:`InputError` naming its 1-based row and column.
    """
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if header:
        lines = lines[1:]
    if len(lines) < 2:
        raise InputError(f"{path}: need a response row and at least one feature row")
    delim = "\t" if "\t" in lines[0] else ","
    rows = [[c.strip() for c in r] for r in csv.reader(lines, delimiter=delim)]
    width = len(rows[0])
    offset = 2 if header else 1
    for r, row in enumerate(rows):
        if len(row) != width:
            raise InputError(f"{path}: row {r + offset} has {len(row)} columns, expected {width}")
        for c, cell in enumerate(row):
            if cell.lower() in MISSING_TOKENS:
                raise InputError(f"{path}: missing value at row {r + offset}, column {c + 1}")

    def convert(row, as_labels):
        if as_labels:
            return np.array(row, dtype=object)
        try:
            return np.array([float(x) for x in row])
        except ValueError:
            return None

    response = convert(rows[0], categorical is True)
    if response is None:
        if categorical is False:
            raise InputError(f"{path}: response row is not numeric")
        response = np.array(rows[0], dtype=object)
    feats = []
    for r, row in enumerate(rows[1:]):
        vals = convert(row, categorical_features)
        if vals is None:
            raise InputError(f"{path}: feature row {r + offset + 1} is not numeric")
        feats.append(vals)
    features = np.array(feats, dtype=object if categorical_features else float)
    if response.dtype == object:
        response = response.astype(str)
    return DataMatrix(response, features, categorical)
