"""Westfall-Young permutation multiple testing with exact marginal tests."""

from .core import (
    DataMatrix,
    HypothesisPartition,
    InputError,
    PermutationPlan,
    PreconditionError,
    PValueLattice,
    WYError,
    enumerate_assignments,
    permute_response,
    read_data,
    sample_permutations,
)
from .engine import (
    AdjustmentResult,
    MinPDistribution,
    minp_distribution,
    shared_sweep,
    wy_adjusted_pvalues,
    wy_stepdown,
    wy_threshold,
)
from .marginal import (
    MarginalTest,
    fisher_exact_pvalue,
    partition_count,
    permutation_t_pvalue,
    spearman_pvalue,
    wilcoxon_lattice,
    wilcoxon_pvalue,
)
from .oracle import (
    OracleEstimate,
    bonferroni_threshold,
    effective_level,
    holm_reject,
    min_sample_size,
    oracle_threshold_mc,
    perfect_block_threshold,
)
from .simulate import SimulationScenario, apply_shift, sample_block, sample_toeplitz

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
