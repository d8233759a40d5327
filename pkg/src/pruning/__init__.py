"""SSM and FFN pruning methods."""

from .allocation import SparsityPlan, allocate_sparsity, sensitivity_scores
from .base_pruner import BasePruner, SparseSSMPruner
from .ffn_pruner import (
    GramAccumulator,
    PruneResult,
    accumulate_gram,
    prune_conv_as_linear,
    prune_linear_magnitude,
    prune_linear_obs,
    row_budgets,
)
from .magnitude import MagnitudePruner
from .ssm_pruner import (
    ImportanceField,
    PruneMask,
    apply_mask,
    importance_full,
    importance_simplified,
    magnitude_field,
    obs_saliency_diag,
    parse_pattern,
    prune_columns_structured,
    prune_columns_with_mask,
    select_mask_l2,
    select_mask_nm,
    select_mask_time_frequency,
)

__all__ = [
    "SparsityPlan",
    "allocate_sparsity",
    "sensitivity_scores",
    "BasePruner",
    "SparseSSMPruner",
    "MagnitudePruner",
    "GramAccumulator",
    "PruneResult",
    "accumulate_gram",
    "prune_conv_as_linear",
    "prune_linear_magnitude",
    "prune_linear_obs",
    "row_budgets",
    "ImportanceField",
    "PruneMask",
    "apply_mask",
    "importance_full",
    "importance_simplified",
    "magnitude_field",
    "obs_saliency_diag",
    "parse_pattern",
    "prune_columns_structured",
    "prune_columns_with_mask",
    "select_mask_l2",
    "select_mask_nm",
    "select_mask_time_frequency",
]
