"""Pruning method interface and the second-order SparseSSM method."""

import concurrent.futures
import logging
from abc import ABC, abstractmethod
from typing import Dict, Tuple

from src.calibration.runner import CONV_MODULE, LINEAR_MODULES, LayerCalibration, module_name
from src.core.tensor import NamedTensor
from src.errors import ArgumentError, StateError
from src.mamba.layer import MambaLayer
from utils import defaults
from .allocation import SparsityPlan
from .ffn_pruner import PruneResult, prune_conv_as_linear, prune_linear_obs
from .ssm_pruner import (
    COLUMN,
    ImportanceField,
    Pattern,
    PruneMask,
    apply_mask,
    full_field,
    importance_simplified,
    prune_columns_with_mask,
    select_mask,
)

logger = logging.getLogger(__name__)

SCORE_MODES = ("simplified", "full")

# parameter attribute on MambaLayer for each prunable module
MODULE_ATTRS = {
    "in_proj": "in_proj",
    "conv1d": "conv_weight",
    "x_proj": "x_proj",
    "dt_proj": "dt_proj",
    "out_proj": "out_proj",
}
FFN_MODULES = ("in_proj", CONV_MODULE) + LINEAR_MODULES[1:]


class BasePruner(ABC):
    """A pruning method: an SSM importance field plus a per-module FFN rule.

    Concrete methods only decide how entries are scored and how a single
    weight matrix is pruned; mask patterns, budgets and the order of work
    are shared.
    """

    method: str = ""

    @classmethod
    def from_method(cls, name: str, **options) -> "BasePruner":
        """Create a pruner from its CLI name (`sparsessm` or `magnitude`)."""
        from .magnitude import MagnitudePruner

        registry = {SparseSSMPruner.method: SparseSSMPruner, MagnitudePruner.method: MagnitudePruner}
        if name not in registry:
            raise ArgumentError(f"unknown pruning method {name!r}; expected one of {sorted(registry)}")
        return registry[name](**options)

    @abstractmethod
    def ssm_field(self, layer: MambaLayer, calib: LayerCalibration) -> ImportanceField:
        """Importance of every A_log entry of `layer`."""

    @abstractmethod
    def prune_linear(self, weight: NamedTensor, gram, sparsity: float) -> PruneResult:
        """Prune one rows×k weight given its input Gram."""

    @abstractmethod
    def prune_conv(self, weight: NamedTensor, gram, sparsity: float) -> PruneResult:
        """Prune a depthwise kernel given per-channel Grams."""

    def prune_ssm_layer(self, layer: MambaLayer, calib: LayerCalibration, sparsity: float,
                        pattern: Pattern, aggregation: str = "frequency") -> Tuple[MambaLayer, PruneMask]:
        field = self.ssm_field(layer, calib)
        if pattern.kind == COLUMN:
            return prune_columns_with_mask(layer, field, sparsity)
        mask = select_mask(field, sparsity, pattern, aggregation)
        return apply_mask(layer, mask), mask

    def prune_ffn_layer(self, layer: MambaLayer, calib: LayerCalibration, plan: SparsityPlan,
                        threads: int = 1) -> Tuple[MambaLayer, Dict[str, PruneResult]]:
        """Prune every FFN module of one layer at the sparsity the plan assigns it."""

        def one(module: str) -> Tuple[str, PruneResult]:
            name = module_name(layer.index, module)
            weight = getattr(layer, MODULE_ATTRS[module])
            gram = calib.grams[name]
            sparsity = plan.sparsity_for(name)
            if module == CONV_MODULE:
                return module, self.prune_conv(weight, gram, sparsity)
            return module, self.prune_linear(weight, gram, sparsity)

        if threads > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
                results = dict(pool.map(one, FFN_MODULES))
        else:
            results = dict(one(m) for m in FFN_MODULES)

        pruned = layer.replace(**{MODULE_ATTRS[m]: results[m].weight for m in FFN_MODULES})
        return pruned, {module_name(layer.index, m): results[m] for m in FFN_MODULES}


class SparseSSMPruner(BasePruner):
    """Second-order A_log importance with OBS pruning of the FFN modules."""

    method = "sparsessm"

    def __init__(self, score: str = "simplified", blocksize: int = defaults.BLOCKSIZE,
                 percdamp: float = defaults.PERCDAMP):
        if score not in SCORE_MODES:
            raise ArgumentError(f"score must be one of {SCORE_MODES}, got {score!r}")
        self.score = score
        self.blocksize = blocksize
        self.percdamp = percdamp

    def ssm_field(self, layer: MambaLayer, calib: LayerCalibration) -> ImportanceField:
        if self.score == "full":
            if calib.full is None:
                raise StateError(f"layer {layer.index}: full score requested but not accumulated")
            return full_field(layer.a_log, calib.full)
        return importance_simplified(layer.a_log, calib.stats)

    def prune_linear(self, weight: NamedTensor, gram, sparsity: float) -> PruneResult:
        return prune_linear_obs(weight, gram, sparsity, self.blocksize, self.percdamp)

    def prune_conv(self, weight: NamedTensor, gram, sparsity: float) -> PruneResult:
        return prune_conv_as_linear(weight, gram, sparsity, self.blocksize, self.percdamp)
