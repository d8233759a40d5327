"""Magnitude baseline: smallest |weight| per module, smallest |A_log| for the SSM."""

from src.calibration.runner import LayerCalibration
from src.core.tensor import NamedTensor
from src.mamba.layer import MambaLayer
from .base_pruner import BasePruner
from .ffn_pruner import PruneResult, prune_conv_magnitude, prune_linear_magnitude
from .ssm_pruner import ImportanceField, magnitude_field


class MagnitudePruner(BasePruner):
    method = "magnitude"

    def __init__(self, **_ignored):
        pass

    def ssm_field(self, layer: MambaLayer, calib: LayerCalibration) -> ImportanceField:
        return magnitude_field(layer.a_log)

    def prune_linear(self, weight: NamedTensor, gram, sparsity: float) -> PruneResult:
        return prune_linear_magnitude(weight, sparsity, gram)

    def prune_conv(self, weight: NamedTensor, gram, sparsity: float) -> PruneResult:
        return prune_conv_magnitude(weight, sparsity, gram)
