"""Parameter bundles for a Mamba block and a Mamba language model."""

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from src.core.tensor import NamedTensor
from src.errors import ArgumentError, DimensionError
from .config import MambaConfig

# module name -> parameter attribute, in serialization order
LAYER_PARAMS: Tuple[Tuple[str, str], ...] = (
    ("in_proj.weight", "in_proj"),
    ("conv1d.weight", "conv_weight"),
    ("conv1d.bias", "conv_bias"),
    ("x_proj.weight", "x_proj"),
    ("dt_proj.weight", "dt_proj"),
    ("dt_proj.bias", "dt_bias"),
    ("out_proj.weight", "out_proj"),
    ("ssm.A_log", "a_log"),
    ("ssm.D", "d_skip"),
)


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def silu(z: np.ndarray) -> np.ndarray:
    return z * expit(z)


@dataclass(frozen=True)
class SelectiveInputs:
    """Input-dependent SSM parameters θ = (δ, B, C) for one scan input x.

    Shapes: x and delta B×L×D, b and c B×L×N, dt_low B×L×dt_rank.
    """

    x: np.ndarray
    delta: np.ndarray
    b: np.ndarray
    c: np.ndarray
    dt_low: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        bsz, length, d = self.x.shape
        return bsz, length, d, self.b.shape[-1]

    def check(self) -> None:
        bsz, length, d, n = self.shape
        if self.delta.shape != (bsz, length, d):
            raise DimensionError(f"delta shape {self.delta.shape} != {(bsz, length, d)}")
        if self.b.shape != (bsz, length, n) or self.c.shape != (bsz, length, n):
            raise DimensionError(f"B/C shapes {self.b.shape}/{self.c.shape} != {(bsz, length, n)}")


@dataclass(frozen=True)
class MambaLayer:
    """Weights of one Mamba block.

    a_log is D×N (the pruning target), conv_weight D×d_conv, in_proj
    2D×d_model, x_proj (dt_rank+2N)×D, dt_proj D×dt_rank, out_proj d_model×D,
    and the vectors conv_bias, dt_bias, d_skip have length D. N may be
    smaller than the model's d_state after structured compaction.
    """

    index: int
    in_proj: NamedTensor
    conv_weight: NamedTensor
    conv_bias: NamedTensor
    x_proj: NamedTensor
    dt_proj: NamedTensor
    dt_bias: NamedTensor
    out_proj: NamedTensor
    a_log: NamedTensor
    d_skip: NamedTensor

    def __post_init__(self):
        self.validate()

    @property
    def d_inner(self) -> int:
        return self.a_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.a_log.shape[1]

    @property
    def d_model(self) -> int:
        return self.in_proj.shape[1]

    @property
    def d_conv(self) -> int:
        return self.conv_weight.shape[1]

    @property
    def dt_rank(self) -> int:
        return self.dt_proj.shape[1]

    def validate(self) -> None:
        if len(self.a_log.shape) != 2:
            raise DimensionError(f"layer {self.index}: A_log must be D×N, got {self.a_log.shape}")
        d, n = self.a_log.shape
        expected = {
            "in_proj": (2 * d, self.in_proj.shape[1] if len(self.in_proj.shape) == 2 else -1),
            "conv_weight": (d, self.conv_weight.shape[-1]),
            "conv_bias": (d,),
            "x_proj": (self.dt_proj.shape[-1] + 2 * n, d),
            "dt_proj": (d, self.dt_proj.shape[-1]),
            "dt_bias": (d,),
            "out_proj": (self.out_proj.shape[0], d),
            "d_skip": (d,),
        }
        for attr, shape in expected.items():
            actual = getattr(self, attr).shape
            if actual != shape:
                raise DimensionError(f"layer {self.index}: {attr} shape {actual} != expected {shape}")
        if self.out_proj.shape[0] != self.in_proj.shape[1]:
            raise DimensionError(
                f"layer {self.index}: out_proj rows {self.out_proj.shape[0]} != d_model {self.in_proj.shape[1]}"
            )

    def tensors(self) -> Dict[str, NamedTensor]:
        return {f"layers.{self.index}.{key}": getattr(self, attr) for key, attr in LAYER_PARAMS}

    def replace(self, **changes: NamedTensor) -> "MambaLayer":
        """Copy with some parameters swapped; names are preserved."""
        renamed = {}
        for attr, tensor in changes.items():
            renamed[attr] = tensor.renamed(getattr(self, attr).name)
        return replace(self, **renamed)

    def project(self, x: np.ndarray) -> SelectiveInputs:
        """Compute θ = (δ, B, C) from the scan input x (B×L×D)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[-1] != self.d_inner:
            raise DimensionError(f"layer {self.index}: scan input must be B×L×{self.d_inner}, got {x.shape}")
        r, n = self.dt_rank, self.d_state
        x_dbl = x @ self.x_proj.data.T
        dt_low = x_dbl[..., :r]
        b = x_dbl[..., r:r + n]
        c = x_dbl[..., r + n:r + 2 * n]
        delta = softplus(dt_low @ self.dt_proj.data.T + self.dt_bias.data)
        return SelectiveInputs(x=x, delta=delta, b=b, c=c, dt_low=dt_low)


def layer_from_tensors(index: int, tensors: Dict[str, NamedTensor]) -> MambaLayer:
    kwargs = {}
    for key, attr in LAYER_PARAMS:
        name = f"layers.{index}.{key}"
        if name not in tensors:
            raise ArgumentError(f"missing tensor {name}")
        kwargs[attr] = tensors[name]
    return MambaLayer(index=index, **kwargs)


@dataclass(frozen=True)
class MambaModel:
    """Embedding, residual Mamba blocks, n_layers + 1 RMS norms and an output head."""

    config: MambaConfig
    embedding: NamedTensor
    layers: Tuple[MambaLayer, ...]
    norms: Tuple[NamedTensor, ...]
    lm_head: NamedTensor

    def __post_init__(self):
        cfg = self.config
        if len(self.layers) != cfg.n_layers:
            raise DimensionError(f"expected {cfg.n_layers} layers, got {len(self.layers)}")
        if len(self.norms) != cfg.n_layers + 1:
            raise DimensionError(f"expected {cfg.n_layers + 1} norms, got {len(self.norms)}")
        if self.embedding.shape != (cfg.vocab_size, cfg.d_model):
            raise DimensionError(f"embedding shape {self.embedding.shape} != {(cfg.vocab_size, cfg.d_model)}")
        if self.lm_head.shape != (cfg.vocab_size, cfg.d_model):
            raise DimensionError(f"lm_head shape {self.lm_head.shape} != {(cfg.vocab_size, cfg.d_model)}")
        for i, layer in enumerate(self.layers):
            if layer.index != i:
                raise DimensionError(f"layer at position {i} has index {layer.index}")
            if layer.d_model != cfg.d_model or layer.d_inner != cfg.d_inner:
                raise DimensionError(f"layer {i} does not match d_model/d_inner of the config")
            if layer.d_state > cfg.d_state or layer.d_conv != cfg.d_conv or layer.dt_rank != cfg.dt_rank:
                raise DimensionError(f"layer {i} does not match d_state/d_conv/dt_rank of the config")
        for norm in self.norms:
            if norm.shape != (cfg.d_model,):
                raise DimensionError(f"{norm.name} shape {norm.shape} != {(cfg.d_model,)}")

    def tensors(self) -> Dict[str, NamedTensor]:
        """All tensors keyed by checkpoint name, in a fixed order."""
        out: Dict[str, NamedTensor] = {"embedding.weight": self.embedding}
        for layer in self.layers:
            out.update(layer.tensors())
        for i, norm in enumerate(self.norms):
            out[f"norm.{i}.weight"] = norm
        out["lm_head.weight"] = self.lm_head
        return out

    def with_layer(self, layer: MambaLayer) -> "MambaModel":
        layers: List[MambaLayer] = list(self.layers)
        layers[layer.index] = layer
        return replace(self, layers=tuple(layers))

    def with_layers(self, layers: List[MambaLayer]) -> "MambaModel":
        return replace(self, layers=tuple(layers))

    def with_head(self, lm_head: np.ndarray) -> "MambaModel":
        return replace(self, lm_head=self.lm_head.with_data(lm_head))

    def equals(self, other: "MambaModel") -> bool:
        mine, theirs = self.tensors(), other.tensors()
        return (
            self.config == other.config
            and mine.keys() == theirs.keys()
            and all(mine[k].equals(theirs[k]) for k in mine)
        )
