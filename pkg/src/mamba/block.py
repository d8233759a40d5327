"""Mamba block and language-model forward passes.

Block wiring: in_proj -> split (x, res) -> causal depthwise conv -> SiLU ->
selective scan -> gate by SiLU(res) -> out_proj. The model applies
`x <- x + block_i(rms_norm(x))` per layer, a final RMS norm and the head.
"""

from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.tensor import NamedTensor, as_array
from src.errors import ArgumentError, DimensionError, NumericalError
from utils import defaults
from .layer import MambaLayer, MambaModel, silu
from .scan import ScanTrace, selective_scan


def rms_norm(x: np.ndarray, weight: NamedTensor, eps: float = defaults.RMS_EPS) -> np.ndarray:
    scale = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * scale * weight.data


def unfold_windows(x: np.ndarray, d_conv: int) -> np.ndarray:
    """Causal windows of x (B×L×D): out[b, t, d, k] = x[b, t - d_conv + 1 + k, d], zero-padded."""
    padded = np.pad(x, ((0, 0), (d_conv - 1, 0), (0, 0)))
    return sliding_window_view(padded, d_conv, axis=1)


def causal_depthwise_conv(x: np.ndarray, weight: NamedTensor, bias: NamedTensor) -> np.ndarray:
    windows = unfold_windows(x, weight.shape[1])
    return np.einsum("bldk,dk->bld", windows, weight.data) + bias.data


def block_forward(layer: MambaLayer, u: np.ndarray,
                  record: bool = False) -> Tuple[NamedTensor, Optional[ScanTrace]]:
    """One Mamba block on u (B×L×d_model); records module inputs when asked."""
    u = as_array(u)
    if u.ndim != 3 or u.shape[-1] != layer.d_model:
        raise DimensionError(f"layer {layer.index}: block input must be B×L×{layer.d_model}, got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise NumericalError("block input has non-finite entries", layer=layer.index)

    d = layer.d_inner
    xz = u @ layer.in_proj.data.T
    x, res = xz[..., :d], xz[..., d:]
    x_conv = silu(causal_depthwise_conv(x, layer.conv_weight, layer.conv_bias))
    y, trace = selective_scan(layer, x_conv, record=record)
    gated = y.data * silu(res)
    out = gated @ layer.out_proj.data.T

    if trace is not None:
        rows = u.shape[0] * u.shape[1]
        trace.inputs = {
            "in_proj": u.reshape(rows, -1),
            "conv1d": unfold_windows(x, layer.d_conv).reshape(rows, d, layer.d_conv),
            "x_proj": x_conv.reshape(rows, d),
            "dt_proj": trace.theta.dt_low.reshape(rows, -1),
            "out_proj": gated.reshape(rows, d),
            "scan": x_conv,
        }
    return NamedTensor(f"layers.{layer.index}.out", out), trace


def check_tokens(model: MambaModel, tokens) -> np.ndarray:
    ids = np.asarray(tokens)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2 or ids.size == 0:
        raise ArgumentError(f"tokens must be a non-empty B×L batch, got shape {ids.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ArgumentError(f"tokens must be integers, got {ids.dtype}")
    vocab = model.config.vocab_size
    if ids.min() < 0 or ids.max() >= vocab:
        raise ArgumentError(f"token id out of range [0, {vocab}): min={ids.min()} max={ids.max()}")
    return ids.astype(np.int64)


def embed(model: MambaModel, tokens) -> np.ndarray:
    return model.embedding.data[check_tokens(model, tokens)]


def residual_block(model: MambaModel, index: int, hidden: np.ndarray, record: bool = False,
                   layer: Optional[MambaLayer] = None) -> Tuple[np.ndarray, Optional[ScanTrace]]:
    """hidden + block(rms_norm(hidden)) for layer `index` (or an override layer)."""
    layer = layer if layer is not None else model.layers[index]
    out, trace = block_forward(layer, rms_norm(hidden, model.norms[index]), record=record)
    return hidden + out.data, trace


def head(model: MambaModel, hidden: np.ndarray) -> np.ndarray:
    return rms_norm(hidden, model.norms[-1]) @ model.lm_head.data.T


def final_features(model: MambaModel, tokens) -> np.ndarray:
    """Normalized hidden states fed to the output head (B×L×d_model)."""
    hidden = embed(model, tokens)
    for i in range(model.config.n_layers):
        hidden, _ = residual_block(model, i, hidden)
    return rms_norm(hidden, model.norms[-1])


def model_forward(model: MambaModel, tokens, record: bool = False):
    """Logits (B×L×vocab); with `record`, also the per-layer scan traces."""
    hidden = embed(model, tokens)
    traces: List[ScanTrace] = []
    for i in range(model.config.n_layers):
        hidden, trace = residual_block(model, i, hidden, record=record)
        if trace is not None:
            traces.append(trace)
    logits = head(model, hidden)
    return (logits, traces) if record else logits
