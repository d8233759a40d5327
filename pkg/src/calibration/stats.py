"""Streaming calibration statistics.

- `HiddenStats`: per-step running mean of the squared state entering each
  step (h_{t-1}², zero at t=0), shape L×D×N.
- `FullScoreAccumulator`: per-step sums of δ²·e^{2δA}·h_{t-1}² over every
  calibration sample, shape L×D×N.
- `GramAccumulator`: Σ x xᵀ over a module's input rows; depthwise conv
  keeps one d_conv×d_conv Gram per channel.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.core.tensor import as_array
from src.errors import DimensionError, StateError
from src.mamba.scan import ScanTrace, parameterize_a
from utils import defaults


@dataclass(frozen=True)
class HiddenStats:
    layer: int
    s: np.ndarray = field(repr=False)
    n_seen: int = 0

    @classmethod
    def empty(cls, layer: int, length: int, d_inner: int, d_state: int) -> "HiddenStats":
        return cls(layer, np.zeros((length, d_inner, d_state)), 0)

    @property
    def shape(self):
        return self.s.shape

    def time_summed(self) -> np.ndarray:
        return self.s.sum(axis=0)


def accumulate_stats(stats: HiddenStats, trace: ScanTrace) -> HiddenStats:
    """One running-mean update: the trace counts as one sample (batch-averaged)."""
    prev_sq = trace.previous_hidden() ** 2
    if prev_sq.shape[1:] != stats.shape:
        raise DimensionError(f"trace hidden {prev_sq.shape[1:]} does not match stats {stats.shape}")
    n = stats.n_seen + 1
    s = stats.s * ((n - 1) / n) + prev_sq.mean(axis=0) / n
    return HiddenStats(stats.layer, s, n)


def merge_stats(a: HiddenStats, b: HiddenStats) -> HiddenStats:
    """Mean of two partial accumulations, weighted by `n_seen`."""
    if a.shape != b.shape:
        raise DimensionError(f"cannot merge stats of shape {a.shape} and {b.shape}")
    n = a.n_seen + b.n_seen
    if n == 0:
        return HiddenStats(a.layer, np.zeros(a.shape), 0)
    return HiddenStats(a.layer, (a.s * a.n_seen + b.s * b.n_seen) / n, n)


def full_score_terms(a_log, trace: ScanTrace) -> np.ndarray:
    """Σ_b δ²·e^{2δA}·h_{t-1}² for one trace, per step (L×D×N)."""
    a = parameterize_a(a_log).data
    delta = trace.deltas.data[..., None]
    weight = delta ** 2 * np.exp(np.clip(2.0 * delta * a, defaults.EXP_CLAMP_MIN, defaults.EXP_CLAMP_MAX))
    return (weight * trace.previous_hidden() ** 2).sum(axis=0)


@dataclass(frozen=True)
class FullScoreAccumulator:
    layer: int
    sums: np.ndarray = field(repr=False)
    n_seen: int = 0

    @classmethod
    def empty(cls, layer: int, length: int, d_inner: int, d_state: int) -> "FullScoreAccumulator":
        return cls(layer, np.zeros((length, d_inner, d_state)), 0)

    def add(self, a_log, trace: ScanTrace) -> "FullScoreAccumulator":
        terms = full_score_terms(a_log, trace)
        if terms.shape != self.sums.shape:
            raise DimensionError(f"trace terms {terms.shape} do not match accumulator {self.sums.shape}")
        return FullScoreAccumulator(self.layer, self.sums + terms, self.n_seen + trace.batch)


@dataclass(frozen=True)
class GramAccumulator:
    """Input Gram of one module: k×k, or D×k×k for a depthwise conv."""

    name: str
    gram: np.ndarray = field(repr=False)
    n_cols_seen: int = 0

    @classmethod
    def empty(cls, name: str, width: int, channels: Optional[int] = None) -> "GramAccumulator":
        shape = (width, width) if channels is None else (channels, width, width)
        return cls(name, np.zeros(shape), 0)

    @property
    def width(self) -> int:
        return self.gram.shape[-1]

    @property
    def per_channel(self) -> bool:
        return self.gram.ndim == 3

    def trace(self) -> float:
        if self.n_cols_seen == 0:
            raise StateError(f"{self.name}: no calibration inputs accumulated")
        return float(np.trace(self.gram, axis1=-2, axis2=-1).sum())


def accumulate_gram(acc: GramAccumulator, x_inputs) -> GramAccumulator:
    """gram += X·Xᵀ for X of shape k×cols."""
    x = as_array(x_inputs)
    if acc.per_channel:
        raise DimensionError(f"{acc.name}: use accumulate_conv_gram for per-channel Grams")
    if x.ndim != 2 or x.shape[0] != acc.width:
        raise DimensionError(f"{acc.name}: inputs must be {acc.width}×cols, got {x.shape}")
    gram = acc.gram + x @ x.T
    return GramAccumulator(acc.name, 0.5 * (gram + gram.T), acc.n_cols_seen + x.shape[1])


def accumulate_conv_gram(acc: GramAccumulator, windows) -> GramAccumulator:
    """Per-channel gram[d] += Σ_r w_r wᵀ_r for unfolded windows (rows×D×d_conv)."""
    w = as_array(windows)
    if not acc.per_channel or w.ndim != 3 or w.shape[1:] != acc.gram.shape[:2]:
        raise DimensionError(f"{acc.name}: windows must be rows×{acc.gram.shape[0]}×{acc.width}, got {w.shape}")
    gram = acc.gram + np.einsum("rdk,rdj->dkj", w, w)
    return GramAccumulator(acc.name, 0.5 * (gram + gram.transpose(0, 2, 1)), acc.n_cols_seen + w.shape[0])
