"""Importance scoring and mask selection for the SSM transition A_log.

Scores follow the diagonal second-order saliency of A_log under the layer
reconstruction loss. In its simplified form the per-step importance is

    M_t = A_log² ⊙ S_t

with S_t the mean squared state entering step t. The full form keeps the
per-token factor δ²·e^{2δA} and the A² prefactor. Masks are chosen by
time-frequency aggregation: every step nominates its K weakest entries
and the K most frequently nominated entries are pruned.
"""

import logging
import math
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from src.calibration.stats import FullScoreAccumulator, HiddenStats, full_score_terms
from src.core.tensor import NamedTensor, arg_smallest_k, as_array
from src.errors import ArgumentError, DimensionError, StateError
from src.mamba.layer import MambaLayer
from src.mamba.scan import ScanTrace, parameterize_a

logger = logging.getLogger(__name__)

UNSTRUCTURED = "unstructured"
COLUMN = "column"
PATTERN_RE = re.compile(r"^\s*(\d+)\s*:\s*(\d+)\s*$")


@dataclass(frozen=True)
class ImportanceField:
    """Per-step importance (L×D×N); `aggregate_full` is the full D×N score when computed."""

    per_step: NamedTensor
    aggregate_full: Optional[NamedTensor] = None

    def __post_init__(self):
        if len(self.per_step.shape) != 3:
            raise DimensionError(f"per-step importance must be L×D×N, got {self.per_step.shape}")
        if np.any(self.per_step.data < 0):
            raise ArgumentError("importance must be non-negative")

    @property
    def steps(self) -> int:
        return self.per_step.shape[0]

    @property
    def shape(self):
        return self.per_step.shape[1:]

    def time_summed(self) -> np.ndarray:
        return self.per_step.data.sum(axis=0)

    def scaled(self, c: float) -> "ImportanceField":
        full = None if self.aggregate_full is None else self.aggregate_full.with_data(self.aggregate_full.data * c)
        return ImportanceField(self.per_step.with_data(self.per_step.data * c), full)


@dataclass(frozen=True)
class PruneMask:
    """0/1 mask over A_log; zeros mark pruned entries."""

    mask: NamedTensor
    k_pruned: int
    pattern: str = UNSTRUCTURED
    columns: tuple = ()

    def __post_init__(self):
        m = self.mask.data
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ArgumentError("mask entries must be 0 or 1")
        zeros = int(np.count_nonzero(m == 0.0))
        if zeros != self.k_pruned:
            raise ArgumentError(f"mask has {zeros} zeros, expected {self.k_pruned}")

    @property
    def shape(self):
        return self.mask.shape

    def zeros(self) -> np.ndarray:
        """Flat indices of the pruned entries, ascending."""
        return np.flatnonzero(self.mask.data.ravel() == 0.0)


@dataclass(frozen=True)
class Pattern:
    kind: str
    n_zeros: int = 0
    m_group: int = 0

    @property
    def label(self) -> str:
        return f"{self.n_zeros}:{self.m_group}" if self.kind == "nm" else self.kind


def parse_pattern(text: str) -> Pattern:
    """`unstructured`, `column` or `N:M` (N zeros in every group of M)."""
    value = (text or "").strip().lower()
    if value in (UNSTRUCTURED, COLUMN):
        return Pattern(value)
    m = PATTERN_RE.match(value)
    if not m:
        raise ArgumentError(f"unknown sparsity pattern {text!r}")
    n_zeros, m_group = int(m.group(1)), int(m.group(2))
    if m_group < 1 or n_zeros > m_group:
        raise ArgumentError(f"N:M pattern needs 0 <= N <= M and M >= 1, got {text!r}")
    return Pattern("nm", n_zeros, m_group)


def obs_saliency_diag(w, h_diag):
    """½·H_ii·w², the loss increase from zeroing w under a diagonal Hessian."""
    h = np.asarray(h_diag, dtype=np.float64)
    if np.any(h < 0):
        raise ArgumentError("Hessian diagonal must be non-negative")
    out = 0.5 * h * np.asarray(w, dtype=np.float64) ** 2
    return float(out) if out.ndim == 0 else out


def _check_sparsity(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ArgumentError(f"sparsity must lie in [0, 1], got {p}")


def prune_count(p: float, size: int) -> int:
    """⌈p·size⌉, computed on a 9-decimal rounding so 0.7·10 stays 7."""
    _check_sparsity(p)
    return int(math.ceil(round(p * size, 9)))


def importance_simplified(a_log, stats: HiddenStats) -> ImportanceField:
    a = as_array(a_log)
    if stats.shape[1:] != a.shape:
        raise DimensionError(f"A_log {a.shape} does not match stats {stats.shape}")
    return ImportanceField(NamedTensor("importance", (a ** 2)[None] * stats.s))


def _full_sums(a_log, source) -> np.ndarray:
    if source is None:
        raise StateError("full importance needs recorded hidden states and step sizes")
    if isinstance(source, FullScoreAccumulator):
        if source.n_seen == 0:
            raise StateError(f"layer {source.layer}: full-score accumulator is empty")
        return source.sums
    traces = [source] if isinstance(source, ScanTrace) else list(source)
    if not traces:
        raise StateError("full importance needs at least one scan trace")
    return sum(full_score_terms(a_log, t) for t in traces)


def full_field(a_log, source: Union[FullScoreAccumulator, ScanTrace, Sequence[ScanTrace], None]) -> ImportanceField:
    """Per-step full score A²·A_log²·Σ_b δ²e^{2δA}h²_{t-1}."""
    a = as_array(a_log)
    sums = _full_sums(a_log, source)
    if sums.shape[1:] != a.shape:
        raise DimensionError(f"A_log {a.shape} does not match score sums {sums.shape}")
    prefactor = parameterize_a(a).data ** 2 * a ** 2
    per_step = prefactor[None] * sums
    return ImportanceField(NamedTensor("importance_full", per_step),
                           NamedTensor("importance_full_total", per_step.sum(axis=0)))


def importance_full(a_log, source: Union[FullScoreAccumulator, ScanTrace, Sequence[ScanTrace], None]) -> NamedTensor:
    """Full D×N score summed over samples and steps."""
    return full_field(a_log, source).aggregate_full


def magnitude_field(a_log) -> ImportanceField:
    """|A_log| as a single-step field so the frequency selectors reduce to a plain sort."""
    return ImportanceField(NamedTensor("magnitude", np.abs(as_array(a_log))[None]))


def _frequency_select(steps: np.ndarray, k: int) -> np.ndarray:
    """Indices picked by per-step nomination counts (steps is L×S)."""
    if k == 0:
        return np.empty(0, dtype=np.int64)
    counts = np.zeros(steps.shape[1], dtype=np.int64)
    for t in range(steps.shape[0]):
        counts[arg_smallest_k(steps[t], k)] += 1
    # most nominated first, lower flat index on equal counts
    order = np.lexsort((np.arange(counts.size), -counts))
    return order[:k]


def _mask_from(shape, zeros: Iterable[int], pattern: str, columns=()) -> PruneMask:
    flat = np.ones(int(np.prod(shape)))
    idx = np.asarray(list(zeros), dtype=np.int64)
    flat[idx] = 0.0
    return PruneMask(NamedTensor("mask", flat.reshape(shape)), int(idx.size), pattern, tuple(columns))


def select_mask_time_frequency(field: ImportanceField, p: float) -> PruneMask:
    d, n = field.shape
    k = prune_count(p, d * n)
    steps = field.per_step.data.reshape(field.steps, d * n)
    return _mask_from((d, n), _frequency_select(steps, k), UNSTRUCTURED)


def select_mask_l2(field: ImportanceField, p: float) -> PruneMask:
    """Prune the entries whose per-step scores have the smallest L2 norm over time."""
    d, n = field.shape
    k = prune_count(p, d * n)
    norms = np.sqrt((field.per_step.data ** 2).sum(axis=0))
    return _mask_from((d, n), arg_smallest_k(norms, k), UNSTRUCTURED)


def select_mask_nm(field: ImportanceField, n_zeros: int, m_group: int) -> PruneMask:
    """Exactly `n_zeros` per group of `m_group` consecutive state entries.

    Frequency aggregation runs inside each group on that group's per-step
    scores.
    """
    d, n = field.shape
    if m_group < 1 or n % m_group != 0:
        raise ArgumentError(f"group size {m_group} must divide the state width {n}")
    if not 0 <= n_zeros <= m_group:
        raise ArgumentError(f"n_zeros={n_zeros} must lie in [0, {m_group}]")
    zeros = []
    for row in range(d):
        for g in range(n // m_group):
            start = g * m_group
            local = _frequency_select(field.per_step.data[:, row, start:start + m_group], n_zeros)
            zeros.extend(row * n + start + local)
    return _mask_from((d, n), sorted(zeros), f"{n_zeros}:{m_group}")


def column_scores(field: ImportanceField) -> np.ndarray:
    """L1 norm over channels of the time-summed score, one value per state column."""
    return np.abs(field.time_summed()).sum(axis=0)


def select_mask_columns(field: ImportanceField, p: float) -> PruneMask:
    _check_sparsity(p)
    d, n = field.shape
    k = int(math.floor(round(p * n, 9)))
    if k >= n:
        raise ArgumentError(f"sparsity {p} would remove all {n} state columns")
    columns = sorted(int(c) for c in arg_smallest_k(column_scores(field), k))
    zeros = [row * n + c for row in range(d) for c in columns]
    return _mask_from((d, n), sorted(zeros), COLUMN, columns)


def select_mask(field: ImportanceField, p: float, pattern: Pattern, aggregation: str = "frequency") -> PruneMask:
    """Dispatch on the sparsity pattern; N:M ignores p."""
    if pattern.kind == "nm":
        return select_mask_nm(field, pattern.n_zeros, pattern.m_group)
    if pattern.kind == COLUMN:
        return select_mask_columns(field, p)
    if aggregation == "l2":
        return select_mask_l2(field, p)
    return select_mask_time_frequency(field, p)


def apply_mask(layer: MambaLayer, mask: PruneMask) -> MambaLayer:
    """A_log ⊙ mask; nothing else changes."""
    if mask.shape != layer.a_log.shape:
        raise DimensionError(f"mask shape {mask.shape} != A_log shape {layer.a_log.shape}")
    return layer.replace(a_log=layer.a_log.with_data(layer.a_log.data * mask.mask.data))


def zero_state_projections(layer: MambaLayer, columns: Sequence[int]) -> MambaLayer:
    """Dense layer with the B and C projection rows of `columns` zeroed."""
    r, n = layer.dt_rank, layer.d_state
    x_proj = layer.x_proj.array()
    for c in columns:
        x_proj[r + c] = 0.0
        x_proj[r + n + c] = 0.0
    return layer.replace(x_proj=layer.x_proj.with_data(x_proj))


def compact_columns(layer: MambaLayer, columns: Sequence[int]) -> MambaLayer:
    """Drop state columns: A_log columns plus the matching B and C rows of x_proj."""
    r, n = layer.dt_rank, layer.d_state
    removed = set(int(c) for c in columns)
    if not removed:
        return layer
    keep = [c for c in range(n) if c not in removed]
    if not keep:
        raise ArgumentError(f"layer {layer.index}: cannot remove every state column")
    rows = list(range(r)) + [r + c for c in keep] + [r + n + c for c in keep]
    return layer.replace(
        a_log=layer.a_log.with_data(layer.a_log.data[:, keep]),
        x_proj=layer.x_proj.with_data(layer.x_proj.data[rows]),
    )


def prune_columns_with_mask(layer: MambaLayer, field: ImportanceField, p: float) -> Tuple[MambaLayer, PruneMask]:
    """Column pruning that also returns the column mask it removed."""
    if field.shape != layer.a_log.shape:
        raise DimensionError(f"importance shape {field.shape} != A_log shape {layer.a_log.shape}")
    mask = select_mask_columns(field, p)
    compact = compact_columns(layer, mask.columns)
    logger.debug("layer %d: removed state columns %s (N %d -> %d)",
                 layer.index, list(mask.columns), layer.d_state, compact.d_state)
    return compact, mask


def prune_columns_structured(layer: MambaLayer, field: ImportanceField, p: float) -> MambaLayer:
    """Remove the ⌊p·N⌋ least important state columns and shrink the layer."""
    if not 0.0 < p < 1.0:
        raise ArgumentError(f"structured sparsity must lie in (0, 1), got {p}")
    return prune_columns_with_mask(layer, field, p)[0]
