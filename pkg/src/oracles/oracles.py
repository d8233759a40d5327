"""Brute-force references: finite-difference Hessian diagonals, exhaustive
mask search and the closed-form unrolled scan.

The loss target is the unpruned layer's own output, so L(A_log) = 0 at the
starting point and the finite-difference diagonal is the pure curvature
of the layer reconstruction objective.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from src.core.tensor import NamedTensor, as_array
from src.errors import ArgumentError, DimensionError, NumericalError
from src.mamba.layer import MambaLayer, SelectiveInputs
from src.mamba.scan import discretize, parameterize_a, scan_recurrence
from src.pruning.ssm_pruner import PruneMask
from utils import defaults

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FdConfig:
    step: float = defaults.FD_STEP
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.step > 0:
            raise ArgumentError(f"finite-difference step must be > 0, got {self.step}")


@dataclass(frozen=True)
class DiagonalSaliency:
    saliency: NamedTensor
    ranking: np.ndarray


def loss_l2(y, y_ref) -> float:
    """(1/B)·Σ_b ‖y_b − ŷ_b‖² with the batch on axis 0."""
    a, b = as_array(y), as_array(y_ref)
    if a.shape != b.shape:
        raise DimensionError(f"loss inputs differ in shape: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2) / a.shape[0])


def _theta(layer: MambaLayer, x, theta: Optional[SelectiveInputs]) -> SelectiveInputs:
    return theta if theta is not None else layer.project(as_array(x))


def _scan(a_log: np.ndarray, layer: MambaLayer, theta: SelectiveInputs) -> np.ndarray:
    y, _ = scan_recurrence(a_log, layer.d_skip, theta)
    return y.data


def mask_reconstruction_error(layer: MambaLayer, mask: PruneMask, x=None,
                              theta: Optional[SelectiveInputs] = None) -> float:
    """Loss between the dense scan and the scan with A_log ⊙ mask, for fixed θ."""
    theta = _theta(layer, x, theta)
    a_log = layer.a_log.data
    return loss_l2(_scan(a_log * mask.mask.data, layer, theta), _scan(a_log, layer, theta))


def fd_hessian_diag(layer: MambaLayer, x=None, cfg: FdConfig = FdConfig(),
                    theta: Optional[SelectiveInputs] = None) -> NamedTensor:
    """Central second differences of the loss in every A_log entry."""
    theta = _theta(layer, x, theta)
    base = layer.a_log.array()
    target = _scan(base, layer, theta) if cfg.reference is None else as_array(cfg.reference)

    def loss(a_log: np.ndarray) -> float:
        value = loss_l2(_scan(a_log, layer, theta), target)
        if not np.isfinite(value):
            raise NumericalError("non-finite loss in finite differences", layer=layer.index)
        return value

    l0 = loss(base)
    diag = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        h = max(cfg.step, cfg.step * abs(base[idx]))
        plus, minus = base.copy(), base.copy()
        plus[idx] += h
        minus[idx] -= h
        diag[idx] = (loss(plus) - 2.0 * l0 + loss(minus)) / (h * h)
    return NamedTensor("fd_hessian_diag", diag)


def cross_entropy_over_diagonal_saliency(fd_diag, a_log) -> DiagonalSaliency:
    """½·H_ii·A_log² with its ascending ranking (stable, lower index first)."""
    h, a = as_array(fd_diag), as_array(a_log)
    if h.shape != a.shape:
        raise DimensionError(f"fd diagonal {h.shape} does not match A_log {a.shape}")
    saliency = 0.5 * h * a ** 2
    return DiagonalSaliency(NamedTensor("saliency", saliency), np.argsort(saliency.ravel(), kind="stable"))


def exhaustive_best_mask(layer: MambaLayer, x=None, k: int = 0,
                         theta: Optional[SelectiveInputs] = None) -> Tuple[PruneMask, float]:
    """Best k-zero mask over all C(D·N, k) choices; ties keep the first in lexicographic order."""
    d, n = layer.a_log.shape
    size = d * n
    if size > defaults.EXHAUSTIVE_MAX_ENTRIES:
        raise ArgumentError(f"exhaustive search limited to {defaults.EXHAUSTIVE_MAX_ENTRIES} entries, got {size}")
    if not 0 <= k <= size:
        raise ArgumentError(f"k={k} out of range for {size} entries")
    theta = _theta(layer, x, theta)
    a_log = layer.a_log.data
    dense = _scan(a_log, layer, theta)

    best_zeros, best_error = None, np.inf
    for zeros in itertools.combinations(range(size), k):
        flat = np.ones(size)
        flat[list(zeros)] = 0.0
        error = loss_l2(_scan(a_log * flat.reshape(d, n), layer, theta), dense)
        if error < best_error:
            best_zeros, best_error = zeros, error
    flat = np.ones(size)
    flat[list(best_zeros)] = 0.0
    mask = PruneMask(NamedTensor("mask", flat.reshape(d, n)), k, "exhaustive")
    return mask, float(best_error)


def unrolled_scan(a_log, d_skip, theta: SelectiveInputs) -> np.ndarray:
    """y_t = Σ_{s≤t} (Π_{r=s+1..t} ΔA_r) ΔB_s x_s · C_t + D x_t, evaluated term by term."""
    theta.check()
    bsz, length, d, n = theta.shape
    delta_a = discretize(parameterize_a(a_log), theta.delta).data
    delta_bx = theta.delta[..., None] * theta.b[:, :, None, :] * theta.x[..., None]
    y = np.zeros((bsz, length, d))
    for t in range(length):
        h = np.zeros((bsz, d, n))
        for s in range(t + 1):
            decay = np.ones((bsz, d, n))
            for r in range(s + 1, t + 1):
                decay = decay * delta_a[:, r]
            h = h + decay * delta_bx[:, s]
        y[:, t] = np.einsum("bdn,bn->bd", h, theta.c[:, t])
    return y + as_array(d_skip) * theta.x


def spearman(a, b) -> float:
    """Spearman rank correlation of two equally sized arrays."""
    x, y = np.ravel(as_array(a)), np.ravel(as_array(b))
    if x.shape != y.shape:
        raise DimensionError(f"spearman inputs differ in size: {x.size} vs {y.size}")
    rho, _ = stats.spearmanr(x, y)
    return float(rho)
