"""Layer-wise OBS pruning of the linear and depthwise-conv modules.

Weights are processed left to right in column blocks. Per row, the
saliency of column j is w_j² / [H⁻¹]_jj over the still-adjustable columns;
every pruned weight is followed by the OBS compensation of the remaining
adjustable columns of that row and a downdate of the row's inverse.
Columns in finished blocks are frozen.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.calibration.stats import GramAccumulator, accumulate_conv_gram, accumulate_gram
from src.core.tensor import NamedTensor, arg_smallest_k, as_array, spd_inverse
from src.errors import ArgumentError, DimensionError, NumericalError
from utils import defaults

logger = logging.getLogger(__name__)

__all__ = [
    "GramAccumulator",
    "accumulate_gram",
    "accumulate_conv_gram",
    "PruneResult",
    "row_budgets",
    "damped_hessian",
    "reconstruction_loss",
    "prune_linear_obs",
    "prune_conv_as_linear",
    "prune_linear_magnitude",
    "prune_conv_magnitude",
]


@dataclass(frozen=True)
class PruneResult:
    weight: NamedTensor
    mask: NamedTensor
    recon_error: float

    @property
    def zeros(self) -> int:
        return int(np.count_nonzero(self.mask.data == 0.0))


def _check_sparsity(sparsity: float) -> None:
    if not 0.0 <= sparsity <= 1.0:
        raise ArgumentError(f"sparsity must lie in [0, 1], got {sparsity}")


def row_budgets(rows: int, cols: int, sparsity: float,
                saliency: Optional[np.ndarray] = None) -> np.ndarray:
    """Zeros per row: round(s·rows·cols) in total, per-row counts differ by at most one.

    The remainder goes to the rows whose next candidate (the weight after
    their `base` weakest) has the smallest saliency; without a saliency it
    goes to the first rows.
    """
    _check_sparsity(sparsity)
    total = int(math.floor(round(sparsity * rows * cols, 9) + 0.5))
    base, extra = divmod(total, rows)
    budgets = np.full(rows, base, dtype=np.int64)
    if extra:
        if saliency is None:
            budgets[:extra] += 1
        else:
            nxt = np.sort(np.asarray(saliency, dtype=np.float64).reshape(rows, cols), axis=1, kind="stable")[:, base]
            budgets[arg_smallest_k(nxt, extra)] += 1
    return budgets


def damped_hessian(gram, percdamp: float = defaults.PERCDAMP,
                   retries: int = defaults.MAX_DAMP_RETRIES) -> np.ndarray:
    """gram + λI with λ = percdamp·mean(diag), doubled until the matrix factors."""
    g = as_array(gram)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionError(f"Gram must be square, got {g.shape}")
    if percdamp < 0:
        raise ArgumentError(f"percdamp must be >= 0, got {percdamp}")
    mean_diag = float(np.mean(np.diag(g)))
    lam = percdamp * mean_diag
    eye = np.eye(g.shape[0])
    for attempt in range(retries + 1):
        h = g + lam * eye
        try:
            spd_inverse(h)
            return h
        except NumericalError:
            lam = 2.0 * lam if lam > 0 else 1e-8 * max(mean_diag, 1.0)
            logger.debug("damping retry %d: lambda=%g", attempt + 1, lam)
    raise NumericalError(f"Hessian not positive definite after {retries} damping retries")


def reconstruction_loss(delta_w: np.ndarray, gram: np.ndarray) -> float:
    """tr(ΔW G ΔWᵀ); a D×k×k gram pairs each row with its own matrix."""
    if gram.ndim == 3:
        return float(np.einsum("dk,dkj,dj->", delta_w, gram, delta_w))
    return float(np.einsum("rk,kj,rj->", delta_w, gram, delta_w))


def _block_inverses(h: np.ndarray, blocksize: int) -> List[np.ndarray]:
    """Inverse of H over the adjustable columns [i0, k) for every block start."""
    k = h.shape[0]
    return [spd_inverse(h[i0:, i0:]) for i0 in range(0, k, blocksize)]


def _prune_row(w: np.ndarray, inverses: List[np.ndarray], budget: int, blocksize: int):
    w = w.copy()
    k = w.size
    pruned = np.zeros(k, dtype=bool)
    remaining = int(budget)
    for b, i0 in enumerate(range(0, k, blocksize)):
        if remaining == 0:
            break
        i1 = min(i0 + blocksize, k)
        hinv = inverses[b].copy()
        wf = w[i0:]
        local_pruned = pruned[i0:]
        while remaining > 0:
            cand = np.flatnonzero(~local_pruned)
            saliency = wf[cand] ** 2 / np.diag(hinv)[cand]
            top = cand[arg_smallest_k(saliency, min(remaining, cand.size))]
            in_block = top[top < i1 - i0]
            if in_block.size == 0:
                break
            j = int(in_block[0])
            wf -= (wf[j] / hinv[j, j]) * hinv[j]
            wf[j] = 0.0
            hinv -= np.outer(hinv[:, j], hinv[j]) / hinv[j, j]
            local_pruned[j] = True
            remaining -= 1
    w[pruned] = 0.0
    return w, pruned


def _check_blocksize(blocksize: int) -> None:
    if blocksize < 1:
        raise ArgumentError(f"blocksize must be >= 1, got {blocksize}")


def prune_linear_obs(weight: NamedTensor, gram, sparsity: float,
                     blocksize: int = defaults.BLOCKSIZE,
                     percdamp: float = defaults.PERCDAMP) -> PruneResult:
    """OBS pruning of a rows×k weight with input Gram k×k."""
    _check_blocksize(blocksize)
    g = gram.gram if isinstance(gram, GramAccumulator) else as_array(gram)
    w = weight.array()
    rows, k = w.shape
    if g.shape != (k, k):
        raise DimensionError(f"{weight.name}: Gram shape {g.shape} does not match input width {k}")
    if row_budgets(rows, k, sparsity).sum() == 0:
        return PruneResult(weight, NamedTensor(weight.name + ".mask", np.ones_like(w)), 0.0)

    inverses = _block_inverses(damped_hessian(g, percdamp), blocksize)
    budgets = row_budgets(rows, k, sparsity, saliency=w ** 2 / np.diag(inverses[0]))
    out = np.empty_like(w)
    mask = np.ones_like(w)
    for r in range(rows):
        out[r], pruned = _prune_row(w[r], inverses, budgets[r], blocksize)
        mask[r, pruned] = 0.0
    error = reconstruction_loss(w - out, g)
    logger.debug("%s: pruned %d/%d weights, recon error %.6g", weight.name, int(budgets.sum()), w.size, error)
    return PruneResult(weight.with_data(out), NamedTensor(weight.name + ".mask", mask), error)


def prune_conv_as_linear(conv_weight: NamedTensor, gram, sparsity: float,
                         blocksize: int = defaults.BLOCKSIZE,
                         percdamp: float = defaults.PERCDAMP) -> PruneResult:
    """OBS pruning of a depthwise kernel (D×d_conv), one Gram per channel."""
    _check_blocksize(blocksize)
    g = gram.gram if isinstance(gram, GramAccumulator) else as_array(gram)
    w = conv_weight.array()
    d, k = w.shape
    if g.shape != (d, k, k):
        raise DimensionError(f"{conv_weight.name}: per-channel Gram must be {(d, k, k)}, got {g.shape}")
    if row_budgets(d, k, sparsity).sum() == 0:
        return PruneResult(conv_weight, NamedTensor(conv_weight.name + ".mask", np.ones_like(w)), 0.0)

    inverses = [_block_inverses(damped_hessian(g[c], percdamp), blocksize) for c in range(d)]
    saliency = np.stack([w[c] ** 2 / np.diag(inverses[c][0]) for c in range(d)])
    budgets = row_budgets(d, k, sparsity, saliency=saliency)
    out = np.empty_like(w)
    mask = np.ones_like(w)
    for c in range(d):
        out[c], pruned = _prune_row(w[c], inverses[c], budgets[c], blocksize)
        mask[c, pruned] = 0.0
    error = reconstruction_loss(w - out, g)
    return PruneResult(conv_weight.with_data(out), NamedTensor(conv_weight.name + ".mask", mask), error)


def prune_linear_magnitude(weight: NamedTensor, sparsity: float, gram: Optional[np.ndarray] = None) -> PruneResult:
    """Zero the smallest |w| of every row under the same row budgets as OBS."""
    w = weight.array()
    rows, k = w.shape
    budgets = row_budgets(rows, k, sparsity, saliency=np.abs(w))
    mask = np.ones_like(w)
    for r in range(rows):
        mask[r, arg_smallest_k(np.abs(w[r]), int(budgets[r]))] = 0.0
    out = w * mask
    error = 0.0
    if gram is not None:
        g = gram.gram if isinstance(gram, GramAccumulator) else as_array(gram)
        error = reconstruction_loss(w - out, g)
    return PruneResult(weight.with_data(out), NamedTensor(weight.name + ".mask", mask), error)


def prune_conv_magnitude(conv_weight: NamedTensor, sparsity: float, gram: Optional[np.ndarray] = None) -> PruneResult:
    return prune_linear_magnitude(conv_weight, sparsity, gram)
