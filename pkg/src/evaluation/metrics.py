"""Reconstruction error, perplexity and sparsity accounting."""

import logging
from typing import Dict, Optional

import numpy as np
from scipy.special import log_softmax

from src.core.tensor import as_array
from src.errors import ArgumentError
from src.mamba.block import check_tokens, model_forward
from src.mamba.layer import MambaLayer, MambaModel, SelectiveInputs
from src.mamba.scan import scan_recurrence, selective_scan
from src.oracles.oracles import loss_l2

logger = logging.getLogger(__name__)


def reconstruction_error(dense: MambaLayer, pruned: MambaLayer, x=None,
                         theta: Optional[SelectiveInputs] = None) -> float:
    """Mean over samples of ‖SSM(A, θ, x) − SSM(A′, θ, x)‖².

    θ comes from the dense layer. A pruned layer with a compacted state
    axis has its own θ, so its scan is recomputed from x.
    """
    theta = theta if theta is not None else dense.project(as_array(x))
    y_dense, _ = scan_recurrence(dense.a_log, dense.d_skip, theta)
    if pruned.d_state == dense.d_state:
        y_pruned, _ = scan_recurrence(pruned.a_log, pruned.d_skip, theta)
    else:
        y_pruned, _ = selective_scan(pruned, theta.x)
    return loss_l2(y_pruned.data, y_dense.data)


def perplexity(model: MambaModel, tokens) -> float:
    """exp(mean next-token negative log-likelihood) over every predicted position."""
    ids = check_tokens(model, tokens)
    if ids.shape[1] < 2:
        raise ArgumentError("perplexity needs sequences of length >= 2")
    logits = model_forward(model, ids)
    logp = log_softmax(logits[:, :-1], axis=-1)
    nll = -np.take_along_axis(logp, ids[:, 1:, None], axis=-1)
    return float(np.exp(np.mean(nll)))


def count_zeros(values) -> int:
    """Zero entries after the float32 cast used on disk."""
    return int(np.count_nonzero(as_array(values).astype("<f4") == 0.0))


def achieved_sparsity(values) -> float:
    arr = as_array(values)
    return count_zeros(arr) / arr.size


def model_zero_counts(model: MambaModel) -> Dict[str, int]:
    return {name: count_zeros(t) for name, t in model.tensors().items()}


def total_params(model: MambaModel) -> int:
    return sum(t.size for t in model.tensors().values())

