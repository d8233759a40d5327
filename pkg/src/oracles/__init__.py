"""Brute-force reference implementations for tests and `--verify`."""

from .oracles import (
    DiagonalSaliency,
    FdConfig,
    cross_entropy_over_diagonal_saliency,
    exhaustive_best_mask,
    fd_hessian_diag,
    loss_l2,
    mask_reconstruction_error,
    spearman,
    unrolled_scan,
)

__all__ = [
    "DiagonalSaliency",
    "FdConfig",
    "cross_entropy_over_diagonal_saliency",
    "exhaustive_best_mask",
    "fd_hessian_diag",
    "loss_l2",
    "mask_reconstruction_error",
    "spearman",
    "unrolled_scan",
]
