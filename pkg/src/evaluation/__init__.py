"""Metrics and prune reports."""

from .metrics import achieved_sparsity, count_zeros, perplexity, reconstruction_error, total_params
from .report import ModuleReport, PruneReport, emit_report, load_report

__all__ = [
    "achieved_sparsity",
    "count_zeros",
    "perplexity",
    "reconstruction_error",
    "total_params",
    "ModuleReport",
    "PruneReport",
    "emit_report",
    "load_report",
]
