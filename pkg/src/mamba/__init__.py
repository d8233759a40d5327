"""Mamba model: parameters, selective scan, forward passes and checkpoints."""

from .config import MambaConfig
from .layer import MambaLayer, MambaModel, SelectiveInputs
from .scan import ScanTrace, discretize, parameterize_a, scan_recurrence, selective_scan
from .block import block_forward, model_forward
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "MambaConfig",
    "MambaLayer",
    "MambaModel",
    "SelectiveInputs",
    "ScanTrace",
    "parameterize_a",
    "discretize",
    "scan_recurrence",
    "selective_scan",
    "block_forward",
    "model_forward",
    "save_checkpoint",
    "load_checkpoint",
]
