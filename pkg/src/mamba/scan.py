"""Discretization and the selective-scan recurrence.

    h_t = exp(δ_t A) ⊙ h_{t-1} + δ_t B_t ⊙ x_t,   h_{-1} = 0
    y_t = h_tᵀ C_t + D ⊙ x_t

A = -exp(A_log). ΔB uses the Euler form δ·B.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np

from src.core.tensor import NamedTensor, as_array
from src.errors import DimensionError, NumericalError
from utils import defaults
from .layer import MambaLayer, SelectiveInputs

Array = Union[np.ndarray, NamedTensor]


@dataclass
class ScanTrace:
    """Recorded scan internals for one forward pass.

    `hidden[b, t]` is h_t (the state after step t); `deltas` are the
    post-softplus step sizes; `inputs` is filled by the block forward with
    each module's input activations, flattened to rows.
    """

    hidden: NamedTensor
    deltas: NamedTensor
    theta: SelectiveInputs
    inputs: Dict[str, np.ndarray] = field(default_factory=dict)

    def previous_hidden(self) -> np.ndarray:
        """State entering each step: h_{t-1}, with the zero state at t=0."""
        h = self.hidden.data
        prev = np.zeros_like(h)
        prev[:, 1:] = h[:, :-1]
        return prev

    @property
    def batch(self) -> int:
        return self.hidden.shape[0]


def parameterize_a(a_log: Array) -> NamedTensor:
    """A = -exp(A_log), every entry strictly negative."""
    values = as_array(a_log)
    if not np.all(np.isfinite(values)):
        raise NumericalError("A_log has non-finite entries")
    name = a_log.name.replace("A_log", "A") if isinstance(a_log, NamedTensor) else "A"
    return NamedTensor(name, -np.exp(np.minimum(values, defaults.A_LOG_MAX)))


def discretize(a: Array, delta: Array) -> NamedTensor:
    """ΔA[b,l,d,n] = exp(δ[b,l,d] · A[d,n]), exponent clamped to [-60, 0]."""
    av, dv = as_array(a), as_array(delta)
    if av.ndim != 2 or dv.ndim != 3 or dv.shape[-1] != av.shape[0]:
        raise DimensionError(f"discretize expects A D×N and delta B×L×D, got {av.shape} and {dv.shape}")
    exponent = np.clip(dv[..., None] * av, defaults.EXP_CLAMP_MIN, defaults.EXP_CLAMP_MAX)
    return NamedTensor("deltaA", np.exp(exponent))


def scan_recurrence(a_log: Array, d_skip: Array, theta: SelectiveInputs,
                    record: bool = False) -> Tuple[NamedTensor, Optional[ScanTrace]]:
    """Run the recurrence for fixed θ; only A_log and the skip vector vary."""
    theta.check()
    x, delta, b, c = theta.x, theta.delta, theta.b, theta.c
    bsz, length, d, n = theta.shape
    a = parameterize_a(a_log).data
    if a.shape != (d, n):
        raise DimensionError(f"A_log shape {a.shape} != {(d, n)}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("scan input has non-finite entries")

    delta_a = discretize(a, delta).data
    delta_bx = delta[..., None] * b[:, :, None, :] * x[..., None]

    h = np.zeros((bsz, d, n))
    y = np.empty((bsz, length, d))
    hidden = np.empty((bsz, length, d, n)) if record else None
    for t in range(length):
        h = delta_a[:, t] * h + delta_bx[:, t]
        if not np.all(np.isfinite(h)):
            raise NumericalError("non-finite hidden state", step=t)
        if hidden is not None:
            hidden[:, t] = h
        y[:, t] = np.einsum("bdn,bn->bd", h, c[:, t])
    y += as_array(d_skip) * x

    trace = None
    if record:
        trace = ScanTrace(
            hidden=NamedTensor("hidden", hidden),
            deltas=NamedTensor("deltas", delta),
            theta=theta,
        )
    return NamedTensor("ssm_out", y), trace


def selective_scan(layer: MambaLayer, x: Array,
                   record: bool = False) -> Tuple[NamedTensor, Optional[ScanTrace]]:
    """Selective scan of one layer on its scan input x (B×L×D)."""
    theta = layer.project(as_array(x))
    try:
        return scan_recurrence(layer.a_log, layer.d_skip, theta, record=record)
    except NumericalError as e:
        raise e.locate(layer=layer.index) from e
