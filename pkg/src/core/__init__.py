"""Dense tensor substrate."""

from .tensor import (
    NamedTensor,
    as_array,
    arg_largest_k,
    arg_smallest_k,
    matmul,
    spd_factor_solve,
    spd_inverse,
    spd_inverse_diag,
)

__all__ = [
    "NamedTensor",
    "as_array",
    "arg_largest_k",
    "arg_smallest_k",
    "matmul",
    "spd_factor_solve",
    "spd_inverse",
    "spd_inverse_diag",
]
