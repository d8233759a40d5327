"""Dense tensor substrate for the pruners.

`NamedTensor` is a named float64 array that serializes as float32. The
operations here are the only linear-algebra entry points the rest of the
package relies on: matrix product, SPD solves and top-k selection. Ties in
every selection resolve to the lowest flat index.
"""

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from src.errors import ArgumentError, DimensionError, NumericalError

MAX_RANK = 4

ArrayLike = Union[np.ndarray, Sequence[float]]


@dataclass(frozen=True)
class NamedTensor:
    """Immutable named array.

    `data` is stored as a read-only contiguous float64 array; the shape is
    the array's shape. Rank is limited to 1..4 and every dimension is >= 1.
    """

    name: str
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim < 1 or arr.ndim > MAX_RANK:
            raise DimensionError(f"{self.name}: rank must be in 1..{MAX_RANK}, got {arr.ndim}")
        if any(d < 1 for d in arr.shape):
            raise DimensionError(f"{self.name}: dimensions must be >= 1, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def array(self) -> np.ndarray:
        """Writable float64 copy of the data."""
        return np.array(self.data, dtype=np.float64)

    def astype_f32(self) -> np.ndarray:
        """Little-endian float32 view used for serialization."""
        return self.data.astype("<f4")

    def renamed(self, name: str) -> "NamedTensor":
        return NamedTensor(name, self.data)

    def with_data(self, values: ArrayLike) -> "NamedTensor":
        return NamedTensor(self.name, np.asarray(values, dtype=np.float64))

    def equals(self, other: "NamedTensor") -> bool:
        return self.name == other.name and self.shape == other.shape and bool(np.array_equal(self.data, other.data))


def as_array(x: Union[NamedTensor, np.ndarray]) -> np.ndarray:
    """Underlying float64 array of a tensor or array-like."""
    return x.data if isinstance(x, NamedTensor) else np.asarray(x, dtype=np.float64)


def matmul(a: NamedTensor, b: NamedTensor, name: str = "") -> NamedTensor:
    """Matrix product of an m×k and a k×n tensor."""
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise DimensionError(f"matmul expects rank-2 tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return NamedTensor(name or f"{a.name}@{b.name}", a.data @ b.data)


def _cholesky(h: np.ndarray):
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionError(f"expected a square matrix, got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise NumericalError("matrix has non-finite entries; increase damping")
    try:
        return linalg.cho_factor(h, lower=False, check_finite=False)
    except linalg.LinAlgError as e:
        raise NumericalError(f"matrix is not positive definite ({e}); increase damping") from e


def spd_factor_solve(h: Union[NamedTensor, np.ndarray],
                     rhs: Union[NamedTensor, np.ndarray]) -> np.ndarray:
    """Solve h·x = rhs for symmetric positive-definite h via Cholesky."""
    hm = as_array(h)
    r = as_array(rhs)
    if r.shape[0] != hm.shape[0]:
        raise DimensionError(f"rhs rows {r.shape[0]} do not match matrix size {hm.shape[0]}")
    factor = _cholesky(hm)
    return linalg.cho_solve(factor, r, check_finite=False)


def spd_inverse(h: Union[NamedTensor, np.ndarray]) -> np.ndarray:
    """Inverse of an SPD matrix, symmetrized."""
    hm = as_array(h)
    inv = spd_factor_solve(hm, np.eye(hm.shape[0]))
    return 0.5 * (inv + inv.T)


def spd_inverse_diag(h: Union[NamedTensor, np.ndarray]) -> np.ndarray:
    """Diagonal of the inverse of an SPD matrix."""
    return np.diag(spd_inverse(h)).copy()


def _check_k(values: np.ndarray, k: int) -> None:
    if not 0 <= k <= values.size:
        raise ArgumentError(f"k={k} out of range for {values.size} values")


def _ascending_order(values: Iterable[float]) -> np.ndarray:
    # stable sort: equal values keep ascending flat index
    return np.argsort(np.asarray(values, dtype=np.float64).ravel(), kind="stable")


def arg_smallest_k(values: ArrayLike, k: int) -> np.ndarray:
    """Flat indices of the k smallest values, in selection order."""
    v = np.asarray(values, dtype=np.float64).ravel()
    _check_k(v, k)
    return _ascending_order(v)[:k]


def arg_largest_k(values: ArrayLike, k: int) -> np.ndarray:
    """Flat indices of the k largest values.

    Uses the same (value, flat index) total order as `arg_smallest_k`, so
    `arg_smallest_k(v, k)` and `arg_largest_k(v, n - k)` partition the
    index set.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    _check_k(v, k)
    order = _ascending_order(v)
    return order[v.size - k:][::-1]
