"""Mamba model hyperparameters."""

from dataclasses import asdict, dataclass
from typing import Any, Dict

from src.errors import ArgumentError


@dataclass(frozen=True)
class MambaConfig:
    """Sizes of a Mamba language model.

    `d_inner` is the channel count D of every SSM and must be an integer
    multiple of `d_model`; `d_state` is the state width N.
    """

    n_layers: int
    d_model: int
    d_inner: int
    d_state: int
    d_conv: int
    dt_rank: int
    vocab_size: int

    def __post_init__(self):
        for key, value in asdict(self).items():
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ArgumentError(f"MambaConfig.{key} must be an integer >= 1, got {value!r}")
        if self.d_inner % self.d_model != 0:
            raise ArgumentError(
                f"d_inner={self.d_inner} must be an integer multiple of d_model={self.d_model}"
            )

    @property
    def expand(self) -> int:
        return self.d_inner // self.d_model

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MambaConfig":
        fields = ("n_layers", "d_model", "d_inner", "d_state", "d_conv", "dt_rank", "vocab_size")
        missing = [f for f in fields if f not in data]
        if missing:
            raise ArgumentError(f"MambaConfig is missing {missing}")
        return cls(**{f: data[f] for f in fields})
