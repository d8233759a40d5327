"""Validated run configuration shared by every pruning method."""

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.errors import SurgeonError
from src.pruning.ssm_pruner import COLUMN, Pattern, parse_pattern
from utils import defaults

FIXTURE_PREFIX = "fixture:"
FIXTURES = ("fixture:random", "fixture:trained")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    checkpoint: str
    calib: str = "synthetic"
    nsamples: int = Field(defaults.NSAMPLES, ge=1)
    seqlen: int = Field(defaults.SEQLEN, ge=2)
    seed: int = Field(defaults.SEED, ge=0)
    sparsity: float = Field(0.5, ge=0.0, le=1.0)
    alpha: float = Field(defaults.ALPHA, ge=0.0, le=0.5)
    score: Literal["simplified", "full"] = "simplified"
    pattern: str = "unstructured"
    target: Literal["ssm", "ffn", "all"] = "ssm"
    blocksize: int = Field(defaults.BLOCKSIZE, ge=1)
    method: Literal["sparsessm", "magnitude"] = "sparsessm"
    report: Optional[str] = None
    out: Optional[str] = None
    verify: bool = False

    @field_validator("checkpoint")
    @classmethod
    def _known_fixture(cls, value: str) -> str:
        if value.startswith(FIXTURE_PREFIX) and value not in FIXTURES:
            raise ValueError(f"unknown fixture {value!r}; expected one of {FIXTURES}")
        return value

    @field_validator("pattern")
    @classmethod
    def _pattern_syntax(cls, value: str) -> str:
        try:
            return parse_pattern(value).label
        except SurgeonError as e:
            raise ValueError(str(e)) from e

    @model_validator(mode="after")
    def _pattern_scope(self) -> "RunConfig":
        if self.pattern == COLUMN and self.target == "ffn":
            raise ValueError("pattern=column prunes the SSM state and cannot be combined with target=ffn")
        return self

    @property
    def parsed_pattern(self) -> Pattern:
        return parse_pattern(self.pattern)

    @property
    def prunes_ssm(self) -> bool:
        return self.target in ("ssm", "all")

    @property
    def prunes_ffn(self) -> bool:
        return self.target in ("ffn", "all")

    def effective_alpha(self) -> float:
        """alpha clamped to [0, min(s, 1 - s)]."""
        return min(self.alpha, self.sparsity, 1.0 - self.sparsity)
