"""Prune report schema and its deterministic JSON form.

Reports are written with sorted keys and floats at 17 significant digits,
so equal runs produce byte-identical files and every float parses back to
the same value.
"""

import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.errors import FormatError
from utils import defaults

logger = logging.getLogger(__name__)

PRUNED_A_LOG_NOTE = (
    "pruned A_log entries are set to 0, which pins the state decay to exp(-delta) (A = -1); "
    "the state dimension itself is only removed by the column pattern"
)


class ModuleReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    kind: Literal["ssm", "ffn"]
    target_sparsity: float = Field(ge=0.0, le=1.0)
    achieved_sparsity: float = Field(ge=0.0, le=1.0)
    zeros: int = Field(ge=0)
    size: int = Field(ge=1)
    recon_error: float = Field(ge=0.0)

    @model_validator(mode="after")
    def _sparsity_is_zero_fraction(self) -> "ModuleReport":
        if self.zeros > self.size:
            raise ValueError(f"{self.name}: {self.zeros} zeros exceed size {self.size}")
        if self.achieved_sparsity != self.zeros / self.size:
            raise ValueError(f"{self.name}: achieved sparsity must equal zeros/size")
        return self


class PruneReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Literal["sparsessm", "magnitude"]
    score_mode: str
    pattern: str
    target: Literal["ssm", "ffn", "all"]
    seed: int
    config: Dict[str, Any]
    model: Dict[str, int]
    sparsity_plan: Dict[str, float] = Field(default_factory=dict)
    modules: List[ModuleReport] = Field(default_factory=list)
    perplexity_before: float = Field(ge=1.0)
    perplexity_after: float = Field(ge=1.0)
    total_params: int = Field(ge=1)
    zeroed_params: int = Field(ge=0)
    notes: List[str] = Field(default_factory=list)
    verify: Optional[Dict[str, Any]] = None

    @model_validator(mode="after")
    def _finite_perplexities(self) -> "PruneReport":
        for key in ("perplexity_before", "perplexity_after"):
            if not math.isfinite(getattr(self, key)):
                raise ValueError(f"{key} must be finite")
        if self.zeroed_params > self.total_params:
            raise ValueError("zeroed_params exceeds total_params")
        return self


def _format_float(value: float) -> str:
    if not math.isfinite(value):
        raise FormatError(f"report values must be finite, got {value}")
    text = format(value, f".{defaults.FLOAT_DIGITS}g")
    if not any(c in text for c in ".en"):
        text += ".0"
    return text


def encode(value: Any, level: int = 0) -> str:
    """JSON text with sorted keys, two-space indent and 17-digit floats."""
    pad, inner = "  " * level, "  " * (level + 1)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {encode(value[k], level + 1)}" for k in sorted(value, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        return "[\n" + ",\n".join(inner + encode(v, level + 1) for v in value) + "\n" + pad + "]"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _format_float(float(value))
    if value is None or isinstance(value, str):
        return json.dumps(value)
    raise FormatError(f"cannot encode {type(value).__name__} in a report")


def validate_report(report: Union[PruneReport, Dict[str, Any]]) -> PruneReport:
    try:
        if isinstance(report, PruneReport):
            return PruneReport.model_validate(report.model_dump())
        return PruneReport.model_validate(report)
    except ValidationError as e:
        raise FormatError(f"invalid prune report: {e}") from e


def emit_report(report: Union[PruneReport, Dict[str, Any]], path: Union[str, Path]) -> Path:
    """Validate, then write atomically."""
    checked = validate_report(report)
    text = encode(checked.model_dump(mode="json")) + "\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    logger.info("wrote report %s", path)
    return path


def load_report(path: Union[str, Path]) -> PruneReport:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path} is not valid JSON: {e}") from e
    return validate_report(data)
