"""Sensitivity-aware sparsity allocation for in_proj / out_proj.

Modules are ranked by the trace of their input Gram (0 = least sensitive)
and rank id gets sparsity s + α − 2α·id/(N−1), so the most sensitive
module is pruned least and the mean over the pool is exactly s.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

from src.calibration.stats import GramAccumulator
from src.errors import ArgumentError, StateError

logger = logging.getLogger(__name__)

RANKED_MODULES = ("in_proj", "out_proj")
ALPHA_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ModuleSparsity:
    name: str
    score: float
    rank: int
    sparsity: float


@dataclass(frozen=True)
class SparsityPlan:
    """Ranked pool entries plus the global target used for every other module."""

    entries: Tuple[ModuleSparsity, ...]
    target: float
    alpha: float

    def sparsity_for(self, name: str) -> float:
        for entry in self.entries:
            if entry.name == name:
                return entry.sparsity
        return self.target

    def as_dict(self) -> Dict[str, float]:
        return {e.name: e.sparsity for e in self.entries}


def is_ranked_module(name: str) -> bool:
    parts = name.split(".")
    return len(parts) >= 3 and parts[-2] in RANKED_MODULES


def sensitivity_scores(grams: Dict[str, GramAccumulator],
                       names: Optional[Iterable[str]] = None) -> List[Tuple[str, float, int]]:
    """(name, trace, rank id) sorted ascending by trace, ties by name."""
    chosen = sorted(names) if names is not None else sorted(n for n in grams if is_ranked_module(n))
    if not chosen:
        raise StateError("no modules to rank")
    scored = []
    for name in chosen:
        if name not in grams:
            raise StateError(f"no Gram accumulated for {name}")
        scored.append((name, grams[name].trace()))
    scored.sort(key=lambda item: (item[1], item[0]))
    return [(name, score, rank) for rank, (name, score) in enumerate(scored)]


def allocate_sparsity(ranked: List[Tuple[str, float, int]], s: float, alpha: float) -> SparsityPlan:
    if not 0.0 <= s <= 1.0:
        raise ArgumentError(f"sparsity must lie in [0, 1], got {s}")
    if alpha < 0 or alpha > min(s, 1.0 - s) + ALPHA_TOLERANCE:
        raise ArgumentError(f"alpha={alpha} must lie in [0, min(s, 1 - s)] = [0, {min(s, 1.0 - s)}]")
    n = len(ranked)
    entries = []
    for name, score, rank in ranked:
        value = s if n == 1 else s + alpha - 2.0 * alpha * rank / (n - 1)
        entries.append(ModuleSparsity(name, float(score), int(rank), min(max(value, 0.0), 1.0)))
    plan = SparsityPlan(tuple(entries), s, alpha)
    logger.debug("sparsity plan: %s", plan.as_dict())
    return plan
