"""End-to-end pruning pipeline and CLI."""

from .cli import build_parser, main, run_baseline_magnitude, run_pipeline
from .pipeline_manager import EXIT_CODES, PipelineManager, StageFailure
from .run_config import RunConfig

__all__ = [
    "build_parser",
    "main",
    "run_baseline_magnitude",
    "run_pipeline",
    "EXIT_CODES",
    "PipelineManager",
    "StageFailure",
    "RunConfig",
]
