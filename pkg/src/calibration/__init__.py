"""Calibration data and streaming statistics."""

from .corpus import CalibrationSet, load_calibration, load_token_file, make_synthetic_corpus
from .stats import (
    FullScoreAccumulator,
    GramAccumulator,
    HiddenStats,
    accumulate_conv_gram,
    accumulate_gram,
    accumulate_stats,
    merge_stats,
)
from .runner import CalibrationResult, LayerCalibration, run_calibration

__all__ = [
    "CalibrationSet",
    "load_calibration",
    "load_token_file",
    "make_synthetic_corpus",
    "FullScoreAccumulator",
    "GramAccumulator",
    "HiddenStats",
    "accumulate_conv_gram",
    "accumulate_gram",
    "accumulate_stats",
    "merge_stats",
    "CalibrationResult",
    "LayerCalibration",
    "run_calibration",
]
