"""Top-level package for ssm-surgeon source."""

__all__ = ["calibration", "core", "evaluation", "mamba", "oracles", "pipeline", "pruning"]
