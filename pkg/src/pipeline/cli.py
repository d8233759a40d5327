"""Command-line entry point: prune a Mamba checkpoint in one shot.

Example:

    python main.py --checkpoint fixture:trained --sparsity 0.5 --target all \
        --report out/report.json --out out/pruned
"""

import argparse
import logging
from typing import List, Optional

from pydantic import ValidationError

from src.errors import SurgeonError
from src.utils.env import load_envs, log_level
from utils import defaults
from .pipeline_manager import EXIT_CODES, PipelineManager, StageFailure
from .run_config import RunConfig

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssm-surgeon",
        description="Training-free one-shot pruning of Mamba state-space models.",
    )
    parser.add_argument("--checkpoint", required=True,
                        help="checkpoint directory, or fixture:random / fixture:trained")
    parser.add_argument("--calib", default="synthetic", help="token file path or 'synthetic'")
    parser.add_argument("--nsamples", type=int, default=defaults.NSAMPLES)
    parser.add_argument("--seqlen", type=int, default=defaults.SEQLEN)
    parser.add_argument("--seed", type=int, default=defaults.SEED)
    parser.add_argument("--sparsity", type=float, default=0.5)
    parser.add_argument("--alpha", type=float, default=defaults.ALPHA,
                        help="sparsity deviation for the in_proj/out_proj sensitivity ranking")
    parser.add_argument("--score", choices=("simplified", "full"), default="simplified")
    parser.add_argument("--pattern", choices=("unstructured", "2:4", "4:8", "column"), default="unstructured")
    parser.add_argument("--target", choices=("ssm", "ffn", "all"), default="ssm")
    parser.add_argument("--blocksize", type=int, default=defaults.BLOCKSIZE)
    parser.add_argument("--method", choices=("sparsessm", "magnitude"), default="sparsessm")
    parser.add_argument("--report", default=None, help="write the JSON prune report here")
    parser.add_argument("--out", default=None, help="directory for the pruned checkpoint")
    parser.add_argument("--verify", action="store_true", help="append oracle comparisons to the report")
    return parser


def run_pipeline(cfg: RunConfig) -> int:
    """Run every stage; 0 on success, the failing stage's exit code otherwise."""
    try:
        with PipelineManager(cfg) as manager:
            manager.run()
    except StageFailure as e:
        logger.error("%s (exit %d)", e, e.exit_code)
        return e.exit_code
    return 0


def run_baseline_magnitude(cfg: RunConfig) -> int:
    """Same pipeline with magnitude importance for every module."""
    return run_pipeline(cfg.model_copy(update={"method": "magnitude"}))


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(**vars(args))


def main(argv: Optional[List[str]] = None) -> int:
    dotenvs = load_envs()
    logging.basicConfig(level=log_level(), format=LOG_FORMAT)
    if dotenvs:
        logger.debug("loaded environment from %s", ", ".join(dotenvs))
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ValidationError, SurgeonError) as e:
        logger.error("invalid configuration: %s", e)
        return EXIT_CODES["config"]

    try:
        if cfg.method == "magnitude":
            return run_baseline_magnitude(cfg)
        return run_pipeline(cfg)
    except Exception:
        logger.exception("unexpected failure")
        return 1
