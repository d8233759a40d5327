"""Pipeline manager that orchestrates one pruning run.

Stages run in a fixed order: load, calibrate, prune-ffn, prune-ssm,
evaluate, verify, emit. A failure inside a stage is re-raised as
`StageFailure` carrying the stage's exit code.
"""

import contextlib
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from src.calibration.corpus import CalibrationSet, load_calibration
from src.calibration.runner import CalibrationResult, LayerCalibration, run_calibration
from src.calibration.stats import HiddenStats, accumulate_stats
from src.errors import StateError, SurgeonError
from src.evaluation.metrics import count_zeros, perplexity, reconstruction_error, total_params
from src.evaluation.report import PRUNED_A_LOG_NOTE, ModuleReport, PruneReport, emit_report
from src.mamba.checkpoint import load_checkpoint, save_checkpoint
from src.mamba.fixtures import tiny_random_model, tiny_trained_model
from src.mamba.layer import MambaLayer, MambaModel
from src.mamba.scan import scan_recurrence
from src.oracles.oracles import (
    cross_entropy_over_diagonal_saliency,
    fd_hessian_diag,
    mask_reconstruction_error,
    spearman,
)
from src.pruning.allocation import SparsityPlan, allocate_sparsity, sensitivity_scores
from src.pruning.base_pruner import BasePruner
from src.pruning.ffn_pruner import PruneResult
from src.pruning.ssm_pruner import (
    COLUMN,
    importance_full,
    importance_simplified,
    magnitude_field,
    select_mask_l2,
    select_mask_time_frequency,
)
from src.utils.env import thread_limit
from .run_config import RunConfig

logger = logging.getLogger(__name__)

EXIT_CODES = {
    "config": 2,
    "load": 3,
    "calibrate": 4,
    "prune-ffn": 5,
    "prune-ssm": 6,
    "evaluate": 7,
    "emit": 8,
    "verify": 9,
}
LOCK_NAME = ".ssm-surgeon.lock"
VERIFY_SAMPLES = 4
VERIFY_STEPS = 8


class StageFailure(SurgeonError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.exit_code = EXIT_CODES[stage]
        self.cause = cause


@contextlib.contextmanager
def _dir_lock(directory: Path) -> Iterator[None]:
    """Exclusive lock file in `directory` for the lifetime of a run."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(str(lock), os.O_CREAT | os.O_EXCL | os.O_RDWR)
    except FileExistsError as e:
        raise StateError(f"{directory} is owned by another run (remove {lock} if stale)") from e
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        yield
    finally:
        os.close(fd)
        with contextlib.suppress(OSError):
            os.remove(lock)


def load_model(checkpoint: str, seed: int) -> MambaModel:
    if checkpoint == "fixture:random":
        return tiny_random_model(seed)
    if checkpoint == "fixture:trained":
        return tiny_trained_model(seed)
    return load_checkpoint(checkpoint)


def _recount(module: ModuleReport, tensor) -> ModuleReport:
    """Entry measured on the final tensor; column compaction drops x_proj rows after FFN pruning."""
    zeros = count_zeros(tensor)
    return ModuleReport(**{**module.model_dump(), "zeros": zeros, "size": tensor.size,
                           "achieved_sparsity": zeros / tensor.size})


@dataclass
class RunState:
    model: Optional[MambaModel] = None
    pruned: Optional[MambaModel] = None
    calib: Optional[CalibrationSet] = None
    heldout: Optional[CalibrationSet] = None
    dense_pass: Optional[CalibrationResult] = None
    plan: Optional[SparsityPlan] = None
    modules: List[ModuleReport] = field(default_factory=list)
    verify: Optional[Dict[str, Any]] = None
    report: Optional[PruneReport] = None


class PipelineManager:
    """Owns the output directory for one run and executes its stages."""

    def __init__(self, cfg: RunConfig, threads: Optional[int] = None):
        self.cfg = cfg
        self.threads = threads
        self.pruner: BasePruner = BasePruner.from_method(cfg.method, score=cfg.score, blocksize=cfg.blocksize)
        self.state = RunState()
        self.log: List[Dict[str, Any]] = []
        self._lock: Optional[contextlib.ExitStack] = None

    def __enter__(self):
        self._lock = contextlib.ExitStack()
        if self.cfg.out:
            try:
                self._lock.enter_context(_dir_lock(Path(self.cfg.out)))
            except SurgeonError as e:
                raise StageFailure("config", e) from e
        if self.threads is None:
            try:
                self.threads = thread_limit()
            except SurgeonError as e:
                self._lock.close()
                raise StageFailure("config", e) from e
        return self

    def __exit__(self, exc_type, exc, tb):
        if self._lock is not None:
            self._lock.close()
            self._lock = None

    @contextlib.contextmanager
    def stage(self, name: str) -> Iterator[None]:
        logger.info("stage %s: start", name)
        tick = time.perf_counter()
        try:
            yield
        except (SurgeonError, OSError) as e:
            self.log.append({"stage": name, "status": "error", "error": str(e)})
            logger.error("stage %s failed: %s", name, e)
            raise StageFailure(name, e) from e
        elapsed = time.perf_counter() - tick
        self.log.append({"stage": name, "status": "ok"})
        logger.info("stage %s: done in %.2fs", name, elapsed)

    # stages -----------------------------------------------------------------
    def load(self) -> None:
        with self.stage("load"):
            self.state.model = load_model(self.cfg.checkpoint, self.cfg.seed)
            self.state.pruned = self.state.model

    def calibrate(self) -> None:
        cfg, st = self.cfg, self.state
        with self.stage("calibrate"):
            vocab = st.model.config.vocab_size
            st.calib = load_calibration(cfg.calib, vocab, cfg.nsamples, cfg.seqlen, cfg.seed)
            st.heldout = load_calibration(cfg.calib, vocab, cfg.nsamples, cfg.seqlen, cfg.seed + 1)
            st.dense_pass = run_calibration(
                st.model, st.calib,
                full_score=cfg.prunes_ssm and cfg.score == "full" and cfg.method == "sparsessm",
                keep_scan_inputs=cfg.prunes_ssm or cfg.verify,
                threads=self.threads,
            )
            if cfg.prunes_ffn:
                alpha = cfg.effective_alpha()
                if alpha != cfg.alpha:
                    logger.warning("alpha %.4g clamped to %.4g for sparsity %.4g", cfg.alpha, alpha, cfg.sparsity)
                ranked = sensitivity_scores(st.dense_pass.grams())
                st.plan = allocate_sparsity(ranked, cfg.sparsity, alpha)

    def prune_ffn(self) -> None:
        cfg, st = self.cfg, self.state
        if not cfg.prunes_ffn:
            return
        if cfg.parsed_pattern.kind == "nm":
            logger.warning("pattern %s applies to A_log only; FFN modules are pruned unstructured", cfg.pattern)
        results: Dict[str, PruneResult] = {}

        def prune_layer(lc: LayerCalibration) -> MambaLayer:
            layer, per_module = self.pruner.prune_ffn_layer(lc.layer, lc, st.plan, threads=self.threads)
            results.update(per_module)
            return layer

        with self.stage("prune-ffn"):
            # inputs of layer i come from the already pruned layers < i
            st.pruned = run_calibration(st.model, st.calib, on_layer=prune_layer, threads=self.threads).model
            for name in sorted(results):
                res = results[name]
                zeros = count_zeros(res.weight)
                st.modules.append(ModuleReport(
                    name=name,
                    kind="ffn",
                    target_sparsity=st.plan.sparsity_for(name),
                    achieved_sparsity=zeros / res.weight.size,
                    zeros=zeros,
                    size=res.weight.size,
                    recon_error=res.recon_error,
                ))
                logger.info("%s: sparsity %.4f (target %.4f)", name, zeros / res.weight.size,
                            st.plan.sparsity_for(name))

    def prune_ssm(self) -> None:
        cfg, st = self.cfg, self.state
        if not cfg.prunes_ssm:
            return
        pattern = cfg.parsed_pattern
        target = pattern.n_zeros / pattern.m_group if pattern.kind == "nm" else cfg.sparsity
        with self.stage("prune-ssm"):
            layers = []
            for lc in st.dense_pass.layers:
                dense = st.pruned.layers[lc.index]
                pruned, mask = self.pruner.prune_ssm_layer(dense, lc, cfg.sparsity, pattern)
                error = reconstruction_error(dense, pruned, lc.scan_inputs)
                zeros = count_zeros(pruned.a_log)
                st.modules.append(ModuleReport(
                    name=pruned.a_log.name,
                    kind="ssm",
                    target_sparsity=target,
                    achieved_sparsity=zeros / pruned.a_log.size,
                    zeros=zeros,
                    size=pruned.a_log.size,
                    recon_error=error,
                ))
                if pattern.kind == COLUMN:
                    logger.info("layer %d: removed state columns %s", lc.index, list(mask.columns))
                else:
                    logger.info("layer %d: pruned %d/%d A_log entries", lc.index, mask.k_pruned, dense.a_log.size)
                layers.append(pruned)
            st.pruned = st.pruned.with_layers(layers)

    def evaluate(self) -> None:
        cfg, st = self.cfg, self.state
        with self.stage("evaluate"):
            before = perplexity(st.model, st.heldout.tokens())
            after = before if st.pruned.equals(st.model) else perplexity(st.pruned, st.heldout.tokens())
            logger.info("perplexity %.4f -> %.4f", before, after)
            tensors = st.pruned.tensors()
            zeroed = sum(count_zeros(t) for t in tensors.values())
            notes = [PRUNED_A_LOG_NOTE] if cfg.prunes_ssm else []
            st.report = PruneReport(
                method=cfg.method,
                score_mode=cfg.score,
                pattern=cfg.pattern,
                target=cfg.target,
                seed=cfg.seed,
                config=cfg.model_dump(),
                model=st.model.config.to_dict(),
                sparsity_plan=st.plan.as_dict() if st.plan is not None else {},
                modules=sorted((_recount(m, tensors[m.name]) for m in st.modules), key=lambda m: m.name),
                perplexity_before=before,
                perplexity_after=after,
                total_params=total_params(st.pruned),
                zeroed_params=zeroed,
                notes=notes,
            )

    def verify(self) -> None:
        """Oracle comparisons on a small slice of each layer's calibration inputs."""
        cfg, st = self.cfg, self.state
        if not cfg.verify:
            return
        with self.stage("verify"):
            layers = [_verify_layer(st.model.layers[lc.index], lc, cfg.sparsity) for lc in st.dense_pass.layers]
            st.verify = {
                "samples": min(VERIFY_SAMPLES, st.dense_pass.nsamples),
                "steps": min(VERIFY_STEPS, st.dense_pass.seqlen),
                "sparsity": cfg.sparsity,
                "layers": layers,
            }
            st.report = st.report.model_copy(update={"verify": st.verify})

    def emit(self) -> None:
        cfg, st = self.cfg, self.state
        with self.stage("emit"):
            if cfg.out:
                save_checkpoint(st.pruned, cfg.out)
            if cfg.report:
                emit_report(st.report, cfg.report)

    def run(self) -> PruneReport:
        self.load()
        self.calibrate()
        self.prune_ffn()
        self.prune_ssm()
        self.evaluate()
        self.verify()
        self.emit()
        return self.state.report


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _verify_layer(layer: MambaLayer, lc: LayerCalibration, sparsity: float) -> Dict[str, Any]:
    x = lc.scan_inputs[:VERIFY_SAMPLES, :VERIFY_STEPS]
    theta = layer.project(x)
    _, trace = scan_recurrence(layer.a_log, layer.d_skip, theta, record=True)
    stats = accumulate_stats(HiddenStats.empty(layer.index, *trace.hidden.shape[1:]), trace)
    simplified = importance_simplified(layer.a_log, stats)
    full = importance_full(layer.a_log, trace)
    fd = fd_hessian_diag(layer, theta=theta)
    saliency = cross_entropy_over_diagonal_saliency(fd, layer.a_log)
    return {
        "layer": layer.index,
        "spearman_full_vs_fd": _finite_or_none(spearman(full, saliency.saliency)),
        "spearman_simplified_vs_full": _finite_or_none(spearman(simplified.time_summed(), full)),
        "recon_frequency": mask_reconstruction_error(layer, select_mask_time_frequency(simplified, sparsity), theta=theta),
        "recon_l2": mask_reconstruction_error(layer, select_mask_l2(simplified, sparsity), theta=theta),
        "recon_magnitude": mask_reconstruction_error(
            layer, select_mask_time_frequency(magnitude_field(layer.a_log), sparsity), theta=theta),
    }
