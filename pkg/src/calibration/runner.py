"""Instrumented calibration passes over a Mamba model.

The pass is layer-major: every calibration sample goes through layer i
(one recorded forward per sample), layer i's statistics are reduced in
sample order, an optional `on_layer` hook may swap the layer (for example
with a pruned copy), and the samples then continue into layer i + 1
through whichever layer the hook returned.
"""

import concurrent.futures
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.errors import NumericalError
from src.mamba.block import check_tokens, embed, residual_block
from src.mamba.layer import MambaLayer, MambaModel
from src.mamba.scan import ScanTrace
from src.utils.env import thread_limit
from .corpus import CalibrationSet
from .stats import (
    FullScoreAccumulator,
    GramAccumulator,
    HiddenStats,
    accumulate_conv_gram,
    accumulate_gram,
    accumulate_stats,
)

logger = logging.getLogger(__name__)

LINEAR_MODULES = ("in_proj", "x_proj", "dt_proj", "out_proj")
CONV_MODULE = "conv1d"


def module_name(index: int, module: str) -> str:
    return f"layers.{index}.{module}.weight"


@dataclass
class LayerCalibration:
    """Everything one calibration pass learned about one layer.

    `layer` is the layer the samples were run through; `grams` is keyed by
    weight tensor name; `scan_inputs` (B×L×D) is only kept on request.
    """

    index: int
    layer: MambaLayer
    stats: HiddenStats
    grams: Dict[str, GramAccumulator]
    full: Optional[FullScoreAccumulator] = None
    scan_inputs: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class CalibrationResult:
    layers: List[LayerCalibration]
    model: MambaModel
    nsamples: int
    seqlen: int

    def layer(self, index: int) -> LayerCalibration:
        return self.layers[index]

    def grams(self) -> Dict[str, GramAccumulator]:
        out: Dict[str, GramAccumulator] = {}
        for lc in self.layers:
            out.update(lc.grams)
        return out


LayerHook = Callable[[LayerCalibration], Optional[MambaLayer]]


def _empty_grams(layer: MambaLayer) -> Dict[str, GramAccumulator]:
    widths = {
        "in_proj": layer.d_model,
        "x_proj": layer.d_inner,
        "dt_proj": layer.dt_rank,
        "out_proj": layer.d_inner,
    }
    grams = {module_name(layer.index, m): GramAccumulator.empty(module_name(layer.index, m), widths[m])
             for m in LINEAR_MODULES}
    conv = module_name(layer.index, CONV_MODULE)
    grams[conv] = GramAccumulator.empty(conv, layer.d_conv, channels=layer.d_inner)
    return grams


def _stream_samples(model: MambaModel, index: int, layer: MambaLayer, hidden: np.ndarray,
                    record: bool, threads: int) -> Iterator[Tuple[np.ndarray, Optional[ScanTrace]]]:
    """Per-sample residual block in sample order, at most `threads` samples in flight."""

    def one(b: int):
        try:
            return residual_block(model, index, hidden[b:b + 1], record=record, layer=layer)
        except NumericalError as e:
            raise e.locate(layer=index, sample=b) from e

    n = hidden.shape[0]
    if threads <= 1:
        for b in range(n):
            yield one(b)
        return
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, n, threads):
            yield from pool.map(one, range(start, min(start + threads, n)))


@dataclass
class _LayerReducer:
    """Folds one sample's trace at a time into a layer's statistics."""

    layer: MambaLayer
    stats: HiddenStats
    grams: Dict[str, GramAccumulator]
    full: Optional[FullScoreAccumulator]
    scan_inputs: Optional[List[np.ndarray]]

    @classmethod
    def start(cls, layer: MambaLayer, length: int, full_score: bool, keep_scan_inputs: bool) -> "_LayerReducer":
        i = layer.index
        return cls(
            layer=layer,
            stats=HiddenStats.empty(i, length, layer.d_inner, layer.d_state),
            grams=_empty_grams(layer),
            full=FullScoreAccumulator.empty(i, length, layer.d_inner, layer.d_state) if full_score else None,
            scan_inputs=[] if keep_scan_inputs else None,
        )

    def add(self, trace: ScanTrace) -> None:
        i = self.layer.index
        self.stats = accumulate_stats(self.stats, trace)
        if self.full is not None:
            self.full = self.full.add(self.layer.a_log, trace)
        for m in LINEAR_MODULES:
            key = module_name(i, m)
            self.grams[key] = accumulate_gram(self.grams[key], trace.inputs[m].T)
        conv = module_name(i, CONV_MODULE)
        self.grams[conv] = accumulate_conv_gram(self.grams[conv], trace.inputs[CONV_MODULE])
        if self.scan_inputs is not None:
            self.scan_inputs.append(trace.inputs["scan"])

    def finish(self) -> LayerCalibration:
        return LayerCalibration(
            index=self.layer.index,
            layer=self.layer,
            stats=self.stats,
            grams=self.grams,
            full=self.full,
            scan_inputs=np.concatenate(self.scan_inputs, axis=0) if self.scan_inputs is not None else None,
        )


def run_calibration(model: MambaModel, calib: CalibrationSet, on_layer: Optional[LayerHook] = None,
                    full_score: bool = False, keep_scan_inputs: bool = False,
                    threads: Optional[int] = None) -> CalibrationResult:
    """One instrumented forward per calibration sample, layer by layer.

    Each sample's trace is folded into the statistics as soon as its forward
    finishes; only the block outputs are kept for the next layer.
    Deterministic given (model, calib): per-sample forwards may run on
    worker threads but every reduction happens in sample order.
    """
    ids = check_tokens(model, calib.tokens())
    threads = thread_limit() if threads is None else threads
    hidden = embed(model, ids)
    results: List[LayerCalibration] = []

    for i in range(model.config.n_layers):
        layer = model.layers[i]
        reducer = _LayerReducer.start(layer, ids.shape[1], full_score, keep_scan_inputs)
        outputs = []
        for out, trace in _stream_samples(model, i, layer, hidden, record=True, threads=threads):
            reducer.add(trace)
            outputs.append(out)
        lc = reducer.finish()
        results.append(lc)
        logger.debug("layer %d calibrated on %d samples", i, lc.stats.n_seen)

        if on_layer is not None:
            replacement = on_layer(lc)
            if replacement is not None and replacement is not layer:
                model = model.with_layer(replacement)
                outputs = [out for out, _ in _stream_samples(model, i, replacement, hidden,
                                                             record=False, threads=threads)]
        hidden = np.concatenate(outputs, axis=0)

    logger.info("calibrated %d layers on %d samples of length %d",
                model.config.n_layers, ids.shape[0], ids.shape[1])
    return CalibrationResult(layers=results, model=model, nsamples=ids.shape[0], seqlen=ids.shape[1])
