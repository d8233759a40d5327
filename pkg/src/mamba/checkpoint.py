"""Checkpoint directory: `manifest.json` plus one little-endian float32 blob.

Manifest schema::

    {"format": "ssm-surgeon/1",
     "config": {...MambaConfig...},
     "tensors": [{"name", "shape", "dtype": "f32", "file", "byte_offset"}, ...]}
"""

import json
import logging
import os
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from src.core.tensor import NamedTensor
from src.errors import FormatError, SurgeonError
from .config import MambaConfig
from .layer import LAYER_PARAMS, MambaModel, layer_from_tensors

logger = logging.getLogger(__name__)

FORMAT = "ssm-surgeon/1"
MANIFEST = "manifest.json"
BLOB = "tensors.bin"
DTYPE = "f32"

PathLike = Union[str, Path]


def expected_shapes(config: MambaConfig, states: Dict[int, int]) -> Dict[str, Tuple[int, ...]]:
    """Tensor name -> shape; `states[i]` is layer i's (possibly compacted) state width."""
    d, r, k = config.d_inner, config.dt_rank, config.d_conv
    shapes: Dict[str, Tuple[int, ...]] = {"embedding.weight": (config.vocab_size, config.d_model)}
    for i in range(config.n_layers):
        n = states.get(i, config.d_state)
        per_layer = {
            "in_proj.weight": (2 * d, config.d_model),
            "conv1d.weight": (d, k),
            "conv1d.bias": (d,),
            "x_proj.weight": (r + 2 * n, d),
            "dt_proj.weight": (d, r),
            "dt_proj.bias": (d,),
            "out_proj.weight": (config.d_model, d),
            "ssm.A_log": (d, n),
            "ssm.D": (d,),
        }
        for key, _ in LAYER_PARAMS:
            shapes[f"layers.{i}.{key}"] = per_layer[key]
    for i in range(config.n_layers + 1):
        shapes[f"norm.{i}.weight"] = (config.d_model,)
    shapes["lm_head.weight"] = (config.vocab_size, config.d_model)
    return shapes


def save_checkpoint(model: MambaModel, path: PathLike) -> Path:
    """Write `model` to directory `path` (created if missing)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blob_tmp = root / (BLOB + ".tmp")
    with open(blob_tmp, "wb") as f:
        for name, tensor in model.tensors().items():
            raw = tensor.astype_f32().tobytes(order="C")
            f.write(raw)
            entries.append({
                "name": name,
                "shape": list(tensor.shape),
                "dtype": DTYPE,
                "file": BLOB,
                "byte_offset": offset,
            })
            offset += len(raw)
    os.replace(blob_tmp, root / BLOB)
    manifest = {"format": FORMAT, "config": model.config.to_dict(), "tensors": entries}
    manifest_tmp = root / (MANIFEST + ".tmp")
    with open(manifest_tmp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(manifest_tmp, root / MANIFEST)
    logger.info("saved checkpoint %s (%d tensors, %d bytes)", root, len(entries), offset)
    return root


def _read_manifest(root: Path) -> dict:
    try:
        with open(root / MANIFEST, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise FormatError(f"no {MANIFEST} in {root}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{MANIFEST} is not valid JSON: {e}") from e
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise FormatError(f"unsupported checkpoint format {manifest.get('format') if isinstance(manifest, dict) else None!r}")
    if not isinstance(manifest.get("tensors"), list) or not isinstance(manifest.get("config"), dict):
        raise FormatError("manifest needs a 'config' object and a 'tensors' list")
    return manifest


def _is_count(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def _check_entry(entry) -> dict:
    """One tensor-table row with well-typed fields."""
    if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
        raise FormatError(f"tensor entry must be an object with a string name, got {entry!r}")
    name = entry["name"]
    shape = entry.get("shape")
    if not isinstance(shape, list) or not all(_is_count(s) for s in shape):
        raise FormatError(f"shape must be a list of non-negative integers, got {shape!r}", tensor=name)
    if not _is_count(entry.get("byte_offset")):
        raise FormatError(f"byte_offset must be a non-negative integer, got {entry.get('byte_offset')!r}",
                          tensor=name)
    fname = entry.get("file", BLOB)
    if not isinstance(fname, str) or not fname or Path(fname).name != fname:
        raise FormatError(f"blob file must be a plain file name, got {fname!r}", tensor=name)
    return entry


def load_checkpoint(path: PathLike) -> MambaModel:
    """Read a checkpoint directory written by `save_checkpoint`."""
    root = Path(path)
    manifest = _read_manifest(root)
    try:
        config = MambaConfig.from_dict(manifest["config"])
    except SurgeonError as e:
        raise FormatError(f"bad model config: {e}") from e

    entries = {}
    for entry in manifest["tensors"]:
        name = _check_entry(entry)["name"]
        if name in entries:
            raise FormatError("duplicate tensor entry", tensor=name)
        entries[name] = entry

    states = {}
    for i in range(config.n_layers):
        a_log = entries.get(f"layers.{i}.ssm.A_log")
        if a_log is not None and len(a_log["shape"]) == 2:
            states[i] = a_log["shape"][1]
            if not 1 <= states[i] <= config.d_state:
                raise FormatError(f"state width must be in 1..{config.d_state}", tensor=f"layers.{i}.ssm.A_log")
    shapes = expected_shapes(config, states)

    for name in entries:
        if name not in shapes:
            raise FormatError("unknown tensor name", tensor=name)
    for name in shapes:
        if name not in entries:
            raise FormatError("tensor missing from manifest", tensor=name)

    blobs: Dict[str, bytes] = {}
    tensors: Dict[str, NamedTensor] = {}
    for name, shape in shapes.items():
        entry = entries[name]
        if entry.get("dtype") != DTYPE:
            raise FormatError(f"unsupported dtype {entry.get('dtype')!r}", tensor=name)
        if tuple(entry["shape"]) != shape:
            raise FormatError(f"shape {entry.get('shape')} does not match expected {list(shape)}", tensor=name)
        fname = entry.get("file", BLOB)
        if fname not in blobs:
            try:
                blobs[fname] = (root / fname).read_bytes()
            except FileNotFoundError as e:
                raise FormatError(f"blob file {fname} not found", tensor=name) from e
        blob = blobs[fname]
        count = int(np.prod(shape))
        offset = entry["byte_offset"]
        if offset + 4 * count > len(blob):
            raise FormatError("truncated blob", tensor=name)
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[name] = NamedTensor(name, values.astype(np.float64))

    layers = [layer_from_tensors(i, tensors) for i in range(config.n_layers)]
    norms = tuple(tensors[f"norm.{i}.weight"] for i in range(config.n_layers + 1))
    model = MambaModel(
        config=config,
        embedding=tensors["embedding.weight"],
        layers=tuple(layers),
        norms=norms,
        lm_head=tensors["lm_head.weight"],
    )
    logger.info("loaded checkpoint %s (%d layers)", root, config.n_layers)
    return model
