"""Versioned JSON checkpoints.

Parameter values are stored as decimal text with 17 significant digits,
which round-trips IEEE float64 exactly, so a reloaded model reproduces
predictions bit for bit.
"""

import hashlib
import json

import numpy as np

from .data import NormalizationStats
from .errors import CheckpointError
from .model import DANNModel, ModelConfig, RegressionModel

FORMAT_VERSION = 1


def _encode_array(arr: np.ndarray):
    return {"shape": list(arr.shape),
            "values": [f"{v:.17g}" for v in arr.reshape(-1)]}


def _decode_array(obj, name: str) -> np.ndarray:
    values = np.array([float(v) for v in obj["values"]], dtype=np.float64)
    shape = tuple(obj["shape"])
    if values.size != int(np.prod(shape)):
        raise CheckpointError(f"parameter {name}: {values.size} values for shape {shape}")
    return values.reshape(shape)


def config_hash(cfg_dict: dict) -> str:
    return hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()


def save_checkpoint(path, model, stats: NormalizationStats | None = None,
                    training_config: dict | None = None, seed: int | None = None):
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "dann" if isinstance(model, DANNModel) else "regression",
        "architecture": model.cfg.to_dict(),
        "seed": model.cfg.seed if seed is None else seed,
        "training_config_hash": config_hash(training_config) if training_config else None,
        "training_config": training_config,
        "params": {name: _encode_array(p.data) for name, p in model.named_parameters()},
        "buffers": {name: _encode_array(b) for name, b in model.named_buffers()},
        "normalization": stats.to_dict() if stats is not None else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Rebuild (model, stats, meta) from a checkpoint file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None

    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint format version {version!r}")
    try:
        cfg = ModelConfig(**doc["architecture"])
        kind = doc["kind"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed architecture section: {exc}") from None
    if kind == "dann":
        model = DANNModel(cfg)
    elif kind == "regression":
        model = RegressionModel(cfg)
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")

    saved = doc.get("params", {})
    expected = dict(model.named_parameters())
    if set(saved) != set(expected):
        extra = sorted(set(saved) - set(expected))
        missing = sorted(set(expected) - set(saved))
        raise CheckpointError(
            f"parameter names do not match architecture (missing {missing}, extra {extra})")
    for name, tensor in expected.items():
        arr = _decode_array(saved[name], name)
        if arr.shape != tensor.data.shape:
            raise CheckpointError(
                f"parameter {name}: shape {arr.shape} does not match {tensor.data.shape}")
        tensor.data = arr

    buffers = dict(model.named_buffers())
    for name, obj in doc.get("buffers", {}).items():
        if name not in buffers:
            raise CheckpointError(f"unknown buffer {name}")
        arr = _decode_array(obj, name)
        if arr.shape != buffers[name].shape:
            raise CheckpointError(f"buffer {name}: shape mismatch")
        buffers[name][...] = arr

    stats = None
    if doc.get("normalization") is not None:
        stats = NormalizationStats.from_dict(doc["normalization"])
    meta = {"seed": doc.get("seed"), "kind": kind,
            "training_config": doc.get("training_config"),
            "training_config_hash": doc.get("training_config_hash")}
    return model, stats, meta
