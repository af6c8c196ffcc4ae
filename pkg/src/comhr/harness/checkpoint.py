"""Checkpoints: one tensor container per parameter plus a JSON index."""

from __future__ import annotations

import json
import os

import numpy as np

from ..container import f32, load_tensor, save_tensor
from ..errors import ContainerError, MissingFileError
from ..model import CoMHR, ModelConfig

INDEX = "index.json"


def _filename(name):
    return name.replace("/", "_") + ".cmhr"


def quantize(model):
    """Round every parameter to float32 so a save/load cycle is exact."""
    for p in model.parameters():
        p.data = f32(p.data)
    return model


def save_checkpoint(model, directory, extra=None):
    os.makedirs(directory, exist_ok=True)
    params = {}
    for p in model.parameters():
        fname = _filename(p.name)
        save_tensor(os.path.join(directory, fname), p.data)
        params[p.name] = {"file": fname, "dims": list(p.data.shape)}
    index = {"params": params, "model": json.loads(json.dumps(_config_dict(model.config)))}
    if extra:
        index["extra"] = extra
    with open(os.path.join(directory, INDEX), "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    return os.path.join(directory, INDEX)


def _config_dict(config):
    import dataclasses

    return dataclasses.asdict(config)


def load_checkpoint(directory, model=None):
    """Load into ``model`` (or a fresh model built from the stored config)."""
    path = os.path.join(directory, INDEX)
    if not os.path.exists(path):
        raise MissingFileError(path)
    with open(path) as fh:
        index = json.load(fh)
    if model is None:
        model = CoMHR(ModelConfig(**index["model"]))
    entries = index["params"]
    for p in model.parameters():
        if p.name not in entries:
            raise ContainerError(f"checkpoint has no entry for parameter {p.name!r}")
        entry = entries[p.name]
        arr = load_tensor(os.path.join(directory, entry["file"]))
        if list(arr.shape) != list(p.data.shape) or list(entry["dims"]) != list(arr.shape):
            raise ContainerError(
                f"parameter {p.name!r}: stored dims {entry['dims']}, file dims {list(arr.shape)}, "
                f"model dims {list(p.data.shape)}"
            )
        p.data = np.array(arr, dtype=np.float64)
    return model
