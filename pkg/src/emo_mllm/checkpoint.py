"""Parameter checkpoints.

Container: a NumPy ``.npz`` archive with one array per named parameter plus a
``__meta__`` entry holding JSON ``{"seed", "config_hash", "architecture_hash",
"config", "shapes", "dtypes"}``. Loading into an existing model only requires
the architecture hash to match, so training-only settings and ablations may differ.
Arrays are stored at full precision, so save/load is exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .config import make_config
from .errors import DataError
from .model import EmotionModel


def save_checkpoint(model: EmotionModel, path) -> Path:
    arrays = {name: p.detach().cpu().numpy() for name, p in model.named_parameters()}
    meta = {
        "seed": model.cfg.seed,
        "config_hash": model.cfg.hash(),
        "architecture_hash": model.cfg.architecture_hash(),
        "config": model.cfg.model_dump(mode="json"),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "dtypes": {k: str(v.dtype) for k, v in arrays.items()},
    }
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path) as z:
        if "__meta__" not in z:
            raise DataError(f"{path}: not a checkpoint (missing __meta__)")
        meta = json.loads(z["__meta__"].tobytes().decode())
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    for k, shape in meta["shapes"].items():
        if k not in arrays or list(arrays[k].shape) != shape:
            raise DataError(f"{path}: array {k} missing or mis-shaped")
    return meta, arrays


def load_checkpoint(path, model: EmotionModel | None = None) -> EmotionModel:
    meta, arrays = read_checkpoint(path)
    if model is None:
        model = EmotionModel(make_config(meta["config"]))
    elif model.cfg.architecture_hash() != meta["architecture_hash"]:
        raise DataError(f"{path}: architecture hash {meta['architecture_hash']} "
                        f"!= model {model.cfg.architecture_hash()}")
    params = dict(model.named_parameters())
    if set(params) != set(arrays):
        raise DataError(f"{path}: parameter names do not match the model")
    with torch.no_grad():
        for name, p in params.items():
            p.copy_(torch.from_numpy(arrays[name]))
    return model
