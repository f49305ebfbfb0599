"""Checkpoint container: one .npz archive holding parameter arrays plus a
JSON header (kind, architecture, schedule, seed, config hash, shapes).

The header records every array's shape; loading verifies them so a
truncated or hand-edited archive is rejected instead of silently
reshaping.
"""

from __future__ import annotations

import json
from typing import Mapping

import numpy as np
import torch

HEADER_KEY = "__header__"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, params: Mapping[str, np.ndarray], meta: dict) -> None:
    arrays = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    header["shapes"] = {k: list(np.asarray(v).shape) for k, v in params.items()}
    np.savez_compressed(path, **arrays, **{HEADER_KEY: np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)})


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as z:
        if HEADER_KEY not in z:
            raise CheckpointError(f"{path}: missing checkpoint header")
        header = json.loads(bytes(z[HEADER_KEY]).decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
        params = {}
        for key, shape in header["shapes"].items():
            arr_key = f"param/{key}"
            if arr_key not in z:
                raise CheckpointError(f"{path}: parameter {key} listed in header but absent")
            arr = z[arr_key]
            if list(arr.shape) != list(shape):
                raise CheckpointError(
                    f"{path}: shape mismatch for {key}: header {shape}, array {list(arr.shape)}"
                )
            params[key] = arr
        extra = {k[len("param/"):] for k in z.files if k.startswith("param/")} - set(header["shapes"])
        if extra:
            raise CheckpointError(f"{path}: arrays not listed in header: {sorted(extra)}")
    return params, header


def state_dict_to_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_state_dict_from_arrays(module: torch.nn.Module, params: Mapping[str, np.ndarray]) -> None:
    state = {k: torch.from_numpy(np.asarray(v)) for k, v in params.items()}
    module.load_state_dict(state, strict=True)
