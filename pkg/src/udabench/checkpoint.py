"""Shared checkpoint format: manifest.json + params.bin (little-endian float32).

The manifest records a format version, arbitrary model metadata, and a
parameter index mapping each tensor name to its shape, dtype, and byte offset
inside params.bin. Loaders must reject unknown format versions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, DatasetIOError

CHECKPOINT_FORMAT_VERSION = "1"


def save_checkpoint(directory: str | Path, metadata: dict, state_dict: dict) -> Path:
    """Write a checkpoint directory; parameter order follows the state dict."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    blobs = []
    offset = 0
    for name, tensor in state_dict.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        index[name] = {
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
        }
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        **metadata,
        "params": index,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (directory / "params.bin").write_bytes(b"".join(blobs))
    return directory


def load_checkpoint(directory: str | Path) -> tuple[dict, dict]:
    """Read (metadata, state_dict) from a checkpoint directory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    params_path = directory / "params.bin"
    if not manifest_path.exists():
        raise DatasetIOError(f"missing manifest.json in checkpoint {directory}")
    if not params_path.exists():
        raise DatasetIOError(f"missing params.bin in checkpoint {directory}")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint format_version {version!r} "
            f"(expected {CHECKPOINT_FORMAT_VERSION!r})"
        )
    raw = params_path.read_bytes()
    state_dict = {}
    for name, entry in manifest["params"].items():
        if entry["dtype"] != "float32":
            raise ConfigError(f"parameter {name!r} has unsupported dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(raw):
            raise DatasetIOError(f"params.bin too short for parameter {name!r}")
        arr = np.frombuffer(raw[start:end], dtype="<f4").reshape(shape)
        state_dict[name] = torch.from_numpy(arr.copy())
    metadata = {k: v for k, v in manifest.items() if k not in ("params", "format_version")}
    return metadata, state_dict
