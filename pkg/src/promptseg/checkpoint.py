"""Checkpoint archive format.

A checkpoint is a ZIP archive with two members:

* ``manifest.json`` — ``{"format_version": 1, "model_config": {...},
  "extra": {...}}``, the config record as structured text.
* ``weights.bin`` — concatenated array records, each laid out as
  ``name_len:u32le | name:utf8 | dtype_len:u32le | dtype:utf8 |
  ndim:u32le | dims:u64le... | data:row-major bytes``.

The version field is mandatory; loading a different version fails.
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .errors import CheckpointError

FORMAT_VERSION = 1

_DTYPES = {
    "float32": (np.float32, torch.float32),
    "float64": (np.float64, torch.float64),
    "int64": (np.int64, torch.int64),
    "int32": (np.int32, torch.int32),
    "uint8": (np.uint8, torch.uint8),
    "bool": (np.bool_, torch.bool),
}


def _write_record(buf: io.BytesIO, name: str, array: np.ndarray) -> None:
    name_b = name.encode("utf-8")
    dtype_b = array.dtype.name.encode("utf-8")
    if array.dtype.name not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {array.dtype.name} for {name}")
    buf.write(struct.pack("<I", len(name_b)))
    buf.write(name_b)
    buf.write(struct.pack("<I", len(dtype_b)))
    buf.write(dtype_b)
    buf.write(struct.pack("<I", array.ndim))
    for d in array.shape:
        buf.write(struct.pack("<Q", d))
    buf.write(np.ascontiguousarray(array).tobytes())


def _read_records(data: bytes) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    off = 0
    n = len(data)
    while off < n:
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (dtype_len,) = struct.unpack_from("<I", data, off)
        off += 4
        dtype = data[off : off + dtype_len].decode("utf-8")
        off += dtype_len
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, off) if ndim else ()
        off += 8 * ndim
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for {name}")
        np_dtype = _DTYPES[dtype][0]
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = count * np.dtype(np_dtype).itemsize
        arr = np.frombuffer(data[off : off + nbytes], dtype=np_dtype).reshape(shape)
        off += nbytes
        out[name] = arr.copy()
    return out


def save_checkpoint(
    path: Path | str,
    model_config,
    state_dict: Mapping[str, torch.Tensor],
    extra: dict | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": model_config.to_dict() if hasattr(model_config, "to_dict") else model_config,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    for name in sorted(state_dict):
        _write_record(buf, name, state_dict[name].detach().cpu().numpy())
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        zf.writestr("weights.bin", buf.getvalue())


def load_checkpoint(path: Path | str) -> tuple[dict, dict[str, torch.Tensor], dict]:
    """Returns (model_config dict, state dict, extra)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            raw = zf.read("weights.bin")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version!r} != supported {FORMAT_VERSION}"
        )
    arrays = _read_records(raw)
    state = {
        name: torch.from_numpy(arr).to(_DTYPES[arr.dtype.name][1])
        for name, arr in arrays.items()
    }
    return manifest["model_config"], state, manifest.get("extra", {})


def load_model(path: Path | str):
    """Rebuild a SegModel from a checkpoint."""
    from .model import ModelConfig, SegModel

    config_dict, state, extra = load_checkpoint(path)
    config = ModelConfig.from_dict(config_dict)
    model = SegModel(config, seed=0)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise CheckpointError(
            f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}"
        )
    model.eval()
    return model, extra
