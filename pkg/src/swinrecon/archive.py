"""Single-file parameter archives.

Layout::

    bytes 0-7    magic  b"SWRARCH\\0"
    bytes 8-11   format version, uint32 little-endian
    bytes 12-15  header length n, uint32 little-endian
    n bytes      UTF-8 JSON header: {"meta": {...}, "arrays": [{name, shape, dtype, offset, nbytes}]}
    rest         concatenated little-endian raw array data (row-major)

``meta`` carries the model config and role tag (``G``, ``D1``, ``D2-edge``,
``D2-texture``) or, for training checkpoints, the full run state.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SWRARCH\0"
VERSION = 1
HEADER = struct.Struct("<8sII")
DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "u1"}


class ArchiveError(ValueError):
    pass


def _to_numpy(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    return np.asarray(value)


def save_archive(path, arrays: dict, meta: dict) -> None:
    entries, chunks, offset = [], [], 0
    for name, value in arrays.items():
        arr = _to_numpy(value)
        dtype = arr.dtype.name
        if dtype not in DTYPES:
            raise ArchiveError(f"array {name!r} has unsupported dtype {dtype}")
        data = np.ascontiguousarray(arr, dtype=DTYPES[dtype]).tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset, "nbytes": len(data)}
        )
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ArchiveError(f"{path}: truncated archive")
    magic, version, n = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ArchiveError(f"{path}: not a parameter archive")
    if version != VERSION:
        raise ArchiveError(f"{path}: archive version {version} unsupported")
    try:
        header = json.loads(raw[HEADER.size : HEADER.size + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: unreadable header") from exc
    base = HEADER.size + n
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        blob = raw[start : start + e["nbytes"]]
        if len(blob) != e["nbytes"]:
            raise ArchiveError(f"{path}: array {e['name']!r} is truncated")
        arrays[e["name"]] = np.frombuffer(blob, dtype=DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def module_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + k: v for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, arrays: dict, prefix: str = "") -> None:
    state = {
        k[len(prefix):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix)
    }
    ref = module.state_dict()
    missing = set(ref) - set(state)
    if missing:
        raise ArchiveError(f"archive lacks parameters: {sorted(missing)[:5]}")
    module.load_state_dict({k: state[k].to(ref[k].dtype) for k in ref})


def save_model(path, module: torch.nn.Module, role: str, config: dict) -> None:
    save_archive(path, module_arrays(module), {"role": role, "config": config})
