"""Checkpoint container: a zip with a JSON manifest and raw little-endian blobs.

Each tensor keeps its native dtype (float32 for network weights, float64 for
the memory bank) so that resuming reproduces an uninterrupted run exactly.
"""

from __future__ import annotations

import json
import os
import zipfile
from pathlib import Path

import numpy as np

FORMAT = "dogclr-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed zip timestamps keep files byte-stable


def _le(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def save(path, arrays: dict, meta: dict) -> Path:
    """Write ``arrays`` (name -> ndarray) and ``meta`` atomically to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blobs = []
    payload = {}
    for i, (name, arr) in enumerate(arrays.items()):
        a = _le(np.asarray(arr))
        fname = f"blobs/{i:04d}.bin"
        blobs.append({"name": name, "file": fname, "dtype": a.dtype.str, "shape": list(a.shape)})
        payload[fname] = a.tobytes()
    manifest = {"format": FORMAT, "version": VERSION, "blobs": blobs, **meta}
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(zipfile.ZipInfo("manifest.json", _EPOCH),
                    json.dumps(manifest, sort_keys=True, indent=1))
        for fname, data in payload.items():
            info = zipfile.ZipInfo(fname, _EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, data)
    os.replace(tmp, path)
    return path


def load(path) -> tuple[dict, dict]:
    """Return (arrays, manifest)."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{path} is not a {FORMAT} file")
        arrays = {}
        for b in manifest["blobs"]:
            raw = zf.read(b["file"])
            a = np.frombuffer(raw, dtype=np.dtype(b["dtype"])).reshape(b["shape"])
            arrays[b["name"]] = a.astype(a.dtype.newbyteorder("="))
    return arrays, manifest
