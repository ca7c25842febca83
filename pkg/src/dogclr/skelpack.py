"""SKELPACK container: one JSON header line followed by little-endian float32 data.

Header keys: ``version``, ``C``, ``T``, ``V``, ``N``, ``dtype`` ("f32le") and
``labels`` (one entry per sample, ``null`` when unlabeled). Extra keys are
carried through untouched. Payload order is (sample, channel, frame, joint).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import SkelpackError
from .skeleton import GSBP, DatasetSplit, SkeletonGraph, SkeletonSequence

VERSION = 1
_DTYPE = np.dtype("<f4")


def write_skelpack(path, array, labels=None, **extra) -> Path:
    a = np.asarray(array)
    if a.ndim != 4:
        raise SkelpackError(f"expected (N, C, T, V) array, got shape {a.shape}")
    N, C, T, V = a.shape
    if labels is None:
        labels = [None] * N
    labels = [None if l is None or l == -1 else int(l) for l in labels]
    if len(labels) != N:
        raise SkelpackError(f"{len(labels)} labels for {N} samples")
    header = {"version": VERSION, "C": C, "T": T, "V": V, "N": N, "dtype": "f32le", "labels": labels}
    for k, v in extra.items():
        if k in header:
            raise SkelpackError(f"extra key {k!r} collides with a reserved header field")
        header[k] = v
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(np.ascontiguousarray(a, dtype=_DTYPE).tobytes())
    os.replace(tmp, path)
    return path


def read_skelpack(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as f:
        line = f.readline()
        payload = f.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SkelpackError(f"{path}: bad header line ({e})") from None
    for key in ("version", "C", "T", "V", "N", "dtype", "labels"):
        if key not in header:
            raise SkelpackError(f"{path}: header is missing {key!r}")
    if header["dtype"] != "f32le":
        raise SkelpackError(f"{path}: unsupported dtype {header['dtype']!r}")
    shape = (header["N"], header["C"], header["T"], header["V"])
    expected = int(np.prod(shape)) * _DTYPE.itemsize
    if len(payload) != expected:
        raise SkelpackError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    a = np.frombuffer(payload, dtype=_DTYPE).reshape(shape).astype(np.float32)
    return a, header


def save_split(path, split: DatasetSplit, **extra) -> Path:
    return write_skelpack(
        path,
        split.array,
        [s.label for s in split],
        role=split.role,
        graph=split.graph.to_dict(),
        subject_ids=[s.subject_id for s in split],
        view_ids=[s.view_id for s in split],
        sources=[s.source for s in split],
        **extra,
    )


def load_split(path, graph: SkeletonGraph | None = None, role: str | None = None) -> DatasetSplit:
    a, h = read_skelpack(path)
    if graph is None:
        if "graph" not in h:
            raise SkelpackError(f"{path}: no graph in header and none given")
        graph = SkeletonGraph.from_dict(h["graph"])
    n = h["N"]
    subj = h.get("subject_ids") or [None] * n
    view = h.get("view_ids") or [None] * n
    src = h.get("sources") or [str(path)] * n
    seqs = tuple(
        SkeletonSequence(a[i], h["labels"][i], subj[i], view[i], src[i]) for i in range(n)
    )
    return DatasetSplit(seqs, role or h.get("role", "train"), graph)


def save_gsbp(path, gsbp: GSBP, **extra) -> Path:
    return write_skelpack(path, gsbp.values[None], [None], kind="gsbp", **extra)


def load_gsbp(path) -> GSBP:
    a, h = read_skelpack(path)
    if h["N"] != 1:
        raise SkelpackError(f"{path}: a GSBP container holds exactly one sample")
    return GSBP(a[0])
