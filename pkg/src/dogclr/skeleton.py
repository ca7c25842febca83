"""Skeleton data model, NTU ingestion, toy data, streams and the benchmark pose."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyFile,
    EmptySplit,
    JointCountMismatch,
    MalformedHeader,
    MissingParentMap,
    NoFrames,
    ShapeMismatch,
    TruncatedFile,
    UnknownTemplate,
)

STREAMS = ("joint", "motion", "bone")
NTU_NUM_JOINTS = 25


@dataclass(frozen=True, eq=False)
class SkeletonGraph:
    """Static skeleton topology: ``num_joints`` nodes and undirected ``edges``.

    ``parents`` maps child joint to parent joint (every joint but ``root``)
    and is only required for the bone stream.
    """

    num_joints: int
    edges: tuple[tuple[int, int], ...]
    parents: Mapping[int, int] | None = None
    root: int | None = None
    name: str = ""
    joint_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.num_joints < 1:
            raise ValueError("num_joints must be positive")
        norm = set()
        for v, w in self.edges:
            v, w = int(v), int(w)
            if v == w:
                raise ValueError(f"self-loop on joint {v}")
            if not (0 <= v < self.num_joints and 0 <= w < self.num_joints):
                raise ValueError(f"edge ({v}, {w}) outside 0..{self.num_joints - 1}")
            norm.add((min(v, w), max(v, w)))
        object.__setattr__(self, "edges", tuple(sorted(norm)))
        if self.parents is not None:
            object.__setattr__(
                self, "parents", {int(k): int(p) for k, p in self.parents.items()}
            )

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_joints, self.num_joints), dtype=np.float64)
        for v, w in self.edges:
            a[v, w] = a[w, v] = 1.0
        a.setflags(write=False)
        return a

    @cached_property
    def smoothing_matrix(self) -> np.ndarray:
        """Adjacency plus identity, used to smooth joint importance."""
        g = self.adjacency + np.eye(self.num_joints)
        g.setflags(write=False)
        return g

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SkeletonGraph":
        parents = d.get("parents")
        names = d.get("joint_names")
        return cls(
            num_joints=int(d["num_joints"]),
            edges=tuple(tuple(e) for e in d["edges"]),
            parents={int(k): int(v) for k, v in parents.items()} if parents else None,
            root=None if d.get("root") is None else int(d["root"]),
            name=d.get("name", ""),
            joint_names=tuple(names) if names else None,
        )

    @classmethod
    def from_json(cls, path) -> "SkeletonGraph":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "num_joints": self.num_joints,
            "edges": [list(e) for e in self.edges],
            "parents": None
            if self.parents is None
            else {str(k): v for k, v in sorted(self.parents.items())},
            "root": self.root,
        }
        if self.joint_names:
            d["joint_names"] = list(self.joint_names)
        return d


def load_graph(name_or_path: str) -> SkeletonGraph:
    """Load a packaged graph (``ntu25``, ``toy9``...) or a graph JSON file."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return SkeletonGraph.from_json(p)
    m = re.fullmatch(r"toy(\d+)", name_or_path)
    if m:
        return toy_graph(int(m.group(1)))
    ref = resources.files("dogclr") / "graphs" / f"{name_or_path}.json"
    if not ref.is_file():
        raise FileNotFoundError(f"no packaged graph named {name_or_path!r}")
    return SkeletonGraph.from_dict(json.loads(ref.read_text()))


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """One sample: coordinates shaped (C, T, V) plus optional metadata."""

    values: np.ndarray
    label: int | None = None
    subject_id: int | None = None
    view_id: int | None = None
    source: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float32, copy=True)
        if v.ndim != 3:
            raise ShapeMismatch(f"expected (C, T, V) values, got shape {v.shape}")
        if v.shape[1] < 2 or v.shape[2] < 2:
            raise ShapeMismatch(f"need T >= 2 and V >= 2, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("sequence contains NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def replace(self, values) -> "SkeletonSequence":
        return SkeletonSequence(values, self.label, self.subject_id, self.view_id, self.source)


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    sequences: tuple[SkeletonSequence, ...]
    role: str
    graph: SkeletonGraph

    def __post_init__(self):
        seqs = tuple(self.sequences)
        if not seqs:
            raise EmptySplit("a dataset split needs at least one sequence")
        if self.role not in ("train", "test"):
            raise ValueError(f"role must be train or test, got {self.role!r}")
        shape = seqs[0].shape
        for s in seqs:
            if s.shape != shape:
                raise ShapeMismatch(f"mixed sequence shapes {shape} and {s.shape}")
        if shape[2] != self.graph.num_joints:
            raise ShapeMismatch(
                f"sequences have V={shape[2]} but graph has {self.graph.num_joints} joints"
            )
        object.__setattr__(self, "sequences", seqs)

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.sequences[0].shape

    @cached_property
    def array(self) -> np.ndarray:
        a = np.stack([s.values for s in self.sequences])
        a.setflags(write=False)
        return a

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([-1 if s.label is None else s.label for s in self.sequences], dtype=np.int64)

    @classmethod
    def from_array(cls, values, labels, role, graph, source="", subject_ids=None, view_ids=None):
        values = np.asarray(values)
        n = len(values)
        labels = [None] * n if labels is None else list(labels)
        subject_ids = subject_ids or [None] * n
        view_ids = view_ids or [None] * n
        seqs = tuple(
            SkeletonSequence(
                values[i],
                None if labels[i] is None else int(labels[i]),
                subject_ids[i],
                view_ids[i],
                source,
            )
            for i in range(n)
        )
        return cls(seqs, role, graph)

    def map(self, fn) -> "DatasetSplit":
        return DatasetSplit(tuple(fn(s) for s in self.sequences), self.role, self.graph)


@dataclass(frozen=True, eq=False)
class GSBP:
    """Global statistical benchmark pose: the elementwise mean of a split."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float32, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def compute_gsbp(split: DatasetSplit | Sequence[SkeletonSequence] | np.ndarray) -> GSBP:
    """Elementwise mean of a split, a sequence list or an (N, C, T, V) array."""
    if isinstance(split, np.ndarray):
        if split.ndim != 4:
            raise ShapeMismatch(f"expected an (N, C, T, V) array, got shape {split.shape}")
        if len(split) == 0:
            raise EmptySplit("cannot average an empty split")
        stack = split.astype(np.float64)
    else:
        seqs = list(split)
        if not seqs:
            raise EmptySplit("cannot average an empty split")
        shape = seqs[0].shape
        if any(s.shape != shape for s in seqs):
            raise ShapeMismatch("all sequences must share one shape")
        stack = np.stack([s.values for s in seqs]).astype(np.float64)
    # sorting along the sample axis fixes the summation order, so the result
    # does not depend on the order of the split
    stack.sort(axis=0)
    return GSBP(stack.sum(axis=0) / len(stack))


# ---------------------------------------------------------------- streams


def derive_stream(
    seq: SkeletonSequence,
    stream: str,
    graph: SkeletonGraph | None = None,
    parent_map: Mapping[int, int] | None = None,
) -> SkeletonSequence:
    """Joint (identity), motion (forward difference) or bone (parent offset)."""
    x = seq.values
    if stream == "joint":
        return seq.replace(x)
    if stream == "motion":
        out = np.zeros_like(x)
        out[:, :-1] = x[:, 1:] - x[:, :-1]
        return seq.replace(out)
    if stream == "bone":
        parents = parent_map if parent_map is not None else (graph.parents if graph else None)
        if not parents:
            raise MissingParentMap("bone stream needs a parent map")
        root = graph.root if graph is not None else None
        out = np.zeros_like(x)
        for v in range(x.shape[2]):
            if v in parents:
                out[:, :, v] = x[:, :, v] - x[:, :, parents[v]]
            elif v != root and root is not None:
                raise MissingParentMap(f"joint {v} has no parent and is not the root")
        return seq.replace(out)
    raise ValueError(f"unknown stream {stream!r}; expected one of {STREAMS}")


def derive_stream_array(x: np.ndarray, stream: str, graph: SkeletonGraph) -> np.ndarray:
    """Batched variant of :func:`derive_stream` over (N, C, T, V) arrays."""
    if stream == "joint":
        return np.array(x, copy=True)
    out = np.zeros_like(x)
    if stream == "motion":
        out[..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
        return out
    if stream == "bone":
        if not graph.parents:
            raise MissingParentMap("bone stream needs a parent map")
        for v, p in graph.parents.items():
            out[..., v] = x[..., v] - x[..., p]
        return out
    raise ValueError(f"unknown stream {stream!r}")


def normalize(seq: SkeletonSequence, mode: str = "none", root: int | None = None) -> SkeletonSequence:
    if mode == "none":
        return seq
    if mode == "center_root":
        if root is None:
            raise ValueError("center_root normalization needs a root joint")
        x = seq.values
        return seq.replace(x - x[:, :, root : root + 1])
    raise ValueError(f"unknown normalization mode {mode!r}")


def resample_frames(values: np.ndarray, target_T: int) -> np.ndarray:
    """Linear interpolation along the frame axis of a (C, T, V) array."""
    values = np.asarray(values)
    C, T, V = values.shape
    if target_T == T:
        return values.copy()
    if T == 1:
        return np.repeat(values, target_T, axis=1)
    pos = np.linspace(0.0, T - 1, target_T)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, T - 1)
    frac = (pos - lo)[None, :, None]
    return values[:, lo, :] * (1.0 - frac) + values[:, hi, :] * frac


# ---------------------------------------------------------------- NTU


_NTU_NAME = re.compile(r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})")


def parse_ntu_skeleton(
    text: str, target_T: int, primary_body_only: bool = True, source: str = "ntu"
) -> SkeletonSequence:
    """Parse the contents of one raw NTU RGB+D ``.skeleton`` file.

    With ``primary_body_only`` the body with the largest summed joint
    displacement is kept, otherwise the first body to appear. Frames where the
    kept body is missing are zero-filled before resampling to ``target_T``.
    """
    if not text.strip():
        raise EmptyFile("skeleton file is empty")
    lines = iter(ln for ln in text.splitlines() if ln.strip())

    def next_line(what):
        try:
            return next(lines)
        except StopIteration:
            raise TruncatedFile(f"unexpected end of file while reading {what}") from None

    def read_int(what):
        ln = next_line(what)
        try:
            return int(ln.split()[0])
        except ValueError:
            raise MalformedHeader(f"expected integer {what}, got {ln.strip()!r}") from None

    n_frames = read_int("frame count")
    if n_frames <= 0:
        raise NoFrames("file declares no frames")

    bodies: dict[str, np.ndarray] = {}
    order: list[str] = []
    for t in range(n_frames):
        n_bodies = read_int(f"body count of frame {t}")
        for _ in range(n_bodies):
            body_id = next_line("body metadata").split()[0]
            n_joints = read_int("joint count")
            if n_joints != NTU_NUM_JOINTS:
                raise JointCountMismatch(f"frame {t}: expected 25 joints, got {n_joints}")
            xyz = np.empty((NTU_NUM_JOINTS, 3))
            for j in range(NTU_NUM_JOINTS):
                fields = next_line("joint line").split()
                if len(fields) < 3:
                    raise MalformedHeader(f"frame {t} joint {j}: fewer than 3 fields")
                try:
                    xyz[j] = [float(f) for f in fields[:3]]
                except ValueError:
                    raise MalformedHeader(f"frame {t} joint {j}: bad coordinates") from None
            if body_id not in bodies:
                bodies[body_id] = np.zeros((n_frames, NTU_NUM_JOINTS, 3))
                order.append(body_id)
            bodies[body_id][t] = xyz

    if not bodies:
        raise NoFrames("no body was tracked in any frame")
    if primary_body_only:
        keep = max(order, key=lambda b: np.abs(np.diff(bodies[b], axis=0)).sum())
    else:
        keep = order[0]
    values = bodies[keep].transpose(2, 0, 1)  # (3, T, 25)
    values = resample_frames(values, target_T)
    return SkeletonSequence(values, source=source)


def parse_ntu_file(path, target_T: int, primary_body_only: bool = True) -> SkeletonSequence:
    """Read a ``SsssCcccPpppRrrrAaaa.skeleton`` file, attaching label/subject/view."""
    path = Path(path)
    seq = parse_ntu_skeleton(path.read_text(), target_T, primary_body_only, source=f"ntu:{path.name}")
    m = _NTU_NAME.search(path.name)
    if m is None:
        return seq
    _, camera, subject, _, action = (int(g) for g in m.groups())
    return SkeletonSequence(seq.values, action - 1, subject, camera, seq.source)


# ---------------------------------------------------------------- toy data

TOY_TEMPLATES = ("still", "wave", "kick", "jump", "clap", "bow")
_LIMBS = ("l_arm", "l_leg", "r_arm", "r_leg")


@dataclass(frozen=True)
class ToyLayout:
    """Stick figure with joints 0=root (pelvis), 1=chest, 2=head and four limb chains."""

    graph: SkeletonGraph
    rest: np.ndarray  # (V, 3)
    limbs: dict = field(default_factory=dict)


def _toy_layout(V: int) -> ToyLayout:
    if V < 5:
        raise ValueError(f"toy skeletons need V >= 5, got {V}")
    rest = [np.array([0.0, 0.0, 0.0]), np.array([0.0, 0.5, 0.0]), np.array([0.0, 0.8, 0.0])]
    parents = {1: 0, 2: 1}
    limbs: dict[str, list[int]] = {k: [] for k in _LIMBS}
    for i in range(V - 3):
        limbs[_LIMBS[i % 4]].append(3 + i)
    steps = {
        "l_arm": np.array([0.25, -0.1, 0.0]),
        "r_arm": np.array([-0.25, -0.1, 0.0]),
        "l_leg": np.array([0.1, -0.4, 0.0]),
        "r_leg": np.array([-0.1, -0.4, 0.0]),
    }
    rest += [None] * (V - 3)
    for limb, joints in limbs.items():
        prev = 1 if limb.endswith("arm") else 0
        for j in joints:
            parents[j] = prev
            rest[j] = rest[prev] + steps[limb]
            prev = j
    edges = tuple((p, c) for c, p in parents.items())
    graph = SkeletonGraph(V, edges, parents, root=0, name=f"toy{V}")
    return ToyLayout(graph, np.stack(rest), limbs)


def toy_graph(V: int) -> SkeletonGraph:
    return _toy_layout(V).graph


def _rot(axis: int, angle: np.ndarray) -> np.ndarray:
    """Rotation matrices about a coordinate axis, one per angle: (T, 3, 3)."""
    c, s = np.cos(angle), np.sin(angle)
    R = np.zeros(angle.shape + (3, 3))
    i, j = [a for a in range(3) if a != axis]
    R[..., axis, axis] = 1.0
    R[..., i, i] = c
    R[..., i, j] = -s
    R[..., j, i] = s
    R[..., j, j] = c
    return R


def _rotate_joints(pose, joints, pivot, R):
    """Rotate ``joints`` of a (T, V, 3) pose about per-frame ``pivot`` with (T, 3, 3) ``R``."""
    if not joints:
        return
    rel = pose[:, joints, :] - pivot[:, None, :]
    pose[:, joints, :] = np.einsum("tij,tvj->tvi", R, rel) + pivot[:, None, :]


def toy_motion(template: str, T: int, layout: ToyLayout, phase: float) -> np.ndarray:
    """Closed-form motion of a template as a (3, T, V) array.

    still: rest pose.  wave: left arm swings about the chest (z axis).
    kick: left leg swings about the pelvis (x axis).  jump: whole body bounces
    vertically.  clap: both arms close about the vertical axis.  bow: upper
    body pitches forward about the pelvis.
    """
    if template not in TOY_TEMPLATES:
        raise UnknownTemplate(f"unknown toy template {template!r}; known: {TOY_TEMPLATES}")
    s = np.arange(T) / max(T - 1, 1)
    pose = np.repeat(layout.rest[None], T, axis=0)  # (T, V, 3)
    limbs = layout.limbs
    chest = pose[:, 1, :].copy()
    root = pose[:, 0, :].copy()
    if template == "wave":
        ang = 0.6 + 1.0 * np.sin(2 * np.pi * 2 * s + phase)
        _rotate_joints(pose, limbs["l_arm"], chest, _rot(2, ang))
    elif template == "kick":
        ang = 0.9 * np.sin(2 * np.pi * s + phase)
        _rotate_joints(pose, limbs["l_leg"], root, _rot(0, ang))
    elif template == "jump":
        pose[:, :, 1] += 0.35 * np.abs(np.sin(2 * np.pi * s + phase))[:, None]
    elif template == "clap":
        ang = 0.8 * (0.5 + 0.5 * np.sin(2 * np.pi * 3 * s + phase))
        _rotate_joints(pose, limbs["l_arm"], chest, _rot(1, -ang))
        _rotate_joints(pose, limbs["r_arm"], chest, _rot(1, ang))
    elif template == "bow":
        ang = 0.6 * (0.5 + 0.5 * np.sin(2 * np.pi * s + phase))
        upper = [1, 2] + limbs["l_arm"] + limbs["r_arm"]
        _rotate_joints(pose, upper, root, _rot(0, ang))
    return pose.transpose(2, 0, 1)


@dataclass(frozen=True)
class ToySpec:
    classes: tuple[str, ...]
    per_class: int
    T: int = 32
    V: int = 9
    noise_sigma: float = 0.02
    test_per_class: int | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "ToySpec":
        d = dict(d)
        d["classes"] = tuple(d["classes"])
        return cls(**d)


def generate_toy_dataset(spec: ToySpec | Mapping, seed: int) -> tuple[DatasetSplit, DatasetSplit]:
    """Label-separable synthetic skeleton data.

    Every sample is a template motion at a random latent phase plus Gaussian
    noise. Train phases lie in [0, pi) and test phases in [pi, 2 pi).
    """
    if not isinstance(spec, ToySpec):
        spec = ToySpec.from_dict(spec)
    for name in spec.classes:
        if name not in TOY_TEMPLATES:
            raise UnknownTemplate(f"unknown toy template {name!r}; known: {TOY_TEMPLATES}")
    if spec.per_class < 1:
        raise ValueError("per_class must be at least 1")
    n_test = spec.per_class if spec.test_per_class is None else spec.test_per_class
    if n_test < 1:
        raise ValueError("test_per_class must be at least 1")
    if spec.T < 2:
        raise ValueError("T must be at least 2")
    layout = _toy_layout(spec.V)
    rng = np.random.default_rng(seed)

    def make(role, count, lo):
        seqs = []
        for label, name in enumerate(spec.classes):
            phases = lo + np.pi * rng.random(count)
            for k, phase in enumerate(phases):
                x = toy_motion(name, spec.T, layout, phase)
                if spec.noise_sigma > 0:
                    x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
                seqs.append(SkeletonSequence(x, label, source=f"toy:{name}:{role}:{k}"))
        return DatasetSplit(tuple(seqs), role, layout.graph)

    train = make("train", spec.per_class, 0.0)
    test = make("test", n_test, np.pi)
    return train, test
