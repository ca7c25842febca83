"""Spatio-temporal graph encoder, projection head and the momentum twin.

The backbone is a compact ST-GCN: each stage mixes channels with a 1x1
convolution, aggregates over the normalized skeleton adjacency, then runs a
stride-1 (by default) temporal convolution with a residual connection. There
is no normalization layer, so every sample is encoded independently of the
rest of the batch.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NonDifferentiableConfig, ShapeMismatch, ZeroVector
from .skeleton import SkeletonGraph


@dataclass
class EncoderConfig:
    kind: str = "stgcn"  # "stgcn" or "identity" (h = x, z = flattened x)
    channels: tuple[int, ...] = (64, 128, 256)
    temporal_kernel: int = 9
    temporal_strides: tuple[int, ...] | None = None
    embedding_dim: int = 256
    feature_stage: int = -1
    bias: bool = True
    in_channels: int = 3

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.temporal_strides is not None:
            self.temporal_strides = tuple(int(s) for s in self.temporal_strides)
        if self.kind not in ("stgcn", "identity"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")
        if self.kind == "stgcn":
            if not self.channels:
                raise ValueError("stgcn needs at least one stage")
            if self.temporal_kernel % 2 == 0:
                raise ValueError("temporal_kernel must be odd")
            if self.temporal_strides is not None and len(self.temporal_strides) != len(self.channels):
                raise ValueError("temporal_strides needs one entry per stage")

    @classmethod
    def tiny(cls, **kw) -> "EncoderConfig":
        base = dict(channels=(16, 16), temporal_kernel=3, embedding_dim=64)
        base.update(kw)
        return cls(**base)

    @classmethod
    def identity(cls, **kw) -> "EncoderConfig":
        return cls(kind="identity", channels=(), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["temporal_strides"] = None if self.temporal_strides is None else list(self.temporal_strides)
        return d

    @classmethod
    def from_dict(cls, d) -> "EncoderConfig":
        return cls(**dict(d))


def normalized_adjacency(graph: SkeletonGraph) -> np.ndarray:
    a = graph.adjacency + np.eye(graph.num_joints)
    d = a.sum(axis=1) ** -0.5
    return d[:, None] * a * d[None, :]


class GraphStage(nn.Module):
    def __init__(self, in_ch, out_ch, A, kernel, stride=1, bias=True):
        super().__init__()
        self.register_buffer("A", A)
        self.gcn = nn.Conv2d(in_ch, out_ch, 1, bias=bias)
        self.tcn = nn.Conv2d(out_ch, out_ch, (kernel, 1), padding=((kernel - 1) // 2, 0),
                             stride=(stride, 1), bias=bias)
        if in_ch == out_ch and stride == 1:
            self.residual = nn.Identity()
        else:
            self.residual = nn.Conv2d(in_ch, out_ch, 1, stride=(stride, 1), bias=bias)

    def forward(self, x):
        y = torch.einsum("nctv,vw->nctw", self.gcn(x), self.A)
        y = self.tcn(F.relu(y))
        return F.relu(y + self.residual(x))


class Encoder(nn.Module):
    """Backbone ``f`` plus projection head ``g``."""

    def __init__(self, cfg: EncoderConfig, graph: SkeletonGraph):
        super().__init__()
        self.cfg = cfg
        self.num_joints = graph.num_joints
        if cfg.kind == "identity":
            self.stages = nn.ModuleList()
            self.head = nn.Identity()
            self.feature_dim = None
            return
        n = len(cfg.channels)
        stage_idx = cfg.feature_stage if cfg.feature_stage >= 0 else n + cfg.feature_stage
        if not 0 <= stage_idx < n:
            raise NonDifferentiableConfig(
                f"feature_stage {cfg.feature_stage} is not one of the {n} stages"
            )
        self.stage_idx = stage_idx
        A = torch.tensor(normalized_adjacency(graph), dtype=torch.float32)
        strides = cfg.temporal_strides or (1,) * n
        chans = (cfg.in_channels,) + cfg.channels
        self.stages = nn.ModuleList(
            GraphStage(chans[i], chans[i + 1], A, cfg.temporal_kernel, strides[i], cfg.bias)
            for i in range(n)
        )
        self.feature_dim = cfg.channels[-1]
        self.head = nn.Sequential(
            nn.Linear(self.feature_dim, cfg.embedding_dim),
            nn.ReLU(),
            nn.Linear(cfg.embedding_dim, cfg.embedding_dim),
        )

    def _check(self, x):
        if x.ndim != 4 or x.shape[-1] != self.num_joints:
            raise ShapeMismatch(f"expected (N, C, T, {self.num_joints}) input, got {tuple(x.shape)}")
        if self.cfg.kind == "stgcn" and x.shape[1] != self.cfg.in_channels:
            raise ShapeMismatch(f"expected {self.cfg.in_channels} input channels, got {x.shape[1]}")

    def feature_map(self, x):
        """Output of the configured feature stage, shaped (N, C_f, T_f, V)."""
        self._check(x)
        if self.cfg.kind == "identity":
            return x
        for stage in self.stages[: self.stage_idx + 1]:
            x = stage(x)
        return x

    def pooled_from_features(self, h):
        if self.cfg.kind == "identity":
            return h.flatten(1)
        for stage in self.stages[self.stage_idx + 1 :]:
            h = stage(h)
        return h.mean(dim=(2, 3))

    def embed_from_features(self, h):
        return F.normalize(self.head(self.pooled_from_features(h)), dim=1)

    def pooled(self, x):
        return self.pooled_from_features(self.feature_map(x))

    def forward(self, x):
        """Return (feature map h, L2-normalized embedding z)."""
        h = self.feature_map(x)
        return h, self.embed_from_features(h)


class EncoderPair(nn.Module):
    """Query branch trained by gradient descent; key branch tracks it by momentum."""

    def __init__(self, query: Encoder, momentum: float = 0.99):
        super().__init__()
        if not 0.0 <= momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        self.query = query
        self.key = copy.deepcopy(query)
        for p in self.key.parameters():
            p.requires_grad_(False)
        self.momentum = momentum

    @classmethod
    def build(cls, cfg: EncoderConfig, graph: SkeletonGraph, momentum=0.99, seed=0,
              dtype=torch.float32) -> "EncoderPair":
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            enc = Encoder(cfg, graph)
        pair = cls(enc, momentum)
        pair.eval()
        return pair.to(dtype)

    @property
    def dtype(self):
        for p in self.parameters():
            return p.dtype
        return torch.float32


def _as_tensor(x, dtype):
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    values = getattr(x, "values", x)
    if isinstance(values, (list, tuple)):
        values = np.stack([getattr(s, "values", s) for s in values])
    return torch.as_tensor(np.array(values), dtype=dtype)


def encode(pair: EncoderPair, branch: str, x):
    """Encode a batch with the query or key branch: returns (h, z)."""
    enc = _branch(pair, branch)
    x = _as_tensor(x, pair.dtype)
    if x.ndim == 3:
        x = x[None]
    if branch == "key" or not torch.is_grad_enabled():
        with torch.no_grad():
            return enc(x)
    return enc(x)


def _branch(pair, branch):
    if branch == "query":
        return pair.query
    if branch == "key":
        return pair.key
    raise ValueError(f"branch must be query or key, got {branch!r}")


def similarity(z1, z2) -> float:
    a = np.asarray(z1, dtype=np.float64).ravel()
    b = np.asarray(z2, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(a @ b / (na * nb))


def discrepancy(pair_or_encoder, x, gsbp, branch: str = "key"):
    """Feature map h and its discrepancy degree -d sim(z, z_bar) / d h.

    ``gsbp`` is encoded without gradient; only the sample path is
    differentiated. Returns two tensors shaped (N, C_f, T_f, V).
    """
    enc = _branch(pair_or_encoder, branch) if isinstance(pair_or_encoder, EncoderPair) else pair_or_encoder
    dtype = next(iter(enc.parameters()), torch.zeros((), dtype=_dtype_of(x))).dtype
    x = _as_tensor(x, dtype)
    if x.ndim == 3:
        x = x[None]
    g = _as_tensor(gsbp, dtype)
    if g.ndim == 3:
        g = g[None]
    with torch.no_grad():
        _, z_bar = enc(g)
        h = enc.feature_map(x)
    with torch.enable_grad():
        h = h.detach().requires_grad_(True)
        z = enc.embed_from_features(h)
        sim = F.cosine_similarity(z, z_bar.expand_as(z), dim=1, eps=0.0)
        (grad,) = torch.autograd.grad(sim.sum(), h)
    return h.detach(), -grad


def _dtype_of(x):
    if isinstance(x, torch.Tensor):
        return x.dtype
    a = np.asarray(getattr(x, "values", x))
    return torch.float64 if a.dtype == np.float64 else torch.float32


def similarity_gradient(pair_or_encoder, x, gsbp, branch: str = "key"):
    """Discrepancy degree only; see :func:`discrepancy`."""
    return discrepancy(pair_or_encoder, x, gsbp, branch)[1]


@torch.no_grad()
def momentum_update(pair: EncoderPair, m: float | None = None) -> EncoderPair:
    m = pair.momentum if m is None else m
    for pk, pq in zip(pair.key.parameters(), pair.query.parameters()):
        pk.mul_(m).add_(pq.detach(), alpha=1.0 - m)
    return pair


def parameter_vector(module: nn.Module) -> np.ndarray:
    params = [p.detach().cpu().numpy().ravel() for p in module.parameters()]
    return np.concatenate(params) if params else np.zeros(0)
