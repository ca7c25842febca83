"""Partitioned augmentation: joint-degree style transfer, strong/normal catalogs,
the region payoff game and mask-driven composition of two views.

All functions take and return (C, T, V) numpy arrays. Sequences with a
``values`` attribute are accepted too.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .skeleton import resample_frames

STRONG_TRANSFORMS = ("shear", "flip", "rotate", "axis_mask", "crop", "temporal_flip", "noise", "blur")
STRATEGIES = ("strong", "normal")
DEFAULT_SIMILARITY = {"strong": 1.0, "normal": 2.0}


@dataclass
class AugmentationConfig:
    shear_amplitude: float = 0.5
    rotation_max_deg: float = 30.0
    axis_mask_axes: tuple[int, ...] = (0, 1, 2)
    crop_ratio_range: tuple[float, float] = (0.6, 1.0)
    noise_sigma_strong: float = 0.05
    blur_kernel: int = 5
    blur_sigma: float = 1.0
    noise_sigma_normal: float = 0.1
    mix_ratio_range: tuple[float, float] = (0.6, 0.9)
    mix_prob: float = 0.5
    strong_probs: dict = field(default_factory=lambda: {t: 0.5 for t in STRONG_TRANSFORMS})
    force_one: bool = True
    style_direction: str = "as_written"  # or "adain": content stats replaced by style stats
    asymmetric: bool = False  # key view gets normal augmentation only

    def __post_init__(self):
        self.axis_mask_axes = tuple(int(a) for a in self.axis_mask_axes)
        self.crop_ratio_range = tuple(float(r) for r in self.crop_ratio_range)
        self.mix_ratio_range = tuple(float(r) for r in self.mix_ratio_range)
        probs = {t: 0.5 for t in STRONG_TRANSFORMS}
        unknown = set(self.strong_probs) - set(STRONG_TRANSFORMS)
        if unknown:
            raise ValueError(f"unknown strong transforms {sorted(unknown)}")
        probs.update({k: float(v) for k, v in self.strong_probs.items()})
        self.strong_probs = probs
        for name, p in list(probs.items()) + [("mix_prob", self.mix_prob)]:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {name}={p} outside [0, 1]")
        lo, hi = self.crop_ratio_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"crop_ratio_range {self.crop_ratio_range} must lie in (0, 1]")
        lo, hi = self.mix_ratio_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"mix_ratio_range {self.mix_ratio_range} must lie in [0, 1]")
        if self.style_direction not in ("as_written", "adain"):
            raise ValueError(f"unknown style_direction {self.style_direction!r}")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValueError("blur_kernel must be a positive odd integer")

    @classmethod
    def identity(cls, **kw) -> "AugmentationConfig":
        """No-op configuration: every probability and noise level is zero."""
        base = dict(
            strong_probs={t: 0.0 for t in STRONG_TRANSFORMS},
            force_one=False,
            noise_sigma_normal=0.0,
            mix_prob=0.0,
        )
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("axis_mask_axes", "crop_ratio_range", "mix_ratio_range"):
            d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class RegionAssignment:
    key_strategy: str
    nonkey_strategy: str

    def __post_init__(self):
        for s in (self.key_strategy, self.nonkey_strategy):
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")

    def as_tuple(self):
        return (self.key_strategy, self.nonkey_strategy)


PROFILES = tuple(RegionAssignment(k, n) for k, n in itertools.product(STRATEGIES, STRATEGIES))


@dataclass
class AugmentedViews:
    view_q: np.ndarray
    view_k: np.ndarray
    assignment: RegionAssignment
    log: list = field(default_factory=list)


def _arr(x):
    return np.asarray(getattr(x, "values", x))


# ---------------------------------------------------------------- style transfer


def sequence_stats(x, eps: float = 1e-6):
    """Per-channel spatial expectation and temporal standard deviation.

    The mean runs over all frames and joints; the variance is taken over time
    for each joint and averaged over joints. Returns (mu, sigma, floored) with
    mu and sigma shaped (C, 1, 1).
    """
    x = _arr(x).astype(np.float64, copy=False)
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=1).mean(axis=1)[:, None, None]
    sigma = np.sqrt(var)
    floored = bool((sigma < eps).any())
    return mu, np.maximum(sigma, eps), floored


def style_transfer(xi, xj, jd, direction: str = "as_written", eps: float = 1e-6) -> np.ndarray:
    """Blend ``xi`` with a re-normalized ``xj``, per joint, by clamped joint degree.

    ``as_written`` normalizes ``xj`` by the statistics of ``xi`` and
    re-scales with those of ``xj``; ``adain`` normalizes ``xi`` by its own
    statistics and re-scales with those of ``xj``.
    """
    if direction not in ("as_written", "adain"):
        raise ValueError(f"unknown style direction {direction!r}")
    xi_ = _arr(xi)
    xj_ = _arr(xj)
    if xi_.shape != xj_.shape:
        raise ValueError(f"style source {xj_.shape} differs from content {xi_.shape}")
    w = np.clip(np.asarray(jd, dtype=np.float64), 0.0, 1.0)
    if w.shape != (xi_.shape[2],):
        raise ValueError(f"{w.shape[0]} joint weights for {xi_.shape[2]} joints")
    mu_i, sd_i, fi = sequence_stats(xi_, eps)
    mu_j, sd_j, fj = sequence_stats(xj_, eps)
    if fi or fj:
        warnings.warn("zero temporal variance; sigma floored at %g" % eps, RuntimeWarning, stacklevel=2)
    src = xj_ if direction == "as_written" else xi_
    styled = (src - mu_i) / sd_i * sd_j + mu_j
    out = w * xi_ + (1.0 - w) * styled
    # joints with full weight keep the content exactly
    full = w >= 1.0
    out[:, :, full] = xi_[:, :, full]
    return out.astype(xi_.dtype, copy=False)


# ---------------------------------------------------------------- primitives


def shear(x, matrix):
    return np.einsum("ij,jtv->itv", np.asarray(matrix), _arr(x))


def rotation_matrix(angle_deg: float, axis: int) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    i, j = [k for k in range(3) if k != axis]
    R = np.eye(3)
    R[i, i], R[i, j], R[j, i], R[j, j] = c, -s, s, c
    return R


def rotate(x, angle_deg: float, axis: int = 1):
    """Rotate coordinates about ``axis`` (0=x, 1=y vertical, 2=z)."""
    return shear(x, rotation_matrix(angle_deg, axis))


def spatial_flip(x):
    out = np.array(_arr(x), copy=True)
    out[0] = -out[0]
    return out


def axis_mask(x, axis: int):
    out = np.array(_arr(x), copy=True)
    out[axis] = 0
    return out


def crop_resize(x, start: int, length: int):
    x = _arr(x)
    return resample_frames(x[:, start : start + length], x.shape[1]).astype(x.dtype, copy=False)


def temporal_flip(x):
    return np.array(_arr(x)[:, ::-1], copy=True)


def gaussian_blur(x, kernel: int = 5, sigma: float = 1.0):
    """Temporal Gaussian smoothing with edge padding."""
    x = _arr(x)
    r = kernel // 2
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    taps /= taps.sum()
    padded = np.pad(x, ((0, 0), (r, r), (0, 0)), mode="edge")
    T = x.shape[1]
    out = sum(taps[k] * padded[:, k : k + T] for k in range(kernel))
    return out.astype(x.dtype, copy=False)


# ---------------------------------------------------------------- catalogs


def _sample_strong(cfg: AugmentationConfig, rng):
    probs = np.array([cfg.strong_probs[t] for t in STRONG_TRANSFORMS])
    chosen = rng.random(len(probs)) < probs
    if cfg.force_one and probs.any():
        while not chosen.any():
            chosen = rng.random(len(probs)) < probs
    return [t for t, c in zip(STRONG_TRANSFORMS, chosen) if c]


def strong_augment(x, cfg: AugmentationConfig, rng, log: list | None = None) -> np.ndarray:
    """Apply each strong transform with its probability, in catalog order."""
    out = np.array(_arr(x), copy=True)
    T = out.shape[1]
    for name in _sample_strong(cfg, rng):
        if name == "shear":
            S = np.eye(3)
            off = ~np.eye(3, dtype=bool)
            S[off] = rng.uniform(-cfg.shear_amplitude, cfg.shear_amplitude, size=6)
            out = shear(out, S)
            params = {"matrix": S.tolist()}
        elif name == "flip":
            out = spatial_flip(out)
            params = {}
        elif name == "rotate":
            angles = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg, size=3)
            for axis, ang in enumerate(angles):
                out = rotate(out, ang, axis)
            params = {"angles_deg": angles.tolist()}
        elif name == "axis_mask":
            axis = int(rng.choice(cfg.axis_mask_axes))
            out = axis_mask(out, axis)
            params = {"axis": axis}
        elif name == "crop":
            ratio = rng.uniform(*cfg.crop_ratio_range)
            length = min(T, max(2, int(round(ratio * T))))
            start = int(rng.integers(0, T - length + 1))
            out = crop_resize(out, start, length)
            params = {"start": start, "length": length}
        elif name == "temporal_flip":
            out = temporal_flip(out)
            params = {}
        elif name == "noise":
            out = out + rng.normal(0.0, cfg.noise_sigma_strong, size=out.shape)
            params = {"sigma": cfg.noise_sigma_strong}
        else:
            out = gaussian_blur(out, cfg.blur_kernel, cfg.blur_sigma)
            params = {"kernel": cfg.blur_kernel, "sigma": cfg.blur_sigma}
        if log is not None:
            log.append({"name": name, **params})
    return out.astype(_arr(x).dtype, copy=False)


def normal_augment(x, cfg: AugmentationConfig, rng, mix_partner=None, log: list | None = None) -> np.ndarray:
    """High-variance Gaussian noise, then skeleton mixing with probability ``mix_prob``."""
    x = _arr(x)
    out = x.astype(np.float64)
    if cfg.noise_sigma_normal > 0:
        out = out + rng.normal(0.0, cfg.noise_sigma_normal, size=out.shape)
        if log is not None:
            log.append({"name": "noise", "sigma": cfg.noise_sigma_normal})
    if mix_partner is not None and cfg.mix_prob > 0 and rng.random() < cfg.mix_prob:
        partner = _arr(mix_partner)
        if partner.shape != x.shape:
            raise ValueError(f"mix partner {partner.shape} differs from sample {x.shape}")
        lam = rng.uniform(*cfg.mix_ratio_range)
        out = lam * out + (1.0 - lam) * partner
        if log is not None:
            log.append({"name": "mix", "lambda": float(lam)})
    return out.astype(x.dtype, copy=False)


# ---------------------------------------------------------------- game


def payoff_u1(mask, assignment: RegionAssignment, similarity: dict | None = None) -> float:
    """Sum over cells of dissimilarity on key cells plus similarity elsewhere.

    ``similarity`` maps each strategy to its score (strong 1, normal 2 by
    default); dissimilarity is 3 minus similarity.
    """
    sim = DEFAULT_SIMILARITY if similarity is None else similarity
    m = np.asarray(getattr(mask, "mask", mask))
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask must be binary")
    n_key = float(m.sum())
    n_non = float(m.size) - n_key
    return n_key * (3.0 - sim[assignment.key_strategy]) + n_non * sim[assignment.nonkey_strategy]


def dominance_assignment(mask=None) -> RegionAssignment:
    """Strong augmentation on key cells, normal elsewhere, whatever the mask."""
    return RegionAssignment("strong", "normal")


# ---------------------------------------------------------------- composition


def compose(x, x_adain, mask, cfg: AugmentationConfig, rng, mix_partner=None, log=None) -> np.ndarray:
    """One view: mask * strong(x_adain) + (1 - mask) * normal(x)."""
    x = _arr(x)
    m = np.asarray(getattr(mask, "mask", mask)).astype(x.dtype)[None]
    key_log = [] if log is not None else None
    non_log = [] if log is not None else None
    x_key = strong_augment(x_adain, cfg, rng, key_log)
    x_non = normal_augment(x, cfg, rng, mix_partner, non_log)
    if log is not None:
        log.append({"key": key_log, "nonkey": non_log})
    return m * x_key + (1 - m) * x_non


def compose_views(x, x_adain, mask, cfg: AugmentationConfig, rng, mix_partner=None) -> AugmentedViews:
    """Two independently randomized views. ``rng`` is a Generator or a (q, k) pair."""
    rng_q, rng_k = rng if isinstance(rng, (tuple, list)) else rng.spawn(2)
    log_q, log_k = [], []
    assignment = dominance_assignment(mask)
    view_q = compose(x, x_adain, mask, cfg, rng_q, mix_partner, log_q)
    if cfg.asymmetric:
        sub = []
        view_k = normal_augment(x, cfg, rng_k, mix_partner, sub)
        log_k.append({"key": None, "nonkey": sub})
    else:
        view_k = compose(x, x_adain, mask, cfg, rng_k, mix_partner, log_k)
    log = [{"view": "q", **log_q[0]}, {"view": "k", **log_k[0]}]
    return AugmentedViews(view_q, view_k, assignment, log)


def write_audit_log(path, records) -> None:
    with open(path, "a") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
