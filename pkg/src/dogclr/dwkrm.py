"""Key-motion-region localization from discrepancy and joint-degree weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import discrepancy
from .errors import InvalidTheta, ShapeMismatch
from .skeleton import SkeletonGraph


@dataclass(frozen=True)
class ThetaSpec:
    """Mask threshold: ``quantile`` (per-sample q-quantile) or ``absolute``."""

    mode: str = "quantile"
    value: float = 0.7

    def __post_init__(self):
        if self.mode == "quantile":
            if not 0.0 < self.value < 1.0:
                raise InvalidTheta(f"quantile threshold must lie in (0, 1), got {self.value}")
        elif self.mode != "absolute":
            raise InvalidTheta(f"unknown threshold mode {self.mode!r}")

    @classmethod
    def coerce(cls, theta) -> "ThetaSpec":
        if isinstance(theta, ThetaSpec):
            return theta
        if isinstance(theta, dict):
            return cls(**theta)
        return cls("quantile", float(theta))


@dataclass(frozen=True, eq=False)
class KeyRegionMask:
    importance: np.ndarray  # (T, V) smoothed importance
    mask: np.ndarray  # (T, V) in {0, 1}
    theta: dict  # {"mode", "value", "realized"}

    @property
    def key_fraction(self) -> float:
        return float(self.mask.mean())


def _relu(a):
    return np.maximum(a, 0)


def composite_weights(dd, jd) -> np.ndarray:
    """Per-channel weight: mean over (t, v) of relu(dd) * jd[v].

    ``dd`` is (C, T, V) or batched (N, C, T, V); the result drops the last two axes.
    """
    dd = np.asarray(dd)
    jd = np.asarray(jd, dtype=dd.dtype)
    if dd.ndim < 3 or dd.shape[-1] != jd.shape[0]:
        raise ShapeMismatch(f"discrepancy joint axis {dd.shape[-1:]} vs {jd.shape[0]} weights")
    return (_relu(dd) * jd).mean(axis=(-2, -1))


def _raw_importance(alpha, h):
    # sum over the channel axis in a fixed order so batched and single-sample calls agree
    return _relu((alpha[..., :, None, None] * h).sum(axis=-3))


def _smooth(raw, G):
    return np.einsum("...tv,vw->...tw", raw, G.astype(raw.dtype), optimize=False)


def _stretch_time(imp, T):
    T_f = imp.shape[-2]
    if T_f == T:
        return imp
    src = np.linspace(0.0, 1.0, T_f)
    dst = np.linspace(0.0, 1.0, T)
    flat = imp.reshape(-1, T_f, imp.shape[-1])
    out = np.stack([np.stack([np.interp(dst, src, f[:, v]) for v in range(f.shape[1])], axis=1)
                    for f in flat])
    return out.reshape(imp.shape[:-2] + (T, imp.shape[-1]))


def _threshold(importance, theta: ThetaSpec):
    if theta.mode == "absolute":
        return np.full(importance.shape[:-2], theta.value, dtype=np.float64)
    flat = importance.reshape(importance.shape[:-2] + (-1,))
    return np.quantile(flat, theta.value, axis=-1)


def key_region_mask(alpha, h, graph: SkeletonGraph, theta=ThetaSpec(), T: int | None = None) -> KeyRegionMask:
    """Mask of cells whose smoothed importance strictly exceeds the threshold.

    ``h`` is one feature map (C_f, T_f, V). When ``T`` exceeds ``T_f`` the
    importance map is linearly stretched to ``T`` frames before thresholding.
    """
    theta = ThetaSpec.coerce(theta)
    alpha = np.asarray(alpha)
    h = np.asarray(h)
    if h.ndim != 3 or alpha.shape != (h.shape[0],) or h.shape[2] != graph.num_joints:
        raise ShapeMismatch(f"alpha {alpha.shape} and feature map {h.shape} do not match")
    imp = _stretch_time(_smooth(_raw_importance(alpha, h), graph.smoothing_matrix), T or h.shape[1])
    thr = _threshold(imp, theta)
    mask = (imp > thr).astype(np.uint8)
    return KeyRegionMask(imp, mask, {"mode": theta.mode, "value": theta.value, "realized": float(thr)})


def localize_batch(dd, h, jd, graph: SkeletonGraph, theta=ThetaSpec(), T: int | None = None):
    """Vectorized composite weights + mask over a batch.

    ``dd`` and ``h`` are (N, C_f, T_f, V). Returns (importance, mask,
    thresholds) with importance and mask shaped (N, T, V).
    """
    theta = ThetaSpec.coerce(theta)
    dd = np.asarray(dd)
    h = np.asarray(h)
    if dd.shape != h.shape or dd.ndim != 4:
        raise ShapeMismatch(f"discrepancy {dd.shape} and features {h.shape} must match")
    alpha = composite_weights(dd, jd)
    imp = _stretch_time(_smooth(_raw_importance(alpha, h), graph.smoothing_matrix), T or h.shape[2])
    thr = _threshold(imp, theta)
    mask = (imp > thr[:, None, None]).astype(np.uint8)
    return imp, mask, thr


def localize(pair, x, gsbp, jd, graph: SkeletonGraph, theta=ThetaSpec()):
    """Key-region masks for a batch ``x`` (N, C, T, V) using the key branch."""
    h, dd = discrepancy(pair, x, gsbp, branch="key")
    return localize_batch(dd.cpu().numpy(), h.cpu().numpy(), jd, graph, theta, int(x.shape[2]))
