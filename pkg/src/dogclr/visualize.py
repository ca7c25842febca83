"""Skeleton renders: key-region overlays and before/after augmentation frames."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .skeleton import SkeletonGraph

WIDTH = 256
HEIGHT = 256
MARGIN = 16


def screen_coordinates(values, frame: int, width: int = WIDTH, height: int = HEIGHT,
                       margin: int = MARGIN) -> np.ndarray:
    """Pixel coordinates (V, 2) of one frame's x/y plane, fit into the canvas.

    Uniform scale keeps the aspect ratio; the skeleton is centered and the
    vertical axis points down as on screen.
    """
    xy = np.asarray(values, dtype=np.float64)[:2, frame, :].T
    lo = xy.min(axis=0)
    span = xy.max(axis=0) - lo
    extent = max(span.max(), 1e-12)
    scale = min(width, height) - 2 * margin
    scale = scale / extent
    offset = (np.array([width, height], dtype=np.float64) - span * scale) / 2.0
    px = (xy - lo) * scale + offset
    px[:, 1] = height - px[:, 1]
    return px


def write_coordinates(path, rows) -> Path:
    """``rows`` are (sample, joint, x, y, key) tuples."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "joint", "x", "y", "key"])
        for s, j, x, y, k in rows:
            w.writerow([int(s), int(j), f"{x:.4f}", f"{y:.4f}", int(k)])
    return path


def _draw(ax, px, graph: SkeletonGraph, key, title=""):
    for a, b in graph.edges:
        ax.plot([px[a, 0], px[b, 0]], [px[a, 1], px[b, 1]], color="0.6", lw=1.5, zorder=1)
    colors = np.where(np.asarray(key, dtype=bool), "tab:red", "tab:blue")
    ax.scatter(px[:, 0], px[:, 1], c=list(colors), s=30, zorder=2)
    ax.set_xlim(0, WIDTH)
    ax.set_ylim(HEIGHT, 0)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    ax.set_title(title, fontsize=8)


def render_overlay(values, mask, graph: SkeletonGraph, frame: int, path) -> np.ndarray:
    """Draw one frame with key joints in red; returns the (V, 2) screen coordinates."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    px = screen_coordinates(values, frame)
    key = np.asarray(mask)[frame]
    fig, ax = plt.subplots(figsize=(3, 3))
    _draw(ax, px, graph, key, f"frame {frame}: {int(key.sum())} key joints")
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return px


def render_augmentation(original, augmented, mask, graph: SkeletonGraph, frame: int, path) -> None:
    """Side-by-side frame of a sample before and after augmentation."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    key = np.asarray(mask)[frame]
    fig, axes = plt.subplots(1, 2, figsize=(6, 3))
    _draw(axes[0], screen_coordinates(original, frame), graph, key, "original")
    _draw(axes[1], screen_coordinates(augmented, frame), graph, key, "augmented")
    fig.savefig(path, dpi=80)
    plt.close(fig)
