"""Joint-degree weights: node degree of the skeleton graph rescaled to mean one."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGraph, IndexOutOfRange
from .skeleton import SkeletonGraph


@dataclass(frozen=True, eq=False)
class JointDegreeWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)


def node_degree(graph: SkeletonGraph, v: int) -> int:
    if not 0 <= v < graph.num_joints:
        raise IndexOutOfRange(f"joint {v} outside 0..{graph.num_joints - 1}")
    row = graph.adjacency[v]
    return int(row.sum() - row[v])


def joint_degree_weights(graph: SkeletonGraph) -> JointDegreeWeights:
    """``V * deg(v) / sum(deg)``; isolated joints get weight 0 with a warning."""
    deg = np.array([node_degree(graph, v) for v in range(graph.num_joints)], dtype=np.float64)
    total = deg.sum()
    if total <= 0:
        raise DegenerateGraph("graph has no edges; joint-degree weights are undefined")
    if (deg == 0).any():
        warnings.warn(
            f"isolated joints {np.flatnonzero(deg == 0).tolist()} receive weight 0",
            RuntimeWarning,
            stacklevel=2,
        )
    return JointDegreeWeights(graph.num_joints * deg / total)
