"""LiDAR cone candidates: single-linkage Euclidean clustering and size gating."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class Cluster:
    centroid: tuple[float, float]
    extent: tuple[float, float]
    count: int
    indices: tuple[int, ...] = ()


@dataclass(frozen=True)
class SizeBounds:
    max_extent: float = 0.5
    max_count: int = 200


def cluster_points(points, eps: float = 0.3, min_pts: int = 3) -> list[Cluster]:
    """Group points whose ``<= eps`` neighbour graph is connected.

    Components smaller than ``min_pts`` are discarded. Clusters are returned
    in order of their lowest input index.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return []
    labels = kernels.cluster_labels(pts, float(eps))
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    out = []
    for idx in np.split(order, bounds):
        if len(idx) < min_pts:
            continue
        sub = pts[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        c = sub.mean(axis=0)
        out.append(
            Cluster(
                centroid=(float(c[0]), float(c[1])),
                extent=(float(hi[0] - lo[0]), float(hi[1] - lo[1])),
                count=len(idx),
                indices=tuple(int(i) for i in idx),
            )
        )
    return out


def filter_by_size(clusters, bounds: SizeBounds = SizeBounds()) -> list[Cluster]:
    """Keep clusters no larger than a cone; both limits are inclusive."""
    if not (bounds.max_extent > 0 and bounds.max_count > 0):
        raise ValueError("size bounds must be positive")
    return [
        c
        for c in clusters
        if c.extent[0] <= bounds.max_extent and c.extent[1] <= bounds.max_extent and c.count <= bounds.max_count
    ]


def detect_cones(points, eps: float = 0.3, min_pts: int = 3, bounds: SizeBounds = SizeBounds()) -> np.ndarray:
    """Cone centroids (n, 2) from a raw scan."""
    kept = filter_by_size(cluster_points(points, eps, min_pts), bounds)
    return np.array([c.centroid for c in kept]).reshape(-1, 2)
