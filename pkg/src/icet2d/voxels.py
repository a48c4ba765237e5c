"""Voxelization, per-voxel Gaussian statistics, and eigen-pruning.

A scan is bucketed on a regular grid anchored in the reference frame. Each
surviving cell carries the sample mean and (n-1)-denominator sample
covariance of its points. Pruning eigendecomposes a reference cell's
covariance and flags principal directions whose variance approaches the
cell size: those are extended world features (walls), not sensor noise,
and measurements along them are discarded.

Grids are axis-aligned; a wall crossing a cell corner presents a short
chord whose variance can stay below the threshold and evade pruning. That
is a known limitation and is not handled here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .geometry import Point2, Scan

# Eigenvalues this close to the threshold count as extended (eliminated).
_THRESHOLD_SLACK = 1e-12


@dataclass(frozen=True)
class GridConfig:
    """Voxel grid parameters.

    voxel_width: cell edge length a.
    origin: grid anchor in the reference frame (defaults to the sensor).
    min_points: cells with fewer points are dropped.
    eigen_threshold: variance above which a principal direction is treated
        as an extended feature; None means a**2 / 16.
    correspondence_mode: "colocated" pairs cells with identical indices,
        "nn" pairs each new-scan cell with the nearest reference cell mean.
    nn_radius: acceptance radius for "nn" mode; None means one voxel width.
    """

    voxel_width: float = 50.0
    origin: Point2 = Point2(0.0, 0.0)
    min_points: int = 5
    eigen_threshold: float | None = None
    correspondence_mode: str = "nn"
    nn_radius: float | None = None

    def __post_init__(self):
        if not self.voxel_width > 0:
            raise DomainError("voxel_width must be positive")
        # Two points are the bare minimum for an (n-1)-denominator covariance.
        if self.min_points < 2:
            raise DomainError("min_points must be at least 2")
        if self.eigen_threshold is not None and not self.eigen_threshold > 0:
            raise DomainError("eigen_threshold must be positive")
        if self.nn_radius is not None and not self.nn_radius > 0:
            raise DomainError("nn_radius must be positive")
        if self.correspondence_mode not in ("colocated", "nn"):
            raise DomainError(f"unknown correspondence_mode {self.correspondence_mode!r}")

    @property
    def threshold(self) -> float:
        if self.eigen_threshold is not None:
            return self.eigen_threshold
        return self.voxel_width**2 / 16.0

    @property
    def radius(self) -> float:
        return self.nn_radius if self.nn_radius is not None else self.voxel_width


@dataclass(frozen=True, eq=False)
class VoxelStats:
    """Gaussian summary of the points inside one grid cell."""

    index: tuple[int, int]
    count: int
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class PruneResult:
    """Eigen split of a reference cell covariance into kept and extended axes.

    Columns of `preserved_axes` (2 x n) and `eliminated_axes` (2 x (2-n))
    together form an orthonormal basis. Variances below the threshold are
    preserved; the rest belong to extended features.
    """

    n_preserved: int
    preserved_axes: np.ndarray
    eliminated_axes: np.ndarray
    preserved_variances: np.ndarray
    eliminated_variances: np.ndarray


@dataclass(frozen=True, eq=False)
class Correspondence:
    """A matched reference/new voxel pair.

    `prune` is always derived from the reference-scan covariance, never
    from the new scan's.
    """

    ref_stats: VoxelStats
    new_stats: VoxelStats
    prune: PruneResult


def cell_indices(xy: np.ndarray, cfg: GridConfig) -> np.ndarray:
    """Integer (N, 2) cell coordinates: floor((p - origin) / a) per axis."""
    rel = (xy - cfg.origin.as_array()) / cfg.voxel_width
    return np.floor(rel).astype(np.int64)


def _voxelize(scan: Scan, cfg: GridConfig) -> tuple[list[VoxelStats], dict[tuple[int, int], np.ndarray]]:
    """Group scan points by cell, returning stats and member point indices.

    Cells below the min_points cutoff are discarded. The returned list is
    sorted by cell index for determinism.
    """
    idx = cell_indices(scan.xy, cfg)
    cells, inverse, counts = np.unique(idx, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    boundaries = np.concatenate([[0], np.cumsum(counts)])

    stats: list[VoxelStats] = []
    members: dict[tuple[int, int], np.ndarray] = {}
    for k in range(cells.shape[0]):
        n = int(counts[k])
        if n < cfg.min_points:
            continue
        rows = order[boundaries[k] : boundaries[k + 1]]
        pts = scan.xy[rows]
        mean = pts.mean(axis=0)
        centered = pts - mean
        cov = centered.T @ centered / (n - 1)
        cov = 0.5 * (cov + cov.T)
        key = (int(cells[k, 0]), int(cells[k, 1]))
        stats.append(VoxelStats(index=key, count=n, mean=mean, cov=cov))
        members[key] = rows
    if not stats:
        raise DomainError("no usable voxels")
    return stats, members


def build_grid(scan: Scan, cfg: GridConfig) -> list[VoxelStats]:
    """Voxelize a scan and return per-cell statistics (cutoff applied)."""
    stats, _ = _voxelize(scan, cfg)
    return stats


def _canonical_axis(v: np.ndarray) -> tuple[np.ndarray, float]:
    """Flip an eigenvector into the half-plane with angle in (-pi/2, pi/2]."""
    x, y = float(v[0]), float(v[1])
    if x < 0 or (x == 0 and y < 0):
        v = -v
        x, y = -x, -y
    return v, math.atan2(y, x)


def eigen_prune(cov: np.ndarray, threshold: float) -> PruneResult:
    """Split covariance eigenpairs at the extended-feature threshold.

    Eigenpairs are sorted by ascending eigenvalue with ties broken by the
    eigenvector's angle to +x; eigenvector signs are canonicalized so the
    result is deterministic. Eigenvalues within 1e-12 of the threshold
    count as extended.
    """
    cov = np.asarray(cov, dtype=float)
    values, vectors = np.linalg.eigh(0.5 * (cov + cov.T))
    pairs = []
    for i in range(2):
        vec, angle = _canonical_axis(vectors[:, i].copy())
        pairs.append((float(values[i]), angle, vec))
    pairs.sort(key=lambda t: (t[0], t[1]))

    keep = [p for p in pairs if p[0] < threshold - _THRESHOLD_SLACK]
    drop = [p for p in pairs if p[0] >= threshold - _THRESHOLD_SLACK]
    n = len(keep)
    preserved = np.column_stack([p[2] for p in keep]) if keep else np.empty((2, 0))
    eliminated = np.column_stack([p[2] for p in drop]) if drop else np.empty((2, 0))
    return PruneResult(
        n_preserved=n,
        preserved_axes=preserved,
        eliminated_axes=eliminated,
        preserved_variances=np.array([p[0] for p in keep]),
        eliminated_variances=np.array([p[0] for p in drop]),
    )


def correspond(
    ref: Sequence[VoxelStats],
    new: Sequence[VoxelStats],
    cfg: GridConfig,
    prune_by_index: dict[tuple[int, int], PruneResult] | None = None,
) -> list[Correspondence]:
    """Pair new-scan voxels with reference voxels.

    "colocated" mode pairs identical cell indices. "nn" mode pairs each
    new voxel with the reference voxel whose mean is nearest, accepted
    within cfg.radius; several new voxels may share one reference voxel.

    `prune_by_index` lets callers reuse prune results computed once from
    the reference grid; otherwise each reference covariance is pruned here
    (same values, since pruning is deterministic).
    """
    if not ref or not new:
        raise DomainError("no correspondences")

    def prune_for(stats: VoxelStats) -> PruneResult:
        if prune_by_index is not None:
            return prune_by_index[stats.index]
        return eigen_prune(stats.cov, cfg.threshold)

    out: list[Correspondence] = []
    if cfg.correspondence_mode == "colocated":
        by_index = {v.index: v for v in ref}
        for nv in new:
            rv = by_index.get(nv.index)
            if rv is not None:
                out.append(Correspondence(ref_stats=rv, new_stats=nv, prune=prune_for(rv)))
    else:
        ref_means = np.array([v.mean for v in ref])
        for nv in new:
            d2 = np.sum((ref_means - nv.mean) ** 2, axis=1)
            k = int(np.argmin(d2))
            if d2[k] <= cfg.radius**2:
                rv = ref[k]
                out.append(Correspondence(ref_stats=rv, new_stats=nv, prune=prune_for(rv)))
    if not out:
        raise DomainError("no correspondences")
    return out


def grid_debug_dump(voxels: Sequence[VoxelStats], cfg: GridConfig) -> dict:
    """JSON-ready per-voxel summary for external ellipse/plot tooling."""
    entries = []
    for v in voxels:
        prune = eigen_prune(v.cov, cfg.threshold)
        values = np.concatenate([prune.preserved_variances, prune.eliminated_variances])
        flags = [True] * prune.n_preserved + [False] * (2 - prune.n_preserved)
        entries.append(
            {
                "index": list(v.index),
                "count": v.count,
                "mean": [float(v.mean[0]), float(v.mean[1])],
                "covariance": [[float(c) for c in row] for row in v.cov],
                "eigenvalues": [float(w) for w in values],
                "preserved_axis_flags": flags,
            }
        )
    return {
        "voxel_width": cfg.voxel_width,
        "origin": [cfg.origin.x, cfg.origin.y],
        "eigen_threshold": cfg.threshold,
        "voxels": entries,
    }


def save_grid_debug_dump(voxels: Sequence[VoxelStats], cfg: GridConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(grid_debug_dump(voxels, cfg), fh, indent=2, sort_keys=True)
