"""Explicit reconstruction by scattered-pixel IDW, and rigid volume alignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .data import VoxelVolume, lattice_points, sample_volume
from .geometry import plane_to_world, reference_grid, transform_points
from .metrics import ncc

IDW_EPS = 1e-6


@dataclass
class PointCloud:
    points: np.ndarray  # (M, 3)
    values: np.ndarray  # (M,)

    def __len__(self) -> int:
        return len(self.values)


def scatter(images, poses) -> PointCloud:
    """Place every pixel of every slice at its posed world position."""
    images = np.asarray(images, dtype=np.float64)
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 6)
    if images.ndim != 3 or len(images) != len(poses):
        raise ValueError(f"need N images (N, H, W) and N poses, got {images.shape}, {poses.shape}")
    _, h, w = images.shape
    grid = reference_grid(h, w)
    pts = [plane_to_world(grid, p).points for p in poses]
    return PointCloud(np.concatenate(pts), images.reshape(-1).copy())


def _knn(tree: cKDTree, cloud: np.ndarray, queries: np.ndarray, k: int):
    """k nearest cloud points per query; ties broken by lowest point index.

    Distances are recomputed from coordinates so that they do not depend on
    the tree's internal arithmetic.
    """
    extra = min(len(cloud), k + 4)
    _, idx = tree.query(queries, k=extra)
    idx = idx.reshape(len(queries), extra)
    d = np.sqrt(np.sum((cloud[idx] - queries[:, None, :]) ** 2, axis=-1))
    order = np.lexsort((idx, d), axis=-1)
    idx = np.take_along_axis(idx, order, axis=-1)
    d = np.take_along_axis(d, order, axis=-1)
    if extra > k:
        # the candidate list may have cut through a run of equal distances
        unsure = np.nonzero(d[:, k - 1] == d[:, -1])[0]
        for q in unsure:
            full = np.sqrt(np.sum((cloud - queries[q]) ** 2, axis=1))
            best = np.lexsort((np.arange(len(cloud)), full))[:extra]
            idx[q], d[q] = best, full[best]
    return idx[:, :k], d[:, :k]


def idw_reconstruct(cloud: PointCloud, side: int, k: int = 20, chunk: int = 65536) -> VoxelVolume:
    """Inverse-distance weighted average of the ``k`` nearest pixels per voxel.

    Weights are ``1 / (d + 1e-6)``; no search radius, so far voxels
    extrapolate from whatever pixels are nearest.
    """
    if len(cloud) < k:
        raise ValueError(f"point cloud has {len(cloud)} points, fewer than k={k}")
    tree = cKDTree(cloud.points)
    voxels = lattice_points(side)
    out = np.empty(len(voxels))
    for lo in range(0, len(voxels), chunk):
        q = voxels[lo:lo + chunk]
        idx, d = _knn(tree, cloud.points, q, k)
        w = 1.0 / (d + IDW_EPS)
        out[lo:lo + chunk] = np.sum(w * cloud.values[idx], axis=1) / np.sum(w, axis=1)
    return VoxelVolume(out.reshape(side, side, side), {"generator": "idw", "k": k})


# ---------------------------------------------------------------------------
# rigid alignment


def resample(volume: VoxelVolume, transform, side: int | None = None) -> VoxelVolume:
    """``out(v) = volume(R v + T)`` on a lattice; reads outside the cube are 0."""
    side = volume.side if side is None else side
    pts = transform_points(lattice_points(side), np.asarray(transform, dtype=np.float64))
    return VoxelVolume(sample_volume(volume.data, pts).reshape(side, side, side), dict(volume.meta))


class _Objective:
    """NCC between the fixed volume and the transformed moving volume on a lattice."""

    def __init__(self, moving: VoxelVolume, fixed: VoxelVolume, side: int):
        self.moving = moving.data
        self.lattice = lattice_points(side)
        self.fixed = sample_volume(fixed.data, self.lattice)
        self.evals = 0

    def __call__(self, p) -> float:
        self.evals += 1
        vals = sample_volume(self.moving, transform_points(self.lattice, p))
        if np.std(vals) == 0.0:
            return -np.inf
        return ncc(self.fixed, vals)


def _coordinate_grid_search(obj, start, half_ranges, steps, passes=2):
    best = np.array(start, dtype=np.float64)
    best_val = obj(best)
    for _ in range(passes):
        for axis in range(6):
            grid = np.arange(-half_ranges[axis], half_ranges[axis] + 1e-12, steps[axis])
            for v in grid:
                cand = best.copy()
                cand[axis] = v
                val = obj(cand)
                if val > best_val:
                    best, best_val = cand, val
    return best, best_val


def _pattern_search(obj, start, start_val, steps, halvings=6):
    best, best_val = np.array(start, dtype=np.float64), start_val
    steps = np.array(steps, dtype=np.float64)
    for _ in range(halvings + 1):
        improved = True
        while improved:
            improved = False
            for axis in range(6):
                for sign in (1.0, -1.0):
                    cand = best.copy()
                    cand[axis] += sign * steps[axis]
                    val = obj(cand)
                    if val > best_val:
                        best, best_val, improved = cand, val, True
                        break
        steps = steps / 2.0
    return best, best_val


def rigid_align(moving: VoxelVolume, fixed: VoxelVolume, coarse_side: int = 32,
                fine_side: int = 48, angle_range: float = 0.3, angle_step: float = 0.05,
                shift_range: float = 0.2, shift_step: float = 0.05, halvings: int = 6):
    """6-DoF transform maximizing NCC(fixed, moving o transform).

    Coarse stage: coordinate-wise grid sweeps over angles in
    ``+-angle_range`` (step ``angle_step``) and translations in
    ``+-shift_range`` normalized units (10% of the extent, step 2.5%), on a
    ``coarse_side`` lattice.  Fine stage: compass pattern search with step
    halving on a ``fine_side`` lattice.  The identity is returned if nothing
    beats it on the fine lattice.

    Returns ``(aligned_volume, transform)`` with ``transform`` as a 6-vector.
    """
    if moving.side != fixed.side:
        raise ValueError(f"volume sides differ: {moving.side} vs {fixed.side}")
    if np.std(moving.data) == 0.0 or np.std(fixed.data) == 0.0:
        raise ValueError("degenerate constant input")
    coarse = _Objective(moving, fixed, min(coarse_side, fixed.side))
    half = np.array([angle_range] * 3 + [shift_range] * 3)
    step = np.array([angle_step] * 3 + [shift_step] * 3)
    p0, _ = _coordinate_grid_search(coarse, np.zeros(6), half, step)

    fine = _Objective(moving, fixed, min(fine_side, fixed.side))
    identity_val = fine(np.zeros(6))
    p0_val = fine(p0)
    if identity_val >= p0_val:
        p0, p0_val = np.zeros(6), identity_val
    p, val = _pattern_search(fine, p0, p0_val, step / 2.0, halvings)
    if val < identity_val:
        p = np.zeros(6)
    return resample(moving, p), p
