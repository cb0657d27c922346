"""Slice placement in the normalized volume cube and coordinate encoding.

World space is the cube [-1, 1]^3.  A slice starts on the reference plane
z = 0 spanning [-1, 1]^2, is rotated by ``R = Rz @ Ry @ Rx`` and then
translated.  All functions accept either numpy arrays or autodiff
``Var`` objects so that pose gradients come for free during training.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class SlicePose:
    """Euler angles (radians) and translation (normalized units, cube side 2)."""

    euler: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        euler = tuple(float(v) for v in self.euler)
        translation = tuple(float(v) for v in self.translation)
        if len(euler) != 3 or len(translation) != 3:
            raise ValueError("pose needs three angles and three translations")
        if not np.all(np.isfinite(euler + translation)):
            raise ValueError(f"non-finite pose components: {euler + translation}")
        object.__setattr__(self, "euler", euler)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def from_vector(cls, vec) -> "SlicePose":
        v = np.asarray(vec, dtype=np.float64).ravel()
        if v.size != 6:
            raise ValueError(f"pose vector needs 6 entries, got {v.size}")
        return cls(tuple(v[:3]), tuple(v[3:]))

    def as_vector(self) -> np.ndarray:
        """``(theta_x, theta_y, theta_z, tx, ty, tz)`` as a float64 array."""
        return np.array(self.euler + self.translation, dtype=np.float64)

    @classmethod
    def identity(cls) -> "SlicePose":
        return cls()


@dataclass
class PlaneGrid:
    """H*W points in row-major pixel order (p = row * W + col)."""

    height: int
    width: int
    points: np.ndarray  # (H*W, 3), or an autodiff Var of that shape


def euler_to_matrix(euler):
    """Rotation matrix ``Rz @ Ry @ Rx`` for angles ``(theta_x, theta_y, theta_z)``."""
    if not isinstance(euler, ad.Var):
        euler = np.asarray(euler, dtype=np.float64)
        if euler.shape != (3,):
            raise ValueError(f"expected three Euler angles, got shape {euler.shape}")
        if not np.all(np.isfinite(euler)):
            raise ValueError(f"non-finite Euler angles: {euler}")
    c = ad.cos(euler)
    s = ad.sin(euler)
    cx, cy, cz = c[0], c[1], c[2]
    sx, sy, sz = s[0], s[1], s[2]
    entries = [
        cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
        sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
        -sy, cy * sx, cy * cx,
    ]
    return ad.reshape(ad.stack(entries), (3, 3))


def reference_grid(height: int, width: int) -> PlaneGrid:
    if height < 2 or width < 2:
        raise ValueError(f"grid needs at least 2x2 pixels, got {height}x{width}")
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    x = 2.0 * cols / (width - 1) - 1.0
    y = 2.0 * rows / (height - 1) - 1.0
    pts = np.stack([x.ravel(), y.ravel(), np.zeros(height * width)], axis=1)
    return PlaneGrid(height, width, pts)


def _split_pose(pose):
    if isinstance(pose, SlicePose):
        return np.array(pose.euler), np.array(pose.translation)
    if isinstance(pose, ad.Var):
        return pose[0:3], pose[3:6]
    vec = np.asarray(pose, dtype=np.float64).ravel()
    return vec[:3], vec[3:6]


def transform_points(points, pose):
    """``R @ p + T`` for an (M, 3) point array; ``pose`` is a SlicePose or 6-vector."""
    euler, translation = _split_pose(pose)
    rot = euler_to_matrix(euler)
    return ad.matmul(points, ad.transpose(rot)) + translation


def plane_to_world(grid: PlaneGrid, pose) -> PlaneGrid:
    return PlaneGrid(grid.height, grid.width, transform_points(grid.points, pose))


def frequency_bands(n_freqs: int) -> np.ndarray:
    return np.pi * 2.0 ** np.arange(n_freqs)


def positional_encode(points, n_freqs: int):
    """Sinusoidal features, 6 * n_freqs per point.

    Layout per point is axis-major, frequency-minor, sin before cos:
    ``[sin(pi x), cos(pi x), sin(2 pi x), ..., cos(2^(L-1) pi z)]``.
    Coordinates outside [-1, 1] are encoded as they are.
    """
    if n_freqs < 1:
        raise ValueError(f"encoding depth must be >= 1, got {n_freqs}")
    if isinstance(points, PlaneGrid):
        points = points.points
    n = points.shape[0]
    scaled = ad.reshape(points, (n, 3, 1)) * frequency_bands(n_freqs)
    feats = ad.stack([ad.sin(scaled), ad.cos(scaled)], axis=-1)
    return ad.reshape(feats, (n, 6 * n_freqs))
