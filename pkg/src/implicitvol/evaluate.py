"""Novel-view comparison of a reconstruction against the ground-truth volume."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baseline import rigid_align
from .data import VoxelVolume, slice_image
from .metrics import format_stat, ncc, pose_errors, ssim

PLANES = ("axial", "coronal", "sagittal")

# rotation taking the reference plane (normal z) to each anatomical plane
_PLANE_EULER = {
    "axial": (0.0, 0.0, 0.0),  # z = c
    "coronal": (np.pi / 2, 0.0, 0.0),  # y = c
    "sagittal": (0.0, np.pi / 2, 0.0),  # x = c
}
_PLANE_AXIS = {"axial": 2, "coronal": 1, "sagittal": 0}


def plane_poses(plane: str, count: int = 20, span: float = 0.6) -> np.ndarray:
    """``count`` parallel planes with offsets evenly spaced in ``[-span, span]``."""
    if plane not in _PLANE_EULER:
        raise ValueError(f"unknown plane {plane!r}; expected one of {PLANES}")
    offsets = np.linspace(-span, span, count)
    poses = np.zeros((count, 6))
    poses[:, :3] = _PLANE_EULER[plane]
    poses[:, 3 + _PLANE_AXIS[plane]] = offsets
    return poses


@dataclass
class PlaneScores:
    ncc: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)


@dataclass
class Evaluation:
    planes: dict[str, PlaneScores]
    transform: np.ndarray
    slices_per_plane: int

    def mean_ssim(self, plane: str) -> float:
        return float(np.mean(self.planes[plane].ssim))

    def mean_ncc(self, plane: str) -> float:
        return float(np.mean(self.planes[plane].ncc))


def compare_volumes(recon: VoxelVolume, truth: VoxelVolume, planes=PLANES, count: int = 20,
                    align: bool = True, size: int | None = None) -> Evaluation:
    """Rigidly align ``recon`` to ``truth`` and score matching novel planes."""
    if recon.side != truth.side:
        raise ValueError(f"reconstruction side {recon.side} differs from truth side {truth.side}")
    transform = np.zeros(6)
    # a constant reconstruction has nothing to register; score it unaligned
    if align and np.std(recon.data) > 0:
        recon, transform = rigid_align(recon, truth)
    size = truth.side if size is None else size
    scores = {}
    for plane in planes:
        s = PlaneScores()
        for pose in plane_poses(plane, count):
            a = slice_image(truth, pose, size, size)
            b = slice_image(recon, pose, size, size)
            s.ncc.append(ncc(a, b) if np.std(b) > 0 else 0.0)
            s.ssim.append(ssim(a, b))
        scores[plane] = s
    return Evaluation(scores, transform, count)


def table_rows(evaluation: Evaluation, approach: str, n_slices: int, joint: bool | None,
               estimated_poses=None, true_poses=None, volume_side: int | None = None) -> list[dict]:
    """Metric CSV rows, one per plane, cells formatted ``mean±std``."""
    if estimated_poses is not None and true_poses is not None:
        angle, dist = pose_errors(estimated_poses, true_poses, volume_side)
        angle_cell, dist_cell = format_stat(angle), format_stat(dist)
    else:
        angle_cell = dist_cell = ""
    rows = []
    for plane, s in evaluation.planes.items():
        rows.append({
            "approach": approach,
            "N": n_slices,
            "jointly_optimized": "-" if joint is None else ("yes" if joint else "no"),
            "plane": plane,
            "ncc": format_stat(s.ncc),
            "ssim": format_stat(s.ssim),
            "angle_rad": angle_cell,
            "distance_px": dist_cell,
        })
    return rows
