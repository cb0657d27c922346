"""Implicit neural volume reconstruction from posed 2D slices.

A sine-activated coordinate network is fitted to cross-sectional images
through a hand-written reverse-mode autodiff engine, optionally refining
each slice's 6-DoF pose at the same time.  An inverse-distance-weighted
voxel baseline, a phantom/acquisition simulator and novel-view metrics
complete the experiment loop.
"""
from .autodiff import Tape, Var, backward, finite_diff_check
from .baseline import PointCloud, idw_reconstruct, rigid_align, scatter
from .data import (
    AcquisitionSet,
    Phantom,
    VoxelVolume,
    acquire,
    generate_phantom,
    perturb_poses,
    read_volume,
    sample_slices,
    write_volume,
)
from .evaluate import PLANES, compare_volumes
from .geometry import SlicePose, euler_to_matrix, plane_to_world, positional_encode, reference_grid
from .metrics import MetricReport, ncc, pose_error, ssim, ssim_loss
from .siren import ImplicitVolume, load_checkpoint, save_checkpoint
from .train import ReconstructionState, TrainConfig, export_volume, render_slice

__all__ = [
    "AcquisitionSet", "ImplicitVolume", "MetricReport", "PLANES", "Phantom", "PointCloud",
    "ReconstructionState", "SlicePose", "Tape", "TrainConfig", "Var", "VoxelVolume",
    "acquire", "backward", "compare_volumes", "euler_to_matrix", "export_volume",
    "finite_diff_check", "generate_phantom", "idw_reconstruct", "load_checkpoint", "ncc",
    "perturb_poses", "plane_to_world", "pose_error", "positional_encode", "read_volume",
    "reference_grid", "render_slice", "rigid_align", "sample_slices", "save_checkpoint",
    "scatter", "ssim", "ssim_loss", "write_volume",
]
