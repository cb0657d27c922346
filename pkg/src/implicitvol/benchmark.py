"""Desk-scale phantom benchmark: IDW baseline vs implicit, with and without pose refinement.

The configuration here is sized for a single CPU core.  It differs from the
``TrainConfig`` defaults (which follow the full-scale setting) in network
width, encoding, first-layer frequency, epochs and learning rates; see the
README for the reasoning.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import baseline, data, evaluate, metrics, train

# initial pose-noise targets; translation scaled from a 160-voxel volume
ANGLE_TARGET = 0.24
DISTANCE_TARGET_160 = 8.34


@dataclass(frozen=True)
class BenchmarkConfig:
    side: int = 64
    n_slices: int = 128
    image_size: int = 32
    sigma_angle: float = ANGLE_TARGET
    sigma_translation: float | None = None  # px; None scales 8.34 px at 160 to ``side``
    epochs: int = 40
    hidden: int = 64
    n_hidden: int = 4
    n_freqs: int = 0
    omega0: float = 10.0
    network_lr: float = 1e-3
    pose_lr: float = 3e-2
    lr_decay: float = 0.8
    slices_per_step: int = 1
    eval_count: int = 20
    align: bool = True

    @property
    def translation_px(self) -> float:
        if self.sigma_translation is not None:
            return self.sigma_translation
        return DISTANCE_TARGET_160 * self.side / 160.0

    def train_config(self, seed: int, joint: bool) -> train.TrainConfig:
        return train.TrainConfig(
            epochs=self.epochs, network_lr=self.network_lr, pose_lr=self.pose_lr,
            lr_decay=self.lr_decay, decay_every=max(1, self.epochs // 10),
            slices_per_step=self.slices_per_step, joint_optimize=joint, n_freqs=self.n_freqs,
            seed=seed, hidden=self.hidden, n_hidden=self.n_hidden, omega0=self.omega0,
        )


@dataclass
class RunResult:
    approach: str
    seed: int
    n_slices: int
    joint: bool | None
    ssim: dict[str, float]
    ncc: dict[str, float]
    angle_initial: float
    angle_final: float
    distance_initial: float
    distance_final: float
    seconds: float
    rows: list[dict] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)
    initial_poses: np.ndarray | None = None
    final_poses: np.ndarray | None = None


def _scores(ev: evaluate.Evaluation):
    return ({p: ev.mean_ssim(p) for p in ev.planes}, {p: ev.mean_ncc(p) for p in ev.planes})


def make_acquisition(cfg: BenchmarkConfig, seed: int):
    phantom = data.generate_phantom(cfg.side, seed)
    acq = data.acquire(phantom.volume, cfg.n_slices, cfg.sigma_angle, cfg.translation_px,
                       seed=seed, size=cfg.image_size)
    return phantom, acq


def run_baseline(cfg: BenchmarkConfig, seed: int, acq=None, phantom=None) -> RunResult:
    if acq is None:
        phantom, acq = make_acquisition(cfg, seed)
    t0 = time.perf_counter()
    vol = baseline.idw_reconstruct(baseline.scatter(acq.images, acq.noisy_poses), cfg.side)
    seconds = time.perf_counter() - t0
    ev = evaluate.compare_volumes(vol, phantom.volume, count=cfg.eval_count, align=cfg.align)
    a, d = metrics.pose_errors(acq.noisy_poses, acq.true_poses, cfg.side)
    ssim, ncc = _scores(ev)
    rows = evaluate.table_rows(ev, "idw", cfg.n_slices, None, acq.noisy_poses, acq.true_poses, cfg.side)
    return RunResult("idw", seed, cfg.n_slices, None, ssim, ncc, a.mean(), a.mean(),
                     d.mean(), d.mean(), seconds, rows)


def run_implicit(cfg: BenchmarkConfig, seed: int, joint: bool, acq=None, phantom=None) -> RunResult:
    if acq is None:
        phantom, acq = make_acquisition(cfg, seed)
    state, seconds = train.timed_train(acq.images, acq.noisy_poses, cfg.train_config(seed, joint))
    vol = train.export_volume(state, cfg.side)
    ev = evaluate.compare_volumes(vol, phantom.volume, count=cfg.eval_count, align=cfg.align)
    a0, d0 = metrics.pose_errors(acq.noisy_poses, acq.true_poses, cfg.side)
    a1, d1 = metrics.pose_errors(state.poses, acq.true_poses, cfg.side)
    ssim, ncc = _scores(ev)
    rows = evaluate.table_rows(ev, "implicit", cfg.n_slices, joint, state.poses, acq.true_poses, cfg.side)
    return RunResult("implicit", seed, cfg.n_slices, joint, ssim, ncc, a0.mean(), a1.mean(),
                     d0.mean(), d1.mean(), seconds, rows, list(state.loss_history),
                     acq.noisy_poses, state.poses)


def run_all(cfg: BenchmarkConfig, seed: int) -> dict[str, RunResult]:
    """IDW, implicit without and with joint refinement on one phantom/acquisition."""
    phantom, acq = make_acquisition(cfg, seed)
    return {
        "idw": run_baseline(cfg, seed, acq, phantom),
        "implicit": run_implicit(cfg, seed, False, acq, phantom),
        "implicit_joint": run_implicit(cfg, seed, True, acq, phantom),
    }


def with_slices(cfg: BenchmarkConfig, n: int) -> BenchmarkConfig:
    return replace(cfg, n_slices=n)


def mean_over(results: list[RunResult], attr: str = "ssim") -> dict[str, float]:
    planes = results[0].ssim.keys()
    return {p: float(np.mean([getattr(r, attr)[p] for r in results])) for p in planes}
