"""Fitting the implicit volume to posed slices, optionally refining the poses.

One epoch visits every slice once in a seeded random order, in groups of
``slices_per_step``.  Each group is rendered at its current poses, compared
with the observed images through the SSIM loss and back-propagated to the
network weights and, when ``joint_optimize`` is set, to the six pose
parameters of each slice in the group.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import siren
from ._io import atomic_write_text
from .data import VoxelVolume, lattice_points
from .geometry import SlicePose, positional_encode, reference_grid, transform_points
from .metrics import ssim_loss
from .parallel import map_chunks

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10000
    network_lr: float = 1e-3
    pose_lr: float = 1e-3
    lr_decay: float = 0.97  # multiplicative, applied every ``decay_every`` epochs
    decay_every: int = 100
    slices_per_step: int = 4
    joint_optimize: bool = True
    n_freqs: int = 10  # 0 disables the sinusoidal encoding
    seed: int = 0
    hidden: int = 128
    n_hidden: int = 4
    omega0: float = siren.OMEGA0
    pose_warmup: int = 0  # epochs before pose updates start

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.network_lr <= 0 or self.pose_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.decay_every < 1 or self.slices_per_step < 1:
            raise ValueError("decay_every and slices_per_step must be >= 1")
        if self.n_freqs < 0:
            raise ValueError("n_freqs must be >= 0")

    def lr_at(self, epoch: int) -> tuple[float, float]:
        factor = self.lr_decay ** (epoch // self.decay_every)
        return self.network_lr * factor, self.pose_lr * factor

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# training


@dataclass
class ReconstructionState:
    net: siren.ImplicitVolume
    poses: np.ndarray  # (N, 6)
    loss_history: list[float] = field(default_factory=list)
    epoch: int = 0
    lr_history: list[tuple[float, float]] = field(default_factory=list)


def _features(points, n_freqs: int):
    return positional_encode(points, n_freqs) if n_freqs > 0 else points


def render_batch(net, poses, height: int, width: int, params=None):
    """Raw network output for a stack of poses: shape (len(poses), H, W).

    ``poses`` is a sequence of 6-vectors (arrays or autodiff ``Var``).
    """
    grid = reference_grid(height, width).points
    pts = [transform_points(grid, p) for p in poses]
    pts = ad.concat(pts, axis=0) if len(pts) > 1 else pts[0]
    out = siren.forward(net, _features(pts, net.n_freqs), params)
    return ad.reshape(out, (len(poses), height, width))


def step_loss(net, params, pose_inputs, images: np.ndarray):
    """SSIM loss of one group, averaged over its slices."""
    _, h, w = images.shape
    pred = render_batch(net, pose_inputs, h, w, params)
    return ssim_loss(pred, images)


def train(images, initial_poses, cfg: TrainConfig, net: siren.ImplicitVolume | None = None,
          callback: Callable[[ReconstructionState], None] | None = None) -> ReconstructionState:
    """Fit the network to ``images`` (N, H, W) placed at ``initial_poses`` (N, 6)."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise ValueError("need at least one slice")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"all slices must share one shape, got {sorted(shapes)}")
    images = np.stack(images)
    poses = np.array(
        [p.as_vector() if isinstance(p, SlicePose) else p for p in initial_poses], dtype=np.float64
    ).reshape(-1, 6)
    n = len(images)
    if len(poses) != n:
        raise ValueError(f"{n} slices but {len(poses)} poses")

    if net is None:
        net = siren.init(cfg.n_freqs, cfg.seed, cfg.hidden, cfg.n_hidden, cfg.omega0)
    else:
        net = net.copy()
    state = ReconstructionState(net, poses.copy())
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    net_opt = AdamState.zeros_like(params)
    pose_opt = [AdamState.zeros_like([poses[i]]) for i in range(n)]

    for epoch in range(cfg.epochs):
        net_lr, pose_lr = cfg.lr_at(epoch)
        refine = cfg.joint_optimize and epoch >= cfg.pose_warmup
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.slices_per_step):
            group = order[start:start + cfg.slices_per_step]
            tape = ad.Tape()
            pvars = [tape.leaf(p) for p in params]
            pose_in = [tape.leaf(state.poses[i], trainable=refine) for i in group]
            loss = step_loss(net, pvars, pose_in, images[group])
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} for slices {sorted(int(i) for i in group)}"
                )
            grads = ad.backward(tape, loss)
            params, net_opt = adam_step(params, [grads[v] for v in pvars], net_opt, net_lr)
            if refine:
                for i, pv in zip(group, pose_in):
                    (new_pose,), pose_opt[i] = adam_step([state.poses[i]], [grads[pv]], pose_opt[i], pose_lr)
                    state.poses[i] = new_pose
            losses.append(value * len(group))
        net.set_parameters(params)
        params = net.parameters()
        state.loss_history.append(float(np.sum(losses) / n))
        state.lr_history.append((net_lr, pose_lr))
        state.epoch = epoch + 1
        if callback is not None:
            callback(state)
    return state


def loss_log_csv(state: ReconstructionState) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "mean_loss", "network_lr", "pose_lr"])
    for e, (loss, (nlr, plr)) in enumerate(zip(state.loss_history, state.lr_history), start=1):
        writer.writerow([e, repr(loss), repr(nlr), repr(plr)])
    return buf.getvalue()


def write_loss_log(path, state: ReconstructionState) -> None:
    atomic_write_text(path, loss_log_csv(state))


# ---------------------------------------------------------------------------
# inference


def _net_of(model) -> siren.ImplicitVolume:
    return model.net if isinstance(model, ReconstructionState) else model


def query(model, points: np.ndarray, chunk: int = 16384) -> np.ndarray:
    """Clamped intensities at world points (M, 3)."""
    net = _net_of(model)
    points = np.asarray(points, dtype=np.float64)

    def run(lo, hi):
        return siren.forward(net, _features(points[lo:hi], net.n_freqs))

    return siren.clamp_intensity(map_chunks(run, len(points), chunk))


def render_slice(model, pose, height: int, width: int) -> np.ndarray:
    """Image of the implicit volume on the plane given by ``pose``."""
    grid = reference_grid(height, width).points
    return query(model, transform_points(grid, pose)).reshape(height, width)


def export_volume(model, side: int) -> VoxelVolume:
    """Sample the implicit volume on a side^3 lattice over [-1, 1]^3."""
    if side < 2:
        raise ValueError("side must be >= 2")
    pts = lattice_points(side)
    return VoxelVolume(query(model, pts).reshape(side, side, side), {"generator": "implicit"})


def timed_train(images, poses, cfg: TrainConfig, **kw) -> tuple[ReconstructionState, float]:
    t0 = time.perf_counter()
    state = train(images, poses, cfg, **kw)
    return state, time.perf_counter() - t0
