"""Sine-activated coordinate network mapping encoded positions to intensity."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from ._io import atomic_write_bytes

MAGIC = b"IVOL1"
OMEGA0 = 30.0


class CheckpointError(ValueError):
    pass


@dataclass
class ImplicitVolume:
    """Weights ``W[i]`` have shape (out, in); the last layer is linear.

    ``n_freqs == 0`` means the network reads raw xyz coordinates instead of
    sinusoidal features (encoding ablation).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    n_freqs: int = 10
    omega0: float = OMEGA0
    seed: int | None = None
    dims: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        dims = [self.weights[0].shape[1]]
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != dims[-1] or b.shape != (w.shape[0],):
                raise ValueError(f"layer shapes do not chain: {w.shape}, {b.shape}")
            dims.append(w.shape[0])
        if dims[-1] != 1:
            raise ValueError("output dimension must be 1")
        self.dims = tuple(dims)

    @property
    def in_features(self) -> int:
        return self.dims[0]

    def parameters(self) -> list[np.ndarray]:
        """Flat list ``[W1, b1, W2, b2, ...]`` (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_parameters(self, params) -> None:
        params = list(params)
        self.weights = [np.array(p, dtype=np.float64) for p in params[0::2]]
        self.biases = [np.array(p, dtype=np.float64) for p in params[1::2]]

    def register(self, tape: ad.Tape) -> list[ad.Var]:
        """Put every parameter on ``tape`` as a trainable leaf."""
        return [tape.leaf(p) for p in self.parameters()]

    def copy(self) -> "ImplicitVolume":
        return ImplicitVolume(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.n_freqs,
            self.omega0,
            self.seed,
        )


def input_dim(n_freqs: int) -> int:
    return 6 * n_freqs if n_freqs > 0 else 3


def init(n_freqs: int = 10, seed: int = 0, hidden: int = 128, n_hidden: int = 4,
         omega0: float = OMEGA0) -> ImplicitVolume:
    """SIREN initialization.

    First layer weights ~ U(-1/fan_in, 1/fan_in); later layers
    ~ U(-sqrt(6/fan_in)/omega0, +...).  Biases ~ U(-1/sqrt(fan_in), +...).
    """
    if n_freqs < 0:
        raise ValueError("encoding depth must be >= 0")
    rng = np.random.default_rng(seed)
    dims = [input_dim(n_freqs)] + [hidden] * n_hidden + [1]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / omega0
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in))
    return ImplicitVolume(weights, biases, n_freqs, omega0, seed)


def forward(net: ImplicitVolume, features, params=None):
    """Raw (unclamped) intensity for each row of ``features``.

    ``params`` overrides the network's own arrays, typically with the leaves
    returned by :meth:`ImplicitVolume.register`.
    """
    if features.shape[-1] != net.in_features:
        raise ValueError(
            f"feature length {features.shape[-1]} does not match network input {net.in_features}"
        )
    if params is None:
        params = net.parameters()
    ws, bs = params[0::2], params[1::2]
    h = features
    last = len(ws) - 1
    for i, (w, b) in enumerate(zip(ws, bs)):
        h = ad.matmul(h, ad.transpose(w)) + b
        if i == 0:
            h = ad.sin(net.omega0 * h)
        elif i < last:
            h = ad.sin(h)
    return ad.reshape(h, h.shape[:-1])


def clamp_intensity(raw):
    return np.clip(raw, 0.0, 1.0)


def save_checkpoint(path, net: ImplicitVolume, poses: np.ndarray | None = None) -> None:
    """Little-endian: magic, L (int32), omega0 (f64), n_dims (int32), dims
    (int32 each), parameters layer by layer (W row-major, then b) as f64,
    then an N x 6 f64 pose block filling the rest of the file."""
    poses = np.zeros((0, 6)) if poses is None else np.asarray(poses, dtype=np.float64)
    if poses.ndim != 2 or poses.shape[1] != 6:
        raise ValueError(f"poses must be N x 6, got {poses.shape}")
    parts = [MAGIC, struct.pack("<idi", net.n_freqs, net.omega0, len(net.dims))]
    parts.append(struct.pack(f"<{len(net.dims)}i", *net.dims))
    for p in net.parameters():
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(poses, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path) -> tuple[ImplicitVolume, np.ndarray]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not an IVOL1 checkpoint")
    off = len(MAGIC)
    header = struct.calcsize("<idi")
    if len(data) < off + header:
        raise CheckpointError(f"{path}: truncated header")
    n_freqs, omega0, n_dims = struct.unpack_from("<idi", data, off)
    off += header
    if n_dims < 2 or len(data) < off + 4 * n_dims:
        raise CheckpointError(f"{path}: bad layer table")
    dims = struct.unpack_from(f"<{n_dims}i", data, off)
    off += 4 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        n = fan_out * fan_in + fan_out
        if len(data) < off + 8 * n:
            raise CheckpointError(f"{path}: truncated parameters")
        block = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
        weights.append(block[: fan_out * fan_in].reshape(fan_out, fan_in).copy())
        biases.append(block[fan_out * fan_in:].copy())
        off += 8 * n
    rest = len(data) - off
    if rest % 48:
        raise CheckpointError(f"{path}: pose block is not a whole number of 6 x f64 rows")
    poses = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64).reshape(-1, 6)
    return ImplicitVolume(weights, biases, n_freqs, omega0), poses
