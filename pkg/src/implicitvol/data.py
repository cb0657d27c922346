"""Synthetic phantoms, slice acquisition, pose noise and file formats.

Voxel ``(i, j, k)`` of a side-``S`` volume sits at
``(2i/(S-1) - 1, 2j/(S-1) - 1, 2k/(S-1) - 1)``, so array axis 0 is x,
axis 1 is y and axis 2 is z.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._io import atomic_write_bytes, atomic_write_text
from .geometry import SlicePose, euler_to_matrix, reference_grid, transform_points

VOLUME_FORMAT = "IVOLVOL1"


class VolumeFormatError(ValueError):
    pass


@dataclass
class VoxelVolume:
    data: np.ndarray  # (S, S, S) float, values in [0, 1]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or len(set(self.data.shape)) != 1:
            raise ValueError(f"volume must be a cube, got shape {self.data.shape}")
        if self.data.shape[0] < 2:
            raise ValueError("volume side must be >= 2")

    @property
    def side(self) -> int:
        return self.data.shape[0]


@dataclass
class Phantom:
    volume: VoxelVolume
    seed: int
    ellipsoids: list[dict]
    speckle: float

    @property
    def descriptor(self) -> dict:
        return {"seed": self.seed, "speckle": self.speckle, "ellipsoids": self.ellipsoids}


@dataclass
class AcquisitionSet:
    images: np.ndarray  # (N, H, W)
    true_poses: np.ndarray  # (N, 6)
    noisy_poses: np.ndarray  # (N, 6)
    noise: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.images)
        if self.true_poses.shape != (n, 6) or self.noisy_poses.shape != (n, 6):
            raise ValueError("images, true poses and noisy poses must share length N")

    def __len__(self) -> int:
        return len(self.images)


# ---------------------------------------------------------------------------
# sampling


def lattice_points(side: int) -> np.ndarray:
    """Voxel centers of a side^3 volume as (side^3, 3), C order (k fastest)."""
    lin = 2.0 * np.arange(side) / (side - 1) - 1.0
    return np.stack(np.meshgrid(lin, lin, lin, indexing="ij"), axis=-1).reshape(-1, 3)


def world_to_index(points, side: int) -> np.ndarray:
    return (np.asarray(points, dtype=np.float64) + 1.0) * (side - 1) / 2.0


def sample_volume(data: np.ndarray, points) -> np.ndarray:
    """Trilinear interpolation at world points (M, 3); corners outside read 0."""
    side = data.shape[0]
    u = world_to_index(points, side)
    base = np.floor(u).astype(np.int64)
    frac = u - base
    out = np.zeros(u.shape[0])
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        ix = base[:, 0] + dx
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            iy = base[:, 1] + dy
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                iz = base[:, 2] + dz
                ok = (
                    (ix >= 0) & (ix < side) & (iy >= 0) & (iy < side) & (iz >= 0) & (iz < side)
                )
                vals = np.zeros(u.shape[0])
                vals[ok] = data[ix[ok], iy[ok], iz[ok]]
                out += wx * wy * wz * vals
    return out


def slice_image(volume, pose, height: int, width: int) -> np.ndarray:
    """Trilinear cross-section of ``volume`` at ``pose`` on an H x W lattice."""
    data = volume.data if isinstance(volume, VoxelVolume) else volume
    pts = transform_points(reference_grid(height, width).points, pose)
    return sample_volume(data, pts).reshape(height, width)


# ---------------------------------------------------------------------------
# phantom


def generate_phantom(side: int, seed: int = 0, speckle: float = 0.2,
                     speckle_sigma: float = 1.0) -> Phantom:
    """Nested soft-edged ellipsoids plus smooth multiplicative speckle.

    Deterministic per seed; output is scaled by its 99.9th percentile and
    clipped to [0, 1].
    """
    if side < 16:
        raise ValueError(f"phantom side must be >= 16, got {side}")
    rng = np.random.default_rng(seed)
    pts = lattice_points(side)
    edge = 1.5 * 2.0 / (side - 1)  # ~1.5 voxel transition

    shapes = []
    # head: bright shell around a mid-gray interior
    outer = np.array([0.78, 0.68, 0.72]) * rng.uniform(0.95, 1.05, 3)
    shapes.append(dict(center=rng.uniform(-0.04, 0.04, 3), radii=outer,
                       rot=rng.uniform(-0.2, 0.2, 3), value=0.9))
    shapes.append(dict(center=shapes[0]["center"], radii=outer - 0.08,
                       rot=shapes[0]["rot"], value=0.45))
    # interior structures of distinct intensity
    for _ in range(int(rng.integers(4, 7))):
        radii = rng.uniform(0.1, 0.28, 3)
        center = rng.uniform(-0.4, 0.4, 3)
        shapes.append(dict(center=center, radii=radii, rot=rng.uniform(-np.pi, np.pi, 3),
                           value=float(rng.choice([0.1, 0.25, 0.65, 0.8]) + rng.uniform(-0.05, 0.05))))

    vol = np.zeros(len(pts))
    for s in shapes:
        rot = euler_to_matrix(np.asarray(s["rot"], dtype=np.float64))
        local = (pts - s["center"]) @ rot
        r = np.sqrt(np.sum((local / s["radii"]) ** 2, axis=1))
        # signed distance approximated by (r - 1) * min radius
        inside = 1.0 / (1.0 + np.exp(np.clip((r - 1.0) * np.min(s["radii"]) / (edge / 4.0), -60, 60)))
        vol = vol * (1.0 - inside) + s["value"] * inside
    vol = vol.reshape(side, side, side)

    if speckle > 0:
        noise = ndimage.gaussian_filter(rng.standard_normal(vol.shape), speckle_sigma)
        noise /= noise.std()
        vol = vol * (1.0 + speckle * noise)
    # robust range: a few speckle peaks should not compress the tissue contrast
    vol = np.clip(vol / np.percentile(vol, 99.9), 0.0, 1.0)

    described = [
        {k: (np.asarray(v).tolist() if k != "value" else float(v)) for k, v in s.items()}
        for s in shapes
    ]
    volume = VoxelVolume(vol, {"generator": "phantom", "seed": seed, "speckle": speckle})
    return Phantom(volume, seed, described, speckle)


# ---------------------------------------------------------------------------
# acquisition


_AXES = {"x": 0, "y": 1, "z": 2}


def sweep_poses(n: int, tilt_jitter: float = 0.0, spacing_jitter: float = 0.0,
                seed: int = 0, axis: str = "x") -> np.ndarray:
    """N x 6 poses fanned around one axis through the volume center.

    Primary angles are ``i * pi / N`` plus uniform jitter of up to
    ``spacing_jitter / 2`` of the spacing; the other two angles get uniform
    tilts in ``[-tilt_jitter, tilt_jitter]``.  Translations are zero.
    """
    if n < 1:
        raise ValueError("need at least one slice")
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    rng = np.random.default_rng(seed)
    step = np.pi / n
    primary = np.arange(n) * step + rng.uniform(-0.5, 0.5, n) * spacing_jitter * step
    poses = np.zeros((n, 6))
    poses[:, :3] = rng.uniform(-tilt_jitter, tilt_jitter, size=(n, 3))
    poses[:, _AXES[axis]] = primary
    return poses


def sample_slices(volume: VoxelVolume, n: int, tilt_jitter: float = 0.05, seed: int = 0,
                  size: int | None = None, spacing_jitter: float = 0.5,
                  axis: str = "x") -> AcquisitionSet:
    """Simulated freehand sweep; noisy poses start equal to the true ones."""
    size = volume.side if size is None else size
    poses = sweep_poses(n, tilt_jitter, spacing_jitter, seed, axis)
    images = np.stack([slice_image(volume, p, size, size) for p in poses])
    noise = {"sigma_angle": 0.0, "sigma_translation_px": 0.0, "seed": None,
             "tilt_jitter": tilt_jitter, "spacing_jitter": spacing_jitter, "axis": axis,
             "sweep_seed": seed}
    return AcquisitionSet(images, poses, poses.copy(), noise)


# scale factors turning a target mean error into per-component standard deviations:
# E|N(0, s^2)| = s * sqrt(2 / pi);  E||N(0, s^2 I_3)|| = s * 2 * sqrt(2 / pi)
ANGLE_STD_PER_MEAN_ABS = np.sqrt(np.pi / 2.0)
TRANSLATION_STD_PER_MEAN_NORM = np.sqrt(np.pi / 8.0)


def perturb_poses(poses, sigma_angle: float, sigma_translation: float, volume_side: int,
                  seed: int = 0, mode: str = "independent") -> np.ndarray:
    """Zero-mean Gaussian pose noise.

    ``sigma_angle`` (rad) and ``sigma_translation`` (px) are the expected values
    of the per-slice angle error (mean absolute per-axis difference) and
    distance error (Euclidean, pixels) the noise should produce.

    ``mode="random_walk"`` draws slowly varying noise along the sweep order
    instead of independent draws; this is a robustness option, not a model of
    any particular pose estimator.
    """
    if sigma_angle < 0 or sigma_translation < 0:
        raise ValueError("noise magnitudes must be non-negative")
    if isinstance(poses, (list, tuple)) and poses and isinstance(poses[0], SlicePose):
        poses = np.array([p.as_vector() for p in poses])
    else:
        poses = np.array(poses, dtype=np.float64)
    if sigma_angle == 0 and sigma_translation == 0:
        return poses.copy()
    rng = np.random.default_rng(seed)
    n = len(poses)
    draws = rng.standard_normal((n, 6))
    if mode == "random_walk":
        walk = np.cumsum(draws, axis=0)
        walk -= walk.mean(axis=0)
        draws = walk / np.maximum(walk.std(axis=0), 1e-12)
    elif mode != "independent":
        raise ValueError(f"unknown noise mode {mode!r}")
    angle_std = sigma_angle * ANGLE_STD_PER_MEAN_ABS
    trans_std = sigma_translation * TRANSLATION_STD_PER_MEAN_NORM / (volume_side / 2.0)
    out = poses.copy()
    out[:, :3] += angle_std * draws[:, :3]
    out[:, 3:] += trans_std * draws[:, 3:]
    return out


def acquire(volume: VoxelVolume, n: int, sigma_angle: float, sigma_translation: float,
            seed: int = 0, size: int | None = None, tilt_jitter: float = 0.05,
            spacing_jitter: float = 0.5, axis: str = "x", mode: str = "independent") -> AcquisitionSet:
    """Sweep plus pose noise; the noise seed is derived from ``seed``."""
    acq = sample_slices(volume, n, tilt_jitter, seed, size, spacing_jitter, axis)
    noise_seed = seed + 1_000_003
    acq.noisy_poses = perturb_poses(acq.true_poses, sigma_angle, sigma_translation,
                                    volume.side, noise_seed, mode)
    acq.noise.update(sigma_angle=sigma_angle, sigma_translation_px=sigma_translation,
                     seed=noise_seed, mode=mode, volume_side=volume.side)
    return acq


# ---------------------------------------------------------------------------
# file formats


def _payload_path(header: Path) -> Path:
    return header.with_name(header.name + ".raw")


def write_volume(path, volume: VoxelVolume) -> None:
    """Text header at ``path`` plus float32 little-endian payload at ``path + '.raw'``."""
    path = Path(path)
    payload = np.ascontiguousarray(volume.data, dtype="<f4").tobytes()  # k fastest
    header = {
        "format": VOLUME_FORMAT,
        "side": volume.side,
        "dtype": "float32-le",
        "order": "k-fastest",
        "min": float(volume.data.min()),
        "max": float(volume.data.max()),
        "payload": _payload_path(path).name,
        "descriptor": json.dumps(volume.meta, sort_keys=True),
    }
    atomic_write_bytes(_payload_path(path), payload)
    atomic_write_text(path, "".join(f"{k}={v}\n" for k, v in header.items()))


def read_volume(path, expected_side: int | None = None) -> VoxelVolume:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError:
        raise VolumeFormatError(f"{path}: malformed header (not text)") from None
    header = {}
    for line in lines:
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VolumeFormatError(f"{path}: malformed header line {line!r}")
        header[key.strip()] = value.strip()
    if header.get("format") != VOLUME_FORMAT:
        raise VolumeFormatError(f"{path}: malformed header (format is {header.get('format')!r})")
    try:
        side = int(header["side"])
        meta = json.loads(header.get("descriptor", "{}"))
    except (KeyError, ValueError):
        raise VolumeFormatError(f"{path}: malformed header (side/descriptor)") from None
    if side < 2:
        raise VolumeFormatError(f"{path}: malformed header (side {side})")
    if expected_side is not None and side != expected_side:
        raise VolumeFormatError(f"{path}: side mismatch (file {side}, expected {expected_side})")
    raw = (path.parent / header.get("payload", _payload_path(path).name)).read_bytes()
    need = side ** 3 * 4
    if len(raw) < need:
        raise VolumeFormatError(f"{path}: truncated payload ({len(raw)} of {need} bytes)")
    if len(raw) > need:
        raise VolumeFormatError(f"{path}: side mismatch (payload holds {len(raw)} bytes, side {side} needs {need})")
    data = np.frombuffer(raw, dtype="<f4").reshape(side, side, side).astype(np.float64)
    return VoxelVolume(data, meta)


def to_bytes8(image) -> np.ndarray:
    """Quantize [0, 1] intensities to uint8 with round-half-up."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {img.shape}")
    h, w = img.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + to_bytes8(img).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    w, h, maxval = (int(t) for t in tokens[1:])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w).astype(np.float64) / maxval


POSE_FIELDS = ("theta_x", "theta_y", "theta_z", "tx", "ty", "tz")
POSE_COLUMNS = ("index",) + tuple(f"true_{f}" for f in POSE_FIELDS) + tuple(
    f"noisy_{f}" for f in POSE_FIELDS
)


def write_acquisition(directory, acq: AcquisitionSet) -> None:
    """``poses.csv`` + ``slice_0000.pgm`` ... + ``acquisition.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(acq.images):
        write_pgm(directory / f"slice_{i:04d}.pgm", img)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(POSE_COLUMNS)
    for i, (t, n) in enumerate(zip(acq.true_poses, acq.noisy_poses)):
        writer.writerow([i] + [repr(float(v)) for v in t] + [repr(float(v)) for v in n])
    atomic_write_text(directory / "poses.csv", buf.getvalue())
    atomic_write_text(directory / "acquisition.json", json.dumps(acq.noise, indent=2, sort_keys=True))


def read_acquisition(directory) -> AcquisitionSet:
    directory = Path(directory)
    with open(directory / "poses.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["index"]))
    true = np.array([[float(r[f"true_{f}"]) for f in POSE_FIELDS] for r in rows]).reshape(-1, 6)
    noisy = np.array([[float(r[f"noisy_{f}"]) for f in POSE_FIELDS] for r in rows]).reshape(-1, 6)
    images = np.stack([read_pgm(directory / f"slice_{int(r['index']):04d}.pgm") for r in rows])
    meta_path = directory / "acquisition.json"
    noise = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return AcquisitionSet(images, true, noisy, noise)
