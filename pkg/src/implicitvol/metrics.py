"""Image similarity (SSIM, NCC) and slice-pose errors."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from ._io import atomic_write_text
from .geometry import SlicePose

WINDOW = 11
SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2

CSV_COLUMNS = ("approach", "N", "jointly_optimized", "plane", "ncc", "ssim", "angle_rad", "distance_px")


@dataclass
class MetricReport:
    ncc: float
    ssim: float
    angle_error: float
    distance_error: float

    def __post_init__(self):
        vals = (self.ncc, self.ssim, self.angle_error, self.distance_error)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite metric values: {vals}")


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


@lru_cache(maxsize=32)
def _valid_filter_matrix(n: int, size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    # row r holds the window at columns r .. r + size - 1 (valid correlation)
    g = gaussian_window(size, sigma)
    m = np.zeros((n - size + 1, n))
    for r in range(n - size + 1):
        m[r, r:r + size] = g
    m.setflags(write=False)
    return m


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim < 2 or a.shape[-1] < WINDOW or a.shape[-2] < WINDOW:
        raise ValueError(f"images must be at least {WINDOW}x{WINDOW}, got {a.shape}")


def ssim_map(a, b):
    """Windowed SSIM over valid positions; works on (H, W) or (B, H, W).

    Either argument may be an autodiff ``Var``.
    """
    _check_pair(a, b)
    rows = _valid_filter_matrix(a.shape[-2])
    cols = _valid_filter_matrix(a.shape[-1]).T

    def filt(x):
        return ad.matmul(ad.matmul(rows, x), cols)

    mu_a, mu_b = filt(a), filt(b)
    aa, bb, ab = filt(a * a), filt(b * b), filt(a * b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a, var_b, cov = aa - mu_aa, bb - mu_bb, ab - mu_ab
    num = (2.0 * mu_ab + C1) * (2.0 * cov + C2)
    den = (mu_aa + mu_bb + C1) * (var_a + var_b + C2)
    return num / den


def ssim(a, b):
    """Mean SSIM (Gaussian 11x11 window, sigma 1.5, dynamic range 1)."""
    out = ad.mean(ssim_map(a, b))
    return out if isinstance(out, ad.Var) else float(out)


def ssim_loss(predicted, observed):
    """``1 - ssim``; ``observed`` is treated as a constant."""
    observed = ad.value_of(observed)
    return 1.0 - ssim(predicted, observed)


def ncc(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.mean(da * da)), np.sqrt(np.mean(db * db))
    if sa == 0.0 or sb == 0.0:
        raise ValueError("degenerate constant input")
    return float(np.mean(da * db) / (sa * sb))


def wrap_angle(d):
    """Map angle differences to (-pi, pi]."""
    w = np.mod(np.asarray(d, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _as_pose_array(p) -> np.ndarray:
    if isinstance(p, SlicePose):
        return p.as_vector()
    if isinstance(p, (list, tuple)) and p and isinstance(p[0], SlicePose):
        return np.stack([q.as_vector() for q in p])
    return np.asarray(p, dtype=np.float64)


def pose_errors(estimated, truth, volume_side: int):
    """Per-slice ``(angle_error [rad], distance_error [px])`` arrays.

    The angle error averages the wrapped absolute per-axis differences; the
    distance is the Euclidean translation error scaled by ``volume_side / 2``.
    """
    est = np.atleast_2d(_as_pose_array(estimated))
    tru = np.atleast_2d(_as_pose_array(truth))
    if est.shape != tru.shape or est.shape[-1] != 6:
        raise ValueError(f"pose arrays must both be N x 6, got {est.shape} and {tru.shape}")
    angle = np.mean(np.abs(wrap_angle(est[:, :3] - tru[:, :3])), axis=1)
    dist = np.linalg.norm(est[:, 3:] - tru[:, 3:], axis=1) * (volume_side / 2.0)
    return angle, dist


def pose_error(estimated, truth, volume_side: int) -> tuple[float, float]:
    angle, dist = pose_errors(estimated, truth, volume_side)
    return float(angle[0]), float(dist[0])


def format_stat(values) -> str:
    """``mean±std`` of a sample, the cell format of the metrics CSV."""
    v = np.asarray(values, dtype=np.float64)
    return f"{v.mean():.6f}±{v.std():.6f}"


def parse_stat(cell: str) -> tuple[float, float]:
    mean, _, std = cell.partition("±")
    return float(mean), float(std or 0.0)


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in CSV_COLUMNS})
    return buf.getvalue()


def write_metrics_csv(path, rows) -> None:
    atomic_write_text(path, metrics_csv(rows))


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
