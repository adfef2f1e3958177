"""Volumetric image-quality metrics: HFEN, NRMSE, SSIM and PSNR.

All metrics take an optional boolean mask. SSIM and HFEN evaluate only at
masked centers whose whole filter window lies inside the volume, so zero
padding never enters a reported value. Restricting to a box mask pre-eroded by
the filter radius reproduces the metric of the cropped box exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ZeroReference
from .grid import Volume3D, check_same_grid

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LOG_SIGMA = 1.5
LOG_SIZE = 15
CSV_COLUMNS = ("hfen", "nrmse", "ssim", "psnr", "mask_voxels")


@dataclass(frozen=True)
class MetricsReport:
    hfen: float
    nrmse: float
    ssim: float
    psnr: float
    mask_voxels: int

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> list:
        d = self.to_dict()
        return [d[c] for c in CSV_COLUMNS]


def _mask_array(x: Volume3D, mask) -> np.ndarray:
    if mask is None:
        return np.ones(x.grid.dims, dtype=bool)
    m = np.asarray(getattr(mask, "data", mask))
    if m.shape != x.grid.dims:
        from .errors import GridMismatch

        raise GridMismatch(f"mask shape {m.shape} does not match grid {x.grid.dims}")
    return m.astype(bool)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Keep voxels whose (2r+1)^3 cube lies inside ``mask`` and the volume."""
    if radius == 0:
        return mask.copy()
    struct = np.ones((2 * radius + 1,) * 3, dtype=bool)
    return ndimage.binary_erosion(mask, structure=struct, border_value=0)


def interior(mask: np.ndarray, radius: int) -> np.ndarray:
    """``mask`` minus every voxel closer than ``radius`` to the volume edge."""
    out = np.zeros_like(mask, dtype=bool)
    core = tuple(slice(radius, n - radius) for n in mask.shape)
    out[core] = mask[core]
    return out


def nrmse(x: Volume3D, ref: Volume3D, mask=None) -> float:
    check_same_grid(x, ref)
    m = _mask_array(ref, mask)
    denom = np.linalg.norm(ref.data[m])
    if denom == 0:
        raise ZeroReference("reference is zero inside the mask")
    return float(np.linalg.norm((x.data - ref.data)[m]) / denom)


def psnr(x: Volume3D, ref: Volume3D, mask=None) -> float:
    """Peak is the reference range inside the mask; returns ``inf`` when MSE is 0."""
    check_same_grid(x, ref)
    m = _mask_array(ref, mask)
    r = ref.data[m]
    mse = float(np.mean((x.data[m] - r) ** 2))
    if mse == 0:
        return math.inf
    peak = float(r.max() - r.min())
    return 10.0 * math.log10(peak**2 / mse)


def ssim_map(x: np.ndarray, ref: np.ndarray, data_range: float) -> np.ndarray:
    def blur(a):
        return ndimage.gaussian_filter(a, SSIM_SIGMA, mode="constant",
                                       truncate=SSIM_RADIUS / SSIM_SIGMA)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x, mu_r = blur(x), blur(ref)
    sxx = blur(x * x) - mu_x**2
    srr = blur(ref * ref) - mu_r**2
    sxr = blur(x * ref) - mu_x * mu_r
    num = (2 * mu_x * mu_r + c1) * (2 * sxr + c2)
    den = (mu_x**2 + mu_r**2 + c1) * (sxx + srr + c2)
    return num / den


def ssim(x: Volume3D, ref: Volume3D, mask=None) -> float:
    """Mean local SSIM (3D Gaussian window, sigma 1.5, radius 5).

    The dynamic range comes from ``ref`` only, so the metric is not symmetric.
    """
    check_same_grid(x, ref)
    m = _mask_array(ref, mask)
    if np.array_equal(x.data, ref.data):
        return 1.0
    centers = interior(m, SSIM_RADIUS)
    if not centers.any():
        raise ValueError("mask too small for the SSIM window")
    r = ref.data[m]
    data_range = float(r.max() - r.min())
    return float(np.mean(ssim_map(x.data, ref.data, data_range)[centers]))


def log_kernel(size: int = LOG_SIZE, sigma: float = LOG_SIGMA) -> np.ndarray:
    """Laplacian-of-Gaussian kernel with zero sum, so constants are annihilated."""
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    r2 = x * x + y * y + z * z
    g = np.exp(-r2 / (2 * sigma**2))
    g /= g.sum()
    k = g * (r2 - 3 * sigma**2) / sigma**4
    return k - k.mean()


def log_filter(a: np.ndarray) -> np.ndarray:
    return ndimage.convolve(a, log_kernel(), mode="constant", cval=0.0)


def hfen(x: Volume3D, ref: Volume3D, mask=None) -> float:
    check_same_grid(x, ref)
    m = interior(_mask_array(ref, mask), LOG_SIZE // 2)
    lr = log_filter(ref.data)[m]
    denom = np.linalg.norm(lr)
    if denom == 0:
        raise ZeroReference("LoG of the reference vanishes at the evaluated centers")
    return float(np.linalg.norm(log_filter(x.data)[m] - lr) / denom)


def evaluate(x: Volume3D, ref: Volume3D, mask=None) -> MetricsReport:
    m = _mask_array(ref, mask)
    return MetricsReport(
        hfen=hfen(x, ref, m),
        nrmse=nrmse(x, ref, m),
        ssim=ssim(x, ref, m),
        psnr=psnr(x, ref, m),
        mask_voxels=int(m.sum()),
    )
