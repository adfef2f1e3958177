"""Analytic dipole kernels, cone-null masks and the susceptibility-to-field model.

Kernels follow ``D(k) = 1/3 - (k.b)^2 / |k|^2`` with ``D(0) = 0``. On even grids
the Nyquist bins are averaged with their mirrors so every kernel is exactly
Hermitian. For an axis-aligned ``b`` this changes nothing. Bins lying on two
or more Nyquist planes are not equivariant under axis flips: the only
flip-invariant alternative (averaging over every sign alias) is zero at the
Nyquist corner for all orientations, which would leave that bin unrecoverable
even from many orientations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import (
    GridSpec,
    Volume3D,
    Spectrum3D,
    check_same_grid,
    fft_forward,
    fft_inverse,
    freq_coords,
    mirror_index,
)

UNIT_TOL = 1e-12


@dataclass(frozen=True)
class Orientation:
    """Unit vector of the main field B0 in grid coordinates."""

    b: tuple[float, float, float]

    def __post_init__(self):
        b = tuple(float(c) for c in self.b)
        if len(b) != 3:
            raise ValueError("orientation needs three components")
        norm = np.sqrt(sum(c * c for c in b))
        if abs(norm - 1.0) > UNIT_TOL:
            raise ValueError(f"orientation {b} is not unit-norm (|b| = {norm!r})")
        object.__setattr__(self, "b", b)

    @classmethod
    def from_vector(cls, v) -> "Orientation":
        v = np.asarray(v, dtype=np.float64)
        n = np.linalg.norm(v)
        if not np.isfinite(n) or n == 0:
            raise ValueError(f"cannot normalize {v}")
        return cls(tuple(v / n))

    def as_array(self) -> np.ndarray:
        return np.array(self.b)


Z_AXIS = Orientation((0.0, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class DipoleKernel:
    """Real k-space kernel for one orientation (analytic or network-predicted)."""

    grid: GridSpec
    orientation: Orientation
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.dims:
            raise ValueError(f"kernel shape {v.shape} does not match grid {self.grid.dims}")
        if not v.flags.writeable and v.dtype == np.float64:
            object.__setattr__(self, "values", v)
        else:
            v = v.copy()
            v.flags.writeable = False
            object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class ConeMask:
    grid: GridSpec
    flags: np.ndarray

    @property
    def fraction(self) -> float:
        return float(np.mean(self.flags))


def _ordered_sum(terms: np.ndarray) -> np.ndarray:
    # summing sorted terms makes the result independent of axis order
    return np.sort(terms, axis=0).sum(axis=0)


def _formula(kx, ky, kz, b) -> np.ndarray:
    k = np.broadcast_arrays(kx, ky, kz)
    # (k.b)^2 expanded into products k_i k_j b_i b_j, each unchanged (bit for bit)
    # when k -> -k or when an axis is flipped in both k and b
    quad = [(k[i] * k[j]) * (b[i] * b[j]) * (1.0 if i == j else 2.0)
            for i in range(3) for j in range(i, 3)]
    kdotb2 = _ordered_sum(np.stack(quad))
    k2 = _ordered_sum(np.stack([k[0] * k[0], k[1] * k[1], k[2] * k[2]]))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.clip(kdotb2 / k2, 0.0, 1.0)
    return 1.0 / 3.0 - ratio


@lru_cache(maxsize=64)
def _kernel_values(dims, voxel_size, b) -> np.ndarray:
    fc = freq_coords(GridSpec(dims, voxel_size))
    d = np.broadcast_to(_formula(fc.kx, fc.ky, fc.kz, b), dims)
    # An even-length axis has a Nyquist bin that is its own mirror, so for
    # off-axis b the formula differs between k and the bin holding -k. Averaging
    # with the mirrored kernel restores D(k) == D(-k); elsewhere it is a no-op.
    d = 0.5 * (d + mirror_index(d))
    d[0, 0, 0] = 0.0
    d.flags.writeable = False
    return d


def dipole_kernel(grid: GridSpec, orient: Orientation) -> DipoleKernel:
    """``D(k) = 1/3 - (k.b)^2 / |k|^2`` on the DFT grid, with ``D(0) = 0``."""
    values = _kernel_values(grid.dims, grid.voxel_size, orient.b)
    return DipoleKernel(grid, orient, values)


def cone_mask(kernel: DipoleKernel, t_cone: float) -> ConeMask:
    if not 0.0 < t_cone < 1.0 / 3.0:
        raise ValueError(f"t_cone must lie in (0, 1/3), got {t_cone}")
    flags = np.abs(kernel.values) < t_cone
    flags[0, 0, 0] = True
    flags.flags.writeable = False
    return ConeMask(kernel.grid, flags)


def forward_field(chi: Volume3D, kernel: DipoleKernel) -> Volume3D:
    check_same_grid(chi, kernel)
    spec = fft_forward(chi).data * kernel.values
    return fft_inverse(Spectrum3D(chi.grid, spec))
