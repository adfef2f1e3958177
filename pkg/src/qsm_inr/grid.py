"""Grids, real volumes, complex spectra and the shared FFT convention.

Arrays are indexed ``[i, j, k]`` along ``(x, y, z)``, so ``data.shape == dims``.
Serialized volumes use Fortran order, which makes x the fastest axis.

The forward DFT is unnormalized and the inverse carries the ``1/N`` factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, NonHermitianSpectrum

log = logging.getLogger(__name__)

MAX_VOXELS = 2**27
HERMITIAN_RTOL = 1e-6
IMAG_RESIDUE_RTOL = 1e-8


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        vs = tuple(float(v) for v in self.voxel_size)
        if len(dims) != 3 or len(vs) != 3:
            raise ValueError("dims and voxel_size need three entries")
        if any(d < 4 for d in dims):
            raise ValueError(f"every dim must be >= 4, got {dims}")
        if not all(np.isfinite(v) and v > 0 for v in vs):
            raise ValueError(f"voxel sizes must be positive, got {vs}")
        if dims[0] * dims[1] * dims[2] > MAX_VOXELS:
            raise ValueError(f"grid {dims} exceeds the {MAX_VOXELS} voxel budget")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", vs)

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @classmethod
    def cube(cls, n: int, voxel: float = 1.0) -> "GridSpec":
        return cls((n, n, n), (voxel, voxel, voxel))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Real scalar field on a grid (susceptibility in ppm or a normalized field)."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != self.grid.dims:
            raise ValueError(f"data shape {data.shape} does not match grid {self.grid.dims}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    def __add__(self, other: "Volume3D") -> "Volume3D":
        check_same_grid(self, other)
        return Volume3D(self.grid, self.data + other.data)

    def __sub__(self, other: "Volume3D") -> "Volume3D":
        check_same_grid(self, other)
        return Volume3D(self.grid, self.data - other.data)

    def __mul__(self, a: float) -> "Volume3D":
        return Volume3D(self.grid, self.data * float(a))

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Volume3D":
        return cls(grid, np.zeros(grid.dims))


@dataclass(frozen=True, eq=False)
class Spectrum3D:
    """Complex k-space samples in DFT order; DC sits at index (0, 0, 0)."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.shape != self.grid.dims:
            raise ValueError(f"data shape {data.shape} does not match grid {self.grid.dims}")
        object.__setattr__(self, "data", _frozen(data))


@dataclass(frozen=True, eq=False)
class FreqCoords:
    """Frequency axes in cycles/mm, shaped to broadcast over the grid."""

    grid: GridSpec
    kx: np.ndarray
    ky: np.ndarray
    kz: np.ndarray

    def vector_at(self, i: int, j: int, k: int) -> tuple[float, float, float]:
        return float(self.kx[i, 0, 0]), float(self.ky[0, j, 0]), float(self.kz[0, 0, k])


def check_same_grid(*objs) -> GridSpec:
    grid = objs[0].grid
    for o in objs[1:]:
        if o.grid != grid:
            raise GridMismatch(f"grid {o.grid} does not match {grid}")
    return grid


def fft_forward(v: Volume3D) -> Spectrum3D:
    return Spectrum3D(v.grid, np.fft.fftn(v.data))


def mirror_index(a: np.ndarray) -> np.ndarray:
    """Return ``a[-k mod n]`` for every axis."""
    return np.roll(a[::-1, ::-1, ::-1], 1, axis=(0, 1, 2))


def hermitian_defect(s: np.ndarray) -> float:
    scale = np.max(np.abs(s))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(s - np.conj(mirror_index(s)))) / scale)


def fft_inverse(s: Spectrum3D) -> Volume3D:
    defect = hermitian_defect(s.data)
    if defect > HERMITIAN_RTOL:
        raise NonHermitianSpectrum(
            f"spectrum deviates from Hermitian symmetry by {defect:.3e} (relative)"
        )
    out = np.fft.ifftn(s.data)
    re_max = np.max(np.abs(out.real))
    if re_max > 0 and np.max(np.abs(out.imag)) > IMAG_RESIDUE_RTOL * re_max:
        log.debug("discarding imaginary residue %.3e", np.max(np.abs(out.imag)) / re_max)
    return Volume3D(s.grid, out.real)


def freq_coords(grid: GridSpec) -> FreqCoords:
    (nx, ny, nz), (vx, vy, vz) = grid.dims, grid.voxel_size
    kx = np.fft.fftfreq(nx, d=vx).reshape(nx, 1, 1)
    ky = np.fft.fftfreq(ny, d=vy).reshape(1, ny, 1)
    kz = np.fft.fftfreq(nz, d=vz).reshape(1, 1, nz)
    return FreqCoords(grid, _frozen(kx), _frozen(ky), _frozen(kz))
