"""Closed-form baselines: thresholded k-space division and COSMOS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dipole import DipoleKernel, Orientation, dipole_kernel
from .errors import DegenerateOrientations, InsufficientOrientations
from .grid import Spectrum3D, Volume3D, check_same_grid, fft_forward, fft_inverse

COSMOS_DEN_FLOOR = 1e-12


@dataclass(frozen=True)
class TkdConfig:
    t: float = 0.2
    zero_fill: bool = False

    def __post_init__(self):
        if not 0.0 < self.t <= 1.0 / 3.0:
            raise ValueError(f"TKD threshold must lie in (0, 1/3], got {self.t}")


@dataclass(frozen=True)
class OrientationSet:
    items: tuple[tuple[Orientation, Volume3D], ...]

    def __post_init__(self):
        items = tuple(self.items)
        if not items:
            raise InsufficientOrientations("orientation set is empty")
        check_same_grid(*(f for _, f in items))
        object.__setattr__(self, "items", items)

    def __len__(self):
        return len(self.items)

    @property
    def grid(self):
        return self.items[0][1].grid

    @property
    def orientations(self) -> list[Orientation]:
        return [o for o, _ in self.items]

    @property
    def fields(self) -> list[Volume3D]:
        return [f for _, f in self.items]


def sign0(x: np.ndarray) -> np.ndarray:
    """Sign with ``sign(0) = +1``."""
    return np.where(x < 0, -1.0, 1.0)


def tkd_invert(field: Volume3D, kernel: DipoleKernel, cfg: TkdConfig = TkdConfig()) -> Volume3D:
    """Divide the field spectrum by D, substituting ``t * sign(D)`` inside the cone.

    With ``cfg.zero_fill`` the cone bins are set to zero instead.
    """
    check_same_grid(field, kernel)
    d = kernel.values
    inside = np.abs(d) < cfg.t
    spec = fft_forward(field).data
    if cfg.zero_fill:
        safe = np.where(inside, 1.0, d)
        chi_k = np.where(inside, 0.0, spec / safe)
    else:
        chi_k = spec / np.where(inside, cfg.t * sign0(d), d)
    return fft_inverse(Spectrum3D(field.grid, chi_k))


def _cosmos_solve(fields, kernels, damping: float) -> Volume3D:
    grid = fields[0].grid
    num = np.zeros(grid.dims, dtype=np.complex128)
    den = np.zeros(grid.dims)
    for f, k in zip(fields, kernels):
        num += k.values * fft_forward(f).data
        den += k.values * k.values
    den = den + damping
    ok = den >= COSMOS_DEN_FLOOR
    chi_k = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    return fft_inverse(Spectrum3D(grid, chi_k))


def cosmos_invert(oset: OrientationSet, damping: float = 0.0) -> Volume3D:
    """Per-bin least squares over M >= 3 orientations.

    Bins whose normal-equation denominator falls below 1e-12 are zero-filled.
    """
    if damping < 0:
        raise ValueError("damping must be >= 0")
    if len(oset) < 3:
        raise InsufficientOrientations(f"COSMOS needs at least 3 orientations, got {len(oset)}")
    bs = [o.as_array() for o in oset.orientations]
    for i in range(len(bs)):
        for j in range(i + 1, len(bs)):
            if abs(float(bs[i] @ bs[j])) >= 1.0 - 1e-6:
                raise DegenerateOrientations(f"orientations {i} and {j} are (anti)parallel")
    kernels = [dipole_kernel(oset.grid, o) for o in oset.orientations]
    return _cosmos_solve(oset.fields, kernels, damping)
