"""Synthetic susceptibility phantoms, multi-orientation fields and noise.

Voxel ``(i, j, k)`` sits at ``(i*vx, j*vy, k*vz)`` millimeters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from .classical import OrientationSet
from .dipole import Orientation, dipole_kernel, forward_field
from .errors import ShapeOutOfBounds
from .grid import GridSpec, Volume3D

CHI_LIMIT = 1.0


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    chi: float


@dataclass(frozen=True)
class Cylinder:
    """Cylinder around ``axis`` through ``center``; infinite when ``length`` is None."""

    axis: tuple[float, float, float]
    center: tuple[float, float, float]
    radius: float
    chi: float
    length: Optional[float] = None


@dataclass(frozen=True)
class Box:
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    chi: float


Shape = Union[Sphere, Cylinder, Box]


@dataclass(frozen=True)
class PhantomSpec:
    grid: GridSpec
    shapes: tuple = ()
    background: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"unsupported noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def _positions(grid: GridSpec):
    (nx, ny, nz), (vx, vy, vz) = grid.dims, grid.voxel_size
    return (np.arange(nx)[:, None, None] * vx,
            np.arange(ny)[None, :, None] * vy,
            np.arange(nz)[None, None, :] * vz)


def _check_bounds(lo, hi, grid: GridSpec, what):
    extent = [n * v for n, v in zip(grid.dims, grid.voxel_size)]
    for a in range(3):
        if lo[a] < 0 or hi[a] > extent[a]:
            raise ShapeOutOfBounds(f"{what} exceeds the grid extent {extent} mm")


def _support(shape: Shape, grid: GridSpec) -> np.ndarray:
    x, y, z = _positions(grid)
    if not -CHI_LIMIT <= shape.chi <= CHI_LIMIT:
        raise ValueError(f"susceptibility {shape.chi} ppm outside [-1, 1]")
    if isinstance(shape, Sphere):
        c, r = np.asarray(shape.center, float), float(shape.radius)
        _check_bounds(c - r, c + r, grid, "sphere")
        return (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 <= r * r
    if isinstance(shape, Cylinder):
        c, r = np.asarray(shape.center, float), float(shape.radius)
        a = np.asarray(shape.axis, float)
        a = a / np.linalg.norm(a)
        d = [x - c[0], y - c[1], z - c[2]]
        along = d[0] * a[0] + d[1] * a[1] + d[2] * a[2]
        perp2 = d[0] ** 2 + d[1] ** 2 + d[2] ** 2 - along**2
        inside = perp2 <= r * r
        if shape.length is not None:
            half = shape.length / 2.0
            inside &= np.abs(along) <= half
            tips = [c + half * a, c - half * a]
            # bounding box of the two end discs
            rad = r * np.sqrt(np.clip(1.0 - a * a, 0.0, 1.0))
            lo = np.minimum(*tips) - rad
            hi = np.maximum(*tips) + rad
            _check_bounds(lo, hi, grid, "cylinder")
        else:
            # infinite cylinders cross the whole grid; only the center is checked
            _check_bounds(c, c, grid, "cylinder")
        return np.broadcast_to(inside, grid.dims)
    if isinstance(shape, Box):
        lo, hi = np.asarray(shape.lower, float), np.asarray(shape.upper, float)
        if np.any(hi < lo):
            raise ValueError("box upper bound below lower bound")
        _check_bounds(lo, hi, grid, "box")
        return ((x >= lo[0]) & (x <= hi[0]) & (y >= lo[1]) & (y <= hi[1])
                & (z >= lo[2]) & (z <= hi[2]))
    raise TypeError(f"unknown shape {shape!r}")


def build_phantom(spec: PhantomSpec):
    """Voxelize the shapes in order (later shapes overwrite earlier ones).

    Returns ``(chi, mask)`` where the mask is the union of supports dilated by
    two voxels.
    """
    grid = spec.grid
    chi = np.full(grid.dims, float(spec.background))
    union = np.zeros(grid.dims, dtype=bool)
    for shape in spec.shapes:
        sup = _support(shape, grid)
        chi[sup] = shape.chi
        union |= sup
    mask = ndimage.binary_dilation(union, structure=ndimage.generate_binary_structure(3, 1),
                                   iterations=2) if union.any() else union
    return Volume3D(grid, chi), mask


def synth_orientation_set(chi: Volume3D, orientations, noise: NoiseSpec = NoiseSpec()) -> OrientationSet:
    if len(orientations) < 1:
        raise ValueError("need at least one orientation")
    rng = np.random.default_rng(noise.seed)
    items = []
    for o in orientations:
        f = forward_field(chi, dipole_kernel(chi.grid, o))
        if noise.sigma > 0:
            f = Volume3D(chi.grid, f.data + rng.normal(0.0, noise.sigma, chi.grid.dims))
        items.append((o, f))
    return OrientationSet(tuple(items))


GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def orientation_sweep(n: int, cap_half_angle_deg: float, seed: int = 0) -> list[Orientation]:
    """Fibonacci spiral of ``n`` directions in the polar cap around z.

    The first point is the pole; the last lies on the cap boundary. ``seed``
    only rotates the spiral about z.
    """
    if n < 1 or not 0 < cap_half_angle_deg <= 90:
        raise ValueError("need n >= 1 and 0 < cap <= 90 degrees")
    cos_cap = math.cos(math.radians(cap_half_angle_deg))
    phase = np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi)
    out = []
    for i in range(n):
        frac = i / (n - 1) if n > 1 else 0.0
        cz = 1.0 - (1.0 - cos_cap) * frac
        if i == 0:
            out.append(Orientation((0.0, 0.0, 1.0)))
            continue
        s = math.sqrt(max(0.0, 1.0 - cz * cz))
        phi = phase + i * GOLDEN_ANGLE
        out.append(Orientation.from_vector((s * math.cos(phi), s * math.sin(phi), cz)))
    return out


def default_phantom_spec(n: int = 32, voxel: float = 1.0) -> PhantomSpec:
    """Sphere plus an oblique cylinder and a small box, scaled to an ``n``^3 grid."""
    grid = GridSpec.cube(n, voxel)
    L = n * voxel
    return PhantomSpec(
        grid=grid,
        shapes=(
            Sphere(center=(0.35 * L, 0.5 * L, 0.5 * L), radius=0.16 * L, chi=0.1),
            Cylinder(axis=(1.0, 0.0, 0.5), center=(0.62 * L, 0.5 * L, 0.5 * L),
                     radius=0.08 * L, chi=-0.08, length=0.4 * L),
            Box(lower=(0.5 * L, 0.25 * L, 0.3 * L), upper=(0.7 * L, 0.35 * L, 0.45 * L), chi=0.05),
        ),
        background=0.0,
    )
