"""Sinusoidal MLP representing the dipole kernel, with hand-written backprop.

The network maps a 6-vector ``(r, b)`` to one real value: ``r`` is the
normalized k-space coordinate in ``[-1, 1]^3`` and ``b`` the field orientation,
so one parameter set produces the kernel for every orientation.

k-space voxels are placed on ``r`` after an fftshift-style reordering, which
keeps the cone geometrically contiguous: DFT index ``i`` on an axis of length
``n`` goes to shifted index ``s = (i + n // 2) % n`` and then to
``r = 2 s / n - 1 + 1 / n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dipole import DipoleKernel, Orientation
from .errors import MissingForwardCache
from .grid import GridSpec

IN_DIM = 6


@dataclass(frozen=True, eq=False)
class CoordBatch:
    r: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64).reshape(-1, 3)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1, 3)
        if r.shape != b.shape:
            raise ValueError("r and b need the same number of rows")
        if np.any(np.abs(r) > 1.0):
            raise ValueError("coordinates must lie in [-1, 1]")
        if np.any(np.abs(np.linalg.norm(b, axis=1) - 1.0) > 1e-12):
            raise ValueError("orientations must be unit-norm")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "b", b)

    def __len__(self):
        return self.r.shape[0]

    def inputs(self) -> np.ndarray:
        return np.concatenate([self.r, self.b], axis=1)


class SirenNet:
    """``depth`` affine layers; all but the last are followed by ``sin(omega0 * .)``.

    ``depth=1`` is a plain affine map of the input.
    """

    def __init__(self, depth=5, width=128, omega0=30.0, in_dim=IN_DIM, out_dim=1, rng=None):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        rng = np.random.default_rng(rng)
        self.depth = int(depth)
        self.width = int(width)
        self.omega0 = float(omega0)
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        sizes = [self.in_dim] + [self.width] * (self.depth - 1) + [self.out_dim]
        self.weights = []
        self.biases = []
        for layer, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if layer == 0:
                bound = 1.0 / n_in
            else:
                bound = np.sqrt(6.0 / n_in) / self.omega0
            self.weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            self.biases.append(rng.uniform(-bound, bound, size=n_out))
        self.grad_w = [np.zeros_like(w) for w in self.weights]
        self.grad_b = [np.zeros_like(b) for b in self.biases]
        self._cache = None

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def grads(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.grad_w, self.grad_b):
            out += [w, b]
        return out

    def zero_grad(self):
        for g in self.grads:
            g[...] = 0.0

    def clear_cache(self):
        self._cache = None

    def copy(self) -> "SirenNet":
        other = SirenNet.__new__(SirenNet)
        other.depth, other.width, other.omega0 = self.depth, self.width, self.omega0
        other.in_dim, other.out_dim = self.in_dim, self.out_dim
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other.grad_w = [np.zeros_like(w) for w in self.weights]
        other.grad_b = [np.zeros_like(b) for b in self.biases]
        other._cache = None
        return other

    def header(self) -> dict:
        return {
            "depth": self.depth,
            "width": self.width,
            "omega0": self.omega0,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
        }


def siren_forward(net: SirenNet, batch: CoordBatch, keep_cache: bool = True) -> np.ndarray:
    """Evaluate the network on every row; returns a length-B vector."""
    h = batch.inputs()
    hs, zs = [h], []
    last = net.depth - 1
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        if layer == last:
            h = z
        else:
            zs.append(z)
            h = np.sin(net.omega0 * z)
            hs.append(h)
    out = h[:, 0] if net.out_dim == 1 else h
    if keep_cache:
        net._cache = (batch, hs, zs, out)
    return out


def siren_backward(net: SirenNet, batch: CoordBatch, dl_dout: np.ndarray) -> list[np.ndarray]:
    """Accumulate d(sum dl_dout * out)/d(theta) into the gradient buffers."""
    if net._cache is None or net._cache[0] is not batch:
        raise MissingForwardCache("siren_backward needs a siren_forward on the same batch")
    _, hs, zs, _ = net._cache
    g = np.asarray(dl_dout, dtype=np.float64).reshape(len(batch), net.out_dim)
    for layer in range(net.depth - 1, -1, -1):
        if layer != net.depth - 1:
            g = g * (net.omega0 * np.cos(net.omega0 * zs[layer]))
        net.grad_w[layer] += g.T @ hs[layer]
        net.grad_b[layer] += g.sum(axis=0)
        if layer > 0:
            g = g @ net.weights[layer]
    return net.grads


def _axis_coords(n: int) -> np.ndarray:
    i = np.arange(n)
    s = (i + n // 2) % n
    return 2.0 * s / n - 1.0 + 1.0 / n


def index_to_coord(index, dims) -> np.ndarray:
    """Normalized coordinate of DFT voxel ``index`` on a grid of ``dims``."""
    index = np.asarray(index)
    dims = np.asarray(dims)
    s = (index + dims // 2) % dims
    return 2.0 * s / dims - 1.0 + 1.0 / dims


def coord_to_index(r, dims) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    dims = np.asarray(dims)
    s = np.rint((r + 1.0 - 1.0 / dims) * dims / 2.0).astype(int)
    return (s - dims // 2) % dims


@lru_cache(maxsize=16)
def _grid_coords(dims) -> np.ndarray:
    ax = [_axis_coords(n) for n in dims]
    rx, ry, rz = np.meshgrid(*ax, indexing="ij")
    r = np.stack([rx.ravel(), ry.ravel(), rz.ravel()], axis=1)
    r.flags.writeable = False
    return r


def kernel_batch(grid: GridSpec, orients, flat_index=None) -> CoordBatch:
    """Rows for every voxel (or ``flat_index`` subset) for each orientation, stacked."""
    r = _grid_coords(grid.dims)
    if flat_index is not None:
        r = r[flat_index]
    rs, bs = [], []
    for o in orients:
        rs.append(r)
        bs.append(np.broadcast_to(np.asarray(o.b), r.shape))
    return CoordBatch(np.concatenate(rs), np.concatenate(bs))


def synthesize_kernel(net: SirenNet, grid: GridSpec, orient: Orientation) -> DipoleKernel:
    """Raw network output at every k-space voxel, unclamped."""
    values = siren_forward(net, kernel_batch(grid, [orient]), keep_cache=False)
    return DipoleKernel(grid, orient, values.reshape(grid.dims))
