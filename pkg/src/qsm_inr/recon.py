"""Compact residual 3D convolutional reconstructor with manual backprop.

Convolutions are zero-padded "same" cross-correlations over channel-first
volumes of shape ``(C, nx, ny, nz)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MissingForwardCache
from .grid import Volume3D


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(C, X, Y, Z) -> (X*Y*Z, C*k^3) patches of the zero-padded input."""
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    c, nx, ny, nz = x.shape
    # (C, X, Y, Z, k, k, k) -> (X, Y, Z, C, k, k, k)
    return win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(nx * ny * nz, c * k**3)


def conv3d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    c_out, _, k, _, _ = w.shape
    spatial = x.shape[1:]
    cols = _im2col(x, k)
    out = cols @ w.reshape(c_out, -1).T + b
    return out.T.reshape((c_out,) + spatial)


def conv3d_input_grad(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    # transpose of a same-padded correlation: correlate with the flipped, channel-swapped kernel
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    return conv3d(g, wt, np.zeros(wt.shape[0]))


@dataclass
class ReconCache:
    net_id: int
    inputs: list
    pre: list
    cols: list


class ConvReconstructor:
    """``chi = x + stack(x)`` with leaky-ReLU between convolution layers."""

    def __init__(self, channels=(1, 8, 8, 1), kernel_size=3, slope=0.1, rng=None,
                 zero_last=True):
        if channels[0] != 1 or channels[-1] != 1:
            raise ValueError("reconstructor maps one channel to one channel")
        rng = np.random.default_rng(rng)
        self.channels = tuple(int(c) for c in channels)
        self.kernel_size = int(kernel_size)
        self.slope = float(slope)
        k3 = self.kernel_size**3
        self.weights, self.biases = [], []
        n_layers = len(self.channels) - 1
        for layer, (ci, co) in enumerate(zip(self.channels[:-1], self.channels[1:])):
            std = np.sqrt(2.0 / (ci * k3))
            w = rng.normal(0.0, std, size=(co, ci) + (self.kernel_size,) * 3)
            if zero_last and layer == n_layers - 1:
                w[...] = 0.0
            self.weights.append(w)
            self.biases.append(np.zeros(co))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def header(self) -> dict:
        return {"channels": list(self.channels), "kernel_size": self.kernel_size,
                "slope": self.slope}

    @classmethod
    def from_header(cls, header: dict) -> "ConvReconstructor":
        return cls(tuple(header["channels"]), header["kernel_size"], header["slope"], rng=0)


def recon_forward(net: ConvReconstructor, field: Volume3D):
    """Returns ``(chi_hat, cache)``."""
    x = field.data[None]
    inputs, pre, cols = [], [], []
    h = x
    last = len(net.weights) - 1
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        c = _im2col(h, net.kernel_size)
        cols.append(c)
        z = (c @ w.reshape(w.shape[0], -1).T + b).T.reshape((w.shape[0],) + field.grid.dims)
        pre.append(z)
        h = z if layer == last else np.where(z > 0, z, net.slope * z)
    chi = field.data + h[0]
    return Volume3D(field.grid, chi), ReconCache(id(net), inputs, pre, cols)


def recon_backward(net: ConvReconstructor, cache: ReconCache, dl_dchi):
    """Returns ``(param_grads, input_grad)``; param grads follow ``net.params`` order."""
    if cache is None or cache.net_id != id(net):
        raise MissingForwardCache("recon_backward needs the cache from recon_forward")
    g_out = np.asarray(getattr(dl_dchi, "data", dl_dchi), dtype=np.float64)
    g = g_out[None]
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    last = len(net.weights) - 1
    for layer in range(last, -1, -1):
        w = net.weights[layer]
        if layer != last:
            g = np.where(cache.pre[layer] > 0, g, net.slope * g)
        g2 = g.reshape(w.shape[0], -1)
        grads_w[layer] = (g2 @ cache.cols[layer]).reshape(w.shape)
        grads_b[layer] = g2.sum(axis=1)
        g = conv3d_input_grad(g, w)
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads += [gw, gb]
    return grads, g_out + g[0]
