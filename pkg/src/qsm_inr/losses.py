"""Cone-weighted kernel losses and the supervised reconstruction loss.

Every function returns the scalar value together with exact gradients with
respect to the quantities that are trained. Kernel gradients are plain arrays
shaped like the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .dipole import DipoleKernel, forward_field
from .errors import GridMismatch
from .grid import GridSpec, Volume3D, check_same_grid


@dataclass(frozen=True)
class HyperParams:
    """Scalars of the cone-null loss and the total objective.

    ``lam`` weights the dipole loss in the total objective; ``w_dipole`` is an
    alias for it (the loss-weight sweep is expressed in ``w_dipole``).
    """

    tau: float = 0.15
    eps: float = 0.1
    lam: float = 1.0
    w_model: float = 0.4
    w_grad: float = 0.1
    w_voxel: float = 0.2
    t_tkd: float = 0.2
    M: int = 1
    t_cone: float = 0.2

    def __post_init__(self):
        if self.tau <= 0 or self.eps <= 0:
            raise ValueError("tau and eps must be positive")
        if min(self.lam, self.w_model, self.w_grad, self.w_voxel) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.w_model + self.w_grad + self.w_voxel + self.lam <= 0:
            raise ValueError("loss weights must not all be zero")
        if not 0 < self.t_tkd <= 1.0 / 3.0 or not 0 < self.t_cone < 1.0 / 3.0:
            raise ValueError("thresholds out of range")
        if int(self.M) < 1:
            raise ValueError("M must be >= 1")

    @property
    def w_dipole(self) -> float:
        return self.lam

    def with_weights(self, **kw) -> "HyperParams":
        if "w_dipole" in kw:
            kw["lam"] = kw.pop("w_dipole")
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class WeightMask:
    grid: GridSpec
    values: np.ndarray


def weight_mask(d_ref: DipoleKernel, tau: float) -> WeightMask:
    if tau <= 0:
        raise ValueError("tau must be positive")
    w = np.exp(-(d_ref.values**2) / tau**2)
    return WeightMask(d_ref.grid, w)


def _check_kernels(grid, kernels):
    for k in kernels:
        if k.grid != grid:
            raise GridMismatch(f"kernel grid {k.grid} does not match {grid}")


def loss_inr(d_hat, d_ref, w: WeightMask):
    """Weighted squared deviation of predicted from analytic kernels."""
    if len(d_hat) != len(d_ref):
        raise ValueError("d_hat and d_ref must have the same length")
    _check_kernels(w.grid, list(d_hat) + list(d_ref))
    w2 = w.values**2
    value = 0.0
    grads = []
    for dh, dr in zip(d_hat, d_ref):
        diff = dh.values - dr.values
        value += float(np.sum(w2 * diff * diff))
        grads.append(2.0 * w2 * diff)
    return value, grads


def loss_fill(d_hat, w: WeightMask, eps: float):
    """Hinge on the orientation-averaged magnitude; W enters once, unsquared."""
    if len(d_hat) < 1:
        raise ValueError("need at least one kernel")
    _check_kernels(w.grid, d_hat)
    m = len(d_hat)
    d_bar = sum(np.abs(dh.values) for dh in d_hat) / m
    gap = np.maximum(0.0, eps - d_bar)
    value = float(np.sum(w.values * gap * gap))
    grads = [-2.0 * w.values * gap * np.sign(dh.values) / m for dh in d_hat]
    return value, grads


def loss_dc(field, chi_hat: Volume3D, d_hat, w: WeightMask):
    """k-space data consistency between the field and each predicted kernel.

    ``field`` is either one Volume3D used against every kernel, or a list of
    per-kernel fields. Returns ``(value, grad_chi, grads_dhat)``.
    """
    fields_ = list(field) if isinstance(field, (list, tuple)) else [field] * len(d_hat)
    if len(fields_) != len(d_hat):
        raise ValueError("need one field per kernel")
    check_same_grid(chi_hat, w, *fields_)
    _check_kernels(w.grid, d_hat)
    n = chi_hat.grid.size
    w2 = w.values**2
    chi_k = np.fft.fftn(chi_hat.data)
    spectra = {}
    value = 0.0
    adj = np.zeros(chi_hat.grid.dims, dtype=np.complex128)
    grads_d = []
    for f, dh in zip(fields_, d_hat):
        key = id(f)
        if key not in spectra:
            spectra[key] = np.fft.fftn(f.data)
        resid = spectra[key] - dh.values * chi_k
        value += float(np.sum(w2 * (resid.real**2 + resid.imag**2)))
        grads_d.append(-2.0 * w2 * np.real(np.conj(chi_k) * resid))
        adj += dh.values * w2 * resid
    # adjoint of the unnormalized DFT is N * ifft
    grad_chi = -2.0 * n * np.real(np.fft.ifftn(adj))
    return value, grad_chi, grads_d


def loss_dipole(l_inr: float, l_fill: float, l_dc: float) -> float:
    return l_inr + l_fill + l_dc


def sum_gradients(*grad_lists):
    """Elementwise sum of per-kernel gradient lists."""
    return [sum(gs) for gs in zip(*grad_lists)]


def _fdiff(x, axis):
    return np.diff(x, axis=axis)


def _fdiff_adjoint(g, axis):
    pad_lo = [(0, 0)] * 3
    pad_hi = [(0, 0)] * 3
    pad_lo[axis] = (1, 0)
    pad_hi[axis] = (0, 1)
    return np.pad(g, pad_lo) - np.pad(g, pad_hi)


def loss_qsmnet(chi_hat: Volume3D, chi_label: Volume3D, field: Volume3D,
                kernel: DipoleKernel, hp: HyperParams):
    """L1 model, intensity and gradient terms against the label.

    ``field`` only fixes the grid; the model term compares dipole-convolved
    estimate and label. Returns ``(value, grad_chi)``.
    """
    check_same_grid(chi_hat, chi_label, field, kernel)
    value = 0.0
    grad = np.zeros(chi_hat.grid.dims)

    if hp.w_model:
        r = forward_field(chi_hat, kernel).data - forward_field(chi_label, kernel).data
        value += hp.w_model * float(np.sum(np.abs(r)))
        # the dipole operator is real, even and therefore self-adjoint
        grad += hp.w_model * forward_field(Volume3D(chi_hat.grid, np.sign(r)), kernel).data

    diff = chi_hat.data - chi_label.data
    if hp.w_voxel:
        value += hp.w_voxel * float(np.sum(np.abs(diff)))
        grad += hp.w_voxel * np.sign(diff)

    if hp.w_grad:
        for axis in range(3):
            r = _fdiff(diff, axis)
            value += hp.w_grad * float(np.sum(np.abs(r)))
            grad += hp.w_grad * _fdiff_adjoint(np.sign(r), axis)
    return value, grad


def loss_total(l_qsmnet: float, l_dipole: float, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return l_qsmnet + lam * l_dipole
