"""Report figures written to PNG files (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_KEYS = ("l_qsmnet", "l_inr", "l_fill", "l_dc", "l_total")


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_loss_curves(history, path):
    steps = np.array([r["step"] for r in history])
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in LOSS_KEYS:
        vals = np.array([r[key] for r in history], dtype=float)
        ax.semilogy(steps, np.maximum(vals, 1e-300), label=key, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    _save(fig, path)


def _mid_slices(a):
    nx, ny, nz = a.shape
    return a[:, :, nz // 2].T, a[:, ny // 2, :].T, a[nx // 2, :, :].T


def plot_slices(volumes: dict, path, vmin=None, vmax=None):
    """Central axial, coronal and sagittal slices, one row per named volume."""
    names = list(volumes)
    fig, axes = plt.subplots(len(names), 3, figsize=(7.5, 2.5 * len(names)), squeeze=False)
    if vmin is None or vmax is None:
        ref = np.asarray(volumes[names[0]])
        lim = float(np.abs(ref).max()) or 1.0
        vmin, vmax = -lim, lim
    for row, name in enumerate(names):
        for col, sl in enumerate(_mid_slices(np.asarray(volumes[name]))):
            ax = axes[row, col]
            ax.imshow(sl, cmap="gray", vmin=vmin, vmax=vmax, origin="lower")
            ax.set_xticks([])
            ax.set_yticks([])
            if col == 0:
                ax.set_ylabel(name)
    _save(fig, path)


def plot_kernel(d_ref: np.ndarray, d_hat: np.ndarray, path):
    """Analytic and predicted kernels on the central kx-kz plane (DC centered)."""
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.4))
    for ax, a, title in zip(axes, (d_ref, d_hat), ("analytic", "predicted")):
        sl = np.fft.fftshift(a)[:, a.shape[1] // 2, :].T
        im = ax.imshow(sl, cmap="RdBu_r", vmin=-2 / 3, vmax=2 / 3, origin="lower")
        ax.set_title(title)
        ax.set_xlabel("kx")
        ax.set_ylabel("kz")
    fig.colorbar(im, ax=axes, shrink=0.8)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_sweep(rows, path, label_keys=("w_model", "w_grad", "w_dipole")):
    """Bar chart of SSIM and NRMSE per weight combination."""
    labels = ["/".join(f"{r[k]:g}" for k in label_keys if k in r) for r in rows]
    x = np.arange(len(rows))
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    for ax, key in zip(axes, ("ssim", "nrmse")):
        ax.bar(x, [r[key] for r in rows], color="0.4")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel(key)
    _save(fig, path)


def plot_orientation_metrics(rows, path):
    """Metric values against the polar angle of each field orientation."""
    theta = np.degrees(np.arccos(np.clip([r["bz"] for r in rows], -1.0, 1.0)))
    fig, axes = plt.subplots(1, 4, figsize=(11, 2.8))
    for ax, key in zip(axes, ("hfen", "nrmse", "ssim", "psnr")):
        ax.plot(theta, [r[key] for r in rows], "o", ms=4, color="k")
        ax.set_xlabel("angle to z (deg)")
        ax.set_title(key)
    _save(fig, path)
