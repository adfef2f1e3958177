"""Slow, independent reference implementations used as test oracles.

Nothing here calls into the package's numerical code paths; loops and explicit
DFT matrices stand in for vectorized numpy and np.fft.
"""

import math

import numpy as np


def dft_matrix(n):
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n)


def dft3(a):
    """Unnormalized forward DFT via explicit matrices."""
    out = a.astype(complex)
    for axis, n in enumerate(a.shape):
        out = np.moveaxis(np.tensordot(dft_matrix(n), np.moveaxis(out, axis, 0), axes=(1, 0)), 0, axis)
    return out


def idft3(s):
    out = s.astype(complex)
    for axis, n in enumerate(s.shape):
        m = np.conj(dft_matrix(n)) / n
        out = np.moveaxis(np.tensordot(m, np.moveaxis(out, axis, 0), axes=(1, 0)), 0, axis)
    return out


def freq(n, v):
    """DFT-ordered frequencies built by enumeration."""
    return [(i if i < (n + 1) // 2 else i - n) / (n * v) for i in range(n)]


def dipole_naive(dims, voxel, b):
    """Direct evaluation of 1/3 - (k.b)^2/|k|^2 voxel by voxel (no Nyquist handling)."""
    fx, fy, fz = (freq(n, v) for n, v in zip(dims, voxel))
    out = np.zeros(dims)
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                kx, ky, kz = fx[i], fy[j], fz[k]
                k2 = kx * kx + ky * ky + kz * kz
                if k2 == 0:
                    continue
                kb = kx * b[0] + ky * b[1] + kz * b[2]
                out[i, j, k] = 1.0 / 3.0 - kb * kb / k2
    return out


def siren_naive(weights, biases, omega0, rows):
    out = []
    for row in rows:
        h = [float(v) for v in row]
        for layer, (w, b) in enumerate(zip(weights, biases)):
            z = []
            for o in range(w.shape[0]):
                acc = float(b[o])
                for i in range(w.shape[1]):
                    acc += float(w[o, i]) * h[i]
                z.append(acc)
            h = z if layer == len(weights) - 1 else [math.sin(omega0 * v) for v in z]
        out.append(h[0])
    return np.array(out)


def weight_naive(d_ref, tau):
    out = np.zeros_like(d_ref)
    for idx in np.ndindex(d_ref.shape):
        out[idx] = math.exp(-d_ref[idx] ** 2 / tau**2)
    return out


def loss_inr_naive(d_hat, d_ref, w):
    total = 0.0
    for dh, dr in zip(d_hat, d_ref):
        for idx in np.ndindex(w.shape):
            total += (w[idx] * (dh[idx] - dr[idx])) ** 2
    return total


def loss_fill_naive(d_hat, w, eps):
    m = len(d_hat)
    total = 0.0
    for idx in np.ndindex(w.shape):
        mean = sum(abs(d[idx]) for d in d_hat) / m
        total += w[idx] * max(0.0, eps - mean) ** 2
    return total


def loss_dc_naive(fields, chi_hat, d_hat, w):
    fc = dft3(chi_hat)
    total = 0.0
    for f, d in zip(fields, d_hat):
        fb = dft3(f)
        for idx in np.ndindex(w.shape):
            r = fb[idx] - d[idx] * fc[idx]
            total += w[idx] ** 2 * (r.real**2 + r.imag**2)
    return total


def forward_naive(chi, d):
    return idft3(dft3(chi) * d).real


def loss_qsmnet_naive(chi_hat, chi_label, d, w_model, w_voxel, w_grad):
    fm = forward_naive(chi_hat, d) - forward_naive(chi_label, d)
    model = sum(abs(v) for v in fm.ravel())
    voxel = sum(abs(a - b) for a, b in zip(chi_hat.ravel(), chi_label.ravel()))
    grad = 0.0
    nx, ny, nz = chi_hat.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for di, dj, dk in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
                    ii, jj, kk = i + di, j + dj, k + dk
                    if ii < nx and jj < ny and kk < nz:
                        ga = chi_hat[ii, jj, kk] - chi_hat[i, j, k]
                        gb = chi_label[ii, jj, kk] - chi_label[i, j, k]
                        grad += abs(ga - gb)
    return w_model * model + w_voxel * voxel + w_grad * grad


def conv_naive(x, w, b):
    """Zero-padded 'same' 3D cross-correlation with explicit loops."""
    c_out, c_in, k, _, _ = w.shape
    _, nx, ny, nz = x.shape
    p = k // 2
    out = np.zeros((c_out, nx, ny, nz))
    for o in range(c_out):
        for i in range(nx):
            for j in range(ny):
                for l in range(nz):
                    acc = b[o]
                    for c in range(c_in):
                        for a in range(k):
                            for bb in range(k):
                                for cc in range(k):
                                    ii, jj, ll = i + a - p, j + bb - p, l + cc - p
                                    if 0 <= ii < nx and 0 <= jj < ny and 0 <= ll < nz:
                                        acc += w[o, c, a, bb, cc] * x[c, ii, jj, ll]
                    out[o, i, j, l] = acc
    return out


def recon_naive(weights, biases, slope, field):
    h = field[None]
    for layer, (w, b) in enumerate(zip(weights, biases)):
        z = conv_naive(h, w, b)
        h = z if layer == len(weights) - 1 else np.where(z > 0, z, slope * z)
    return field + h[0]


def nrmse_naive(x, ref, mask):
    num = den = 0.0
    for idx in zip(*np.nonzero(mask)):
        num += (x[idx] - ref[idx]) ** 2
        den += ref[idx] ** 2
    return math.sqrt(num) / math.sqrt(den)


def psnr_naive(x, ref, mask):
    vals = [(x[idx], ref[idx]) for idx in zip(*np.nonzero(mask))]
    mse = sum((a - b) ** 2 for a, b in vals) / len(vals)
    peak = max(b for _, b in vals) - min(b for _, b in vals)
    return 10.0 * math.log10(peak * peak / mse)


def gauss1d(sigma, radius):
    g = [math.exp(-(i * i) / (2 * sigma * sigma)) for i in range(-radius, radius + 1)]
    s = sum(g)
    return [v / s for v in g]


def ssim_naive(x, ref, mask, sigma=1.5, radius=5, k1=0.01, k2=0.03):
    """Mean local SSIM over mask voxels at least ``radius`` from the volume edge."""
    g = gauss1d(sigma, radius)
    r = ref[mask.astype(bool)]
    rng = r.max() - r.min()
    c1, c2 = (k1 * rng) ** 2, (k2 * rng) ** 2
    shape = x.shape
    vals = []
    for idx in zip(*np.nonzero(mask)):
        if any(i < radius or i >= n - radius for i, n in zip(idx, shape)):
            continue
        mx = mr = sxx = srr = sxr = 0.0
        for a in range(-radius, radius + 1):
            for b in range(-radius, radius + 1):
                for c in range(-radius, radius + 1):
                    wt = g[a + radius] * g[b + radius] * g[c + radius]
                    p = (idx[0] + a, idx[1] + b, idx[2] + c)
                    xv, rv = x[p], ref[p]
                    mx += wt * xv
                    mr += wt * rv
                    sxx += wt * xv * xv
                    srr += wt * rv * rv
                    sxr += wt * xv * rv
        vx, vr, cov = sxx - mx * mx, srr - mr * mr, sxr - mx * mr
        vals.append((2 * mx * mr + c1) * (2 * cov + c2) / ((mx * mx + mr * mr + c1) * (vx + vr + c2)))
    return sum(vals) / len(vals)


def log_kernel_naive(size=15, sigma=1.5):
    half = size // 2
    g = np.zeros((size,) * 3)
    for idx in np.ndindex(g.shape):
        r2 = sum((i - half) ** 2 for i in idx)
        g[idx] = math.exp(-r2 / (2 * sigma * sigma))
    g /= g.sum()
    k = np.zeros_like(g)
    for idx in np.ndindex(g.shape):
        r2 = sum((i - half) ** 2 for i in idx)
        k[idx] = g[idx] * (r2 - 3 * sigma * sigma) / sigma**4
    return k - k.mean()


def hfen_naive(x, ref, mask, size=15, sigma=1.5):
    k = log_kernel_naive(size, sigma)
    half = size // 2
    shape = x.shape
    num = den = 0.0
    for idx in zip(*np.nonzero(mask)):
        if any(i < half or i >= n - half for i, n in zip(idx, shape)):
            continue
        sl = tuple(slice(i - half, i + half + 1) for i in idx)
        # convolution flips the kernel; the LoG kernel is symmetric
        lx = float(np.sum(k[::-1, ::-1, ::-1] * x[sl]))
        lr = float(np.sum(k[::-1, ::-1, ::-1] * ref[sl]))
        num += (lx - lr) ** 2
        den += lr**2
    return math.sqrt(num) / math.sqrt(den)


def rel_err(analytic, numeric):
    """Largest absolute deviation scaled by the largest reference magnitude."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.max(np.abs(numeric))
    if scale == 0:
        return float(np.max(np.abs(analytic)))
    return float(np.max(np.abs(analytic - numeric)) / scale)


def central_diff(f, x, idx, h=1e-6):
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


def dipole_naive_mirrored(dims, voxel, b):
    """Mean of the direct formula at each bin and at the bin holding its negative frequency."""
    plain = dipole_naive(dims, voxel, b)
    out = np.zeros(dims)
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                m = ((-i) % dims[0], (-j) % dims[1], (-k) % dims[2])
                out[i, j, k] = 0.5 * (plain[i, j, k] + plain[m])
    return out
