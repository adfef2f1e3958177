import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qsm_inr.dipole import Z_AXIS, DipoleKernel, Orientation, dipole_kernel, forward_field
from qsm_inr.errors import GridMismatch
from qsm_inr.grid import GridSpec, Volume3D
from qsm_inr.losses import (
    HyperParams,
    WeightMask,
    loss_dc,
    loss_dipole,
    loss_fill,
    loss_inr,
    loss_qsmnet,
    loss_total,
    sum_gradients,
    weight_mask,
)
from qsm_inr.phantom import build_phantom, default_phantom_spec

G8 = GridSpec.cube(8)
ONE = GridSpec.cube(4)


def kern(values, grid=G8, orient=Z_AXIS):
    return DipoleKernel(grid, orient, values)


def rand_orients(rng, m):
    return [Orientation.from_vector(rng.normal(size=3)) for _ in range(m)]


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def sampled_fd(f, x, grad, rng, n=48, h=1e-6):
    idx = [tuple(i) for i in rng.integers(0, x.shape, size=(n, x.ndim))]
    fd = np.array([oracles.central_diff(f, x, i, h) for i in idx])
    an = np.array([grad[i] for i in idx])
    return oracles.rel_err(an, fd)


# weight mask

def test_weight_mask_values():
    d = dipole_kernel(G8, Z_AXIS)
    w = weight_mask(d, 0.15).values
    assert np.all(w[d.values == 0] == 1.0)
    vals = np.zeros(G8.dims)
    vals[1, 0, 0] = 0.15
    vals[2, 0, 0] = -0.15
    vals[3, 0, 0] = 1 / 3
    w = weight_mask(kern(vals), 0.15).values
    assert w[1, 0, 0] == pytest.approx(math.exp(-1), rel=1e-15)
    assert w[2, 0, 0] == pytest.approx(0.36788, abs=1e-5)
    assert w[3, 0, 0] == pytest.approx(7.17e-3, rel=1e-3)
    assert w[0, 0, 0] == 1.0


def test_weight_mask_matches_naive():
    d = dipole_kernel(G8, Orientation.from_vector((1, 2, 3)))
    w = weight_mask(d, 0.15).values
    assert np.max(np.abs(w - oracles.weight_naive(d.values, 0.15))) < 1e-12


def test_weight_mask_rejects_bad_tau():
    with pytest.raises(ValueError):
        weight_mask(dipole_kernel(G8, Z_AXIS), 0.0)


@given(st.lists(st.floats(0, 2 / 3), min_size=2, max_size=10, unique=True), st.floats(0.05, 1))
def test_weight_mask_strictly_decreasing(mags, tau):
    # tau >= 0.05 keeps exp(-(2/3)^2/tau^2) above the double underflow limit
    mags = sorted(mags)
    vals = np.zeros(G8.dims)
    vals.flat[: len(mags)] = mags
    w = weight_mask(kern(vals), tau).values.flat[: len(mags)]
    assert np.all(w > 0) and np.all(w <= 1)
    assert np.all(np.diff(w) <= 0)
    # strict where the float exponent still distinguishes the inputs
    exps = -(np.array(mags) ** 2) / tau**2
    assert np.all(np.diff(w)[np.diff(np.exp(exps)) != 0] < 0)


# L_INR

def test_loss_inr_zero_when_equal():
    d = dipole_kernel(G8, Z_AXIS)
    v, g = loss_inr([d], [d], weight_mask(d, 0.15))
    assert v == 0 and not g[0].any()


def test_loss_inr_scalar_case():
    w = WeightMask(ONE, np.zeros(ONE.dims))
    w.values[0, 0, 0] = 1
    dh = np.zeros(ONE.dims)
    dh[0, 0, 0] = 0.5
    v, g = loss_inr([kern(dh, ONE)], [kern(np.zeros(ONE.dims), ONE)], w)
    assert v == 0.25 and g[0][0, 0, 0] == 1.0


def test_loss_inr_naive(rng):
    orients = rand_orients(rng, 3)
    dr = [dipole_kernel(G8, o) for o in orients]
    dh = [kern(d.values + rng.normal(0, 0.1, G8.dims), orient=o) for d, o in zip(dr, orients)]
    w = weight_mask(dr[0], 0.15)
    v, _ = loss_inr(dh, dr, w)
    ref = oracles.loss_inr_naive([d.values for d in dh], [d.values for d in dr], w.values)
    assert rel(v, ref) < 1e-12


def test_loss_inr_grid_mismatch():
    d8 = dipole_kernel(G8, Z_AXIS)
    d4 = dipole_kernel(ONE, Z_AXIS)
    with pytest.raises(GridMismatch):
        loss_inr([d4], [d4], weight_mask(d8, 0.15))


# L_fill

def test_loss_fill_inactive_hinge():
    w = weight_mask(dipole_kernel(G8, Z_AXIS), 0.15)
    v, g = loss_fill([kern(np.full(G8.dims, -0.2))], w, 0.1)
    assert v == 0 and not g[0].any()


def test_loss_fill_scalar_case():
    w = WeightMask(ONE, np.zeros(ONE.dims))
    w.values[0, 0, 0] = 1
    v, g = loss_fill([kern(np.zeros(ONE.dims), ONE)], w, 0.1)
    assert v == pytest.approx(0.01, rel=1e-15)
    # subgradient at zero magnitude is zero
    assert not g[0].any()


def test_loss_fill_naive(rng):
    w = weight_mask(dipole_kernel(G8, Z_AXIS), 0.15)
    dh = [rng.normal(0, 0.1, G8.dims) for _ in range(3)]
    v, _ = loss_fill([kern(d) for d in dh], w, 0.1)
    assert rel(v, oracles.loss_fill_naive(dh, w.values, 0.1)) < 1e-12


# L_DC

def test_loss_dc_consistent_triple():
    chi, _ = build_phantom(default_phantom_spec(16))
    d = dipole_kernel(chi.grid, Z_AXIS)
    f = forward_field(chi, d)
    v, gc, gd = loss_dc(f, chi, [d], weight_mask(d, 0.15))
    assert v < 1e-18


def test_loss_dc_zero_estimate_closed_form(rng):
    f = Volume3D(G8, rng.normal(size=G8.dims))
    ds = [dipole_kernel(G8, o) for o in rand_orients(rng, 2)]
    w = weight_mask(ds[0], 0.15)
    v, _, _ = loss_dc(f, Volume3D(G8, np.zeros(G8.dims)), ds, w)
    expect = 2 * np.sum(w.values**2 * np.abs(np.fft.fftn(f.data)) ** 2)
    assert rel(v, expect) < 1e-12


def test_loss_dc_naive(rng):
    orients = rand_orients(rng, 2)
    ds = [kern(rng.normal(0, 0.3, G8.dims), orient=o) for o in orients]
    w = weight_mask(dipole_kernel(G8, orients[0]), 0.15)
    chi = rng.normal(size=G8.dims)
    f = rng.normal(size=G8.dims)
    v, _, _ = loss_dc(Volume3D(G8, f), Volume3D(G8, chi), ds, w)
    ref = oracles.loss_dc_naive([f, f], chi, [d.values for d in ds], w.values)
    assert rel(v, ref) < 1e-12
    fs = [rng.normal(size=G8.dims) for _ in ds]
    v, _, _ = loss_dc([Volume3D(G8, x) for x in fs], Volume3D(G8, chi), ds, w)
    assert rel(v, oracles.loss_dc_naive(fs, chi, [d.values for d in ds], w.values)) < 1e-12


def test_loss_dc_field_count():
    d = dipole_kernel(G8, Z_AXIS)
    z = Volume3D(G8, np.zeros(G8.dims))
    with pytest.raises(ValueError):
        loss_dc([z, z], z, [d], weight_mask(d, 0.15))
    with pytest.raises(GridMismatch):
        loss_dc(Volume3D(ONE, np.zeros(ONE.dims)), z, [d], weight_mask(d, 0.15))


# L_dipole and L_total

def test_loss_dipole_sum():
    assert loss_dipole(0, 0, 0) == 0
    assert loss_dipole(0.2, 0.05, 1.1) == pytest.approx(1.35, abs=1e-15)


def test_gradient_additivity(rng):
    d = dipole_kernel(G8, Z_AXIS)
    w = weight_mask(d, 0.15)
    dh = [kern(rng.normal(0, 0.1, G8.dims))]
    _, a = loss_inr(dh, [d], w)
    _, b = loss_fill(dh, w, 0.1)
    total = sum_gradients(a, b)
    assert np.array_equal(total[0], a[0] + b[0])


def test_loss_total():
    assert loss_total(2.5, 7.0, 0.0) == 2.5
    assert loss_total(1.0, 2.0, 0.3) == pytest.approx(1.6, abs=1e-15)
    assert loss_total(0.0, 0.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        loss_total(1.0, 1.0, -0.1)


# L_QSMnet

def test_loss_qsmnet_zero_for_label(rng):
    chi = Volume3D(G8, rng.normal(size=G8.dims))
    v, g = loss_qsmnet(chi, chi, chi, dipole_kernel(G8, Z_AXIS), HyperParams())
    assert v == 0 and not g.any()


def test_loss_qsmnet_constant_offset(rng):
    hp = HyperParams()
    lab = rng.normal(size=G8.dims)
    c = 0.37
    v, _ = loss_qsmnet(Volume3D(G8, lab + c), Volume3D(G8, lab), Volume3D(G8, lab),
                       dipole_kernel(G8, Z_AXIS), hp)
    # model and gradient terms vanish up to FFT round-off
    assert v == pytest.approx(hp.w_voxel * c * G8.size, rel=1e-10)


def test_loss_qsmnet_naive(rng):
    hp = HyperParams(w_model=0.7, w_voxel=0.3, w_grad=0.2)
    d = dipole_kernel(G8, Orientation.from_vector((1, 1, 2)))
    a, b = rng.normal(size=G8.dims), rng.normal(size=G8.dims)
    v, _ = loss_qsmnet(Volume3D(G8, a), Volume3D(G8, b), Volume3D(G8, b), d, hp)
    ref = oracles.loss_qsmnet_naive(a, b, d.values, 0.7, 0.3, 0.2)
    assert rel(v, ref) < 1e-12


def test_loss_qsmnet_grid_mismatch():
    z8 = Volume3D(G8, np.zeros(G8.dims))
    z4 = Volume3D(ONE, np.zeros(ONE.dims))
    with pytest.raises(GridMismatch):
        loss_qsmnet(z8, z4, z8, dipole_kernel(G8, Z_AXIS), HyperParams())


# properties

@given(st.integers(0, 2**32 - 1))
def test_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    orients = rand_orients(rng, 2)
    dr = [dipole_kernel(G8, o) for o in orients]
    dh = [kern(rng.normal(0, 0.2, G8.dims), orient=o) for o in orients]
    w = weight_mask(dr[0], float(rng.uniform(0.05, 0.5)))
    chi = Volume3D(G8, rng.normal(size=G8.dims))
    f = Volume3D(G8, rng.normal(size=G8.dims))
    assert loss_inr(dh, dr, w)[0] >= 0
    assert loss_fill(dh, w, 0.1)[0] >= 0
    assert loss_dc(f, chi, dh, w)[0] >= 0
    assert loss_qsmnet(chi, f, f, dr[0], HyperParams())[0] >= 0


def test_tau_concentrates_on_cone(rng):
    d = dipole_kernel(GridSpec.cube(16), Z_AXIS)
    resid = rng.normal(0, 0.1, d.values.shape)
    zero = d.values == 0
    far = np.abs(d.values) > 0.3
    shares = []
    for tau in (0.3, 0.15, 0.05):
        w2 = weight_mask(d, tau).values ** 2
        contrib = w2 * resid**2
        shares.append(contrib[zero].sum() / (contrib[zero].sum() + contrib[far].sum()))
    assert shares[0] <= shares[1] <= shares[2]
    assert shares[0] < shares[2]


# finite-difference gradient suite (>= 100 instances per loss)

def fill_instance(rng, eps=0.1, margin=1e-3):
    m = int(rng.integers(1, 4))
    mags = rng.uniform(2e-3, 0.2, size=(m,) + G8.dims)
    for _ in range(100):
        bad = np.abs(eps - mags.mean(axis=0)) < margin
        if not bad.any():
            break
        mags[:, bad] = rng.uniform(2e-3, 0.2, size=(m, int(bad.sum())))
    assert not (np.abs(eps - mags.mean(axis=0)) < margin).any()
    return list(mags * rng.choice([-1.0, 1.0], size=mags.shape))


def inr_fill_worst(n=100):
    worst = 0.0
    for seed in range(n):
        rng = np.random.default_rng(seed)
        dh = fill_instance(rng)
        orients = rand_orients(rng, len(dh))
        dr = [dipole_kernel(G8, o) for o in orients]
        w = weight_mask(dr[0], float(rng.uniform(0.05, 0.5)))

        def value(kind):
            ks = [kern(x, orient=o) for x, o in zip(dh, orients)]
            return loss_inr(ks, dr, w)[0] if kind == "inr" else loss_fill(ks, w, 0.1)[0]

        ks = [kern(x, orient=o) for x, o in zip(dh, orients)]
        for kind, grads in (("inr", loss_inr(ks, dr, w)[1]), ("fill", loss_fill(ks, w, 0.1)[1])):
            for i, x in enumerate(dh):
                worst = max(worst, sampled_fd(lambda: value(kind), x, grads[i], rng, n=24))
    return worst


def test_gradient_suite_inr_fill():
    worst = inr_fill_worst()
    assert worst < 1e-4, worst


def dc_worst(n=100):
    worst = 0.0
    for seed in range(n):
        rng = np.random.default_rng(seed)
        orients = rand_orients(rng, int(rng.integers(1, 3)))
        dh = [rng.normal(0, 0.3, G8.dims) for _ in orients]
        w = weight_mask(dipole_kernel(G8, orients[0]), 0.15)
        chi = rng.normal(size=G8.dims)
        f = Volume3D(G8, rng.normal(size=G8.dims))

        def value():
            return loss_dc(f, Volume3D(G8, chi), [kern(x, orient=o) for x, o in zip(dh, orients)], w)[0]

        _, gc, gd = loss_dc(f, Volume3D(G8, chi), [kern(x, orient=o) for x, o in zip(dh, orients)], w)
        worst = max(worst, sampled_fd(value, chi, gc, rng, n=24))
        for x, g in zip(dh, gd):
            worst = max(worst, sampled_fd(value, x, g, rng, n=24))
    return worst


def test_gradient_suite_dc():
    worst = dc_worst()
    assert worst < 1e-4, worst


def qsmnet_instance(rng, d, margin=1e-3):
    lab = rng.normal(size=G8.dims)
    for _ in range(200):
        diff = rng.normal(0, 10, G8.dims)
        model = forward_field(Volume3D(G8, diff), d).data
        resids = [diff.ravel(), model.ravel()] + [np.diff(diff, axis=a).ravel() for a in range(3)]
        if np.min(np.abs(np.concatenate(resids))) > margin:
            return lab + diff, lab
    raise AssertionError("no kink-free instance found")


def qsmnet_worst(n=100):
    worst = 0.0
    for seed in range(n):
        rng = np.random.default_rng(seed)
        d = dipole_kernel(G8, rand_orients(rng, 1)[0])
        hp = HyperParams(w_model=float(rng.uniform(0.1, 1)), w_grad=float(rng.uniform(0.1, 1)),
                         w_voxel=float(rng.uniform(0.1, 1)))
        x, lab = qsmnet_instance(rng, d)
        lv = Volume3D(G8, lab)

        def value():
            return loss_qsmnet(Volume3D(G8, x), lv, lv, d, hp)[0]

        _, g = loss_qsmnet(Volume3D(G8, x), lv, lv, d, hp)
        worst = max(worst, sampled_fd(value, x, g, rng, n=32))
    return worst


def test_gradient_suite_qsmnet():
    worst = qsmnet_worst()
    assert worst < 1e-4, worst
