import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qsm_inr.dipole import Z_AXIS, Orientation, cone_mask, dipole_kernel, forward_field
from qsm_inr.errors import ShapeOutOfBounds
from qsm_inr.grid import GridSpec, fft_forward
from qsm_inr.phantom import (
    Box,
    Cylinder,
    NoiseSpec,
    PhantomSpec,
    Sphere,
    build_phantom,
    default_phantom_spec,
    orientation_sweep,
    synth_orientation_set,
)

G32 = GridSpec.cube(32)


def test_sphere_volume():
    chi, _ = build_phantom(PhantomSpec(G32, (Sphere((16.0, 16.0, 16.0), 8.0, 0.1),)))
    count = int(np.sum(chi.data == 0.1))
    assert abs(count - 4 / 3 * math.pi * 8**3) / (4 / 3 * math.pi * 8**3) < 0.04


def test_empty_phantom_is_background():
    chi, mask = build_phantom(PhantomSpec(G32, (), background=0.02))
    assert np.all(chi.data == 0.02) and not mask.any()


def test_overwrite_rule():
    a = Sphere((12.0, 16.0, 16.0), 6.0, 0.1)
    b = Sphere((18.0, 16.0, 16.0), 6.0, -0.05)
    chi, _ = build_phantom(PhantomSpec(G32, (a, b)))
    assert chi.data[15, 16, 16] == -0.05
    assert chi.data[8, 16, 16] == 0.1


def test_mask_is_dilated_union():
    chi, mask = build_phantom(PhantomSpec(G32, (Sphere((16.0, 16.0, 16.0), 5.0, 0.1),)))
    sup = chi.data != 0
    assert mask[sup].all()
    # two 6-connected dilation steps reach voxels at city-block distance 2
    assert mask[16, 16, 23] and not mask[16, 16, 24]


def test_shapes_must_fit():
    with pytest.raises(ShapeOutOfBounds):
        build_phantom(PhantomSpec(G32, (Sphere((2.0, 16.0, 16.0), 5.0, 0.1),)))
    with pytest.raises(ShapeOutOfBounds):
        build_phantom(PhantomSpec(G32, (Box((0.0, 0.0, 0.0), (40.0, 4.0, 4.0), 0.1),)))
    with pytest.raises(ShapeOutOfBounds):
        build_phantom(PhantomSpec(G32, (Cylinder((1, 0, 0), (16, 16, 16), 3.0, 0.1, length=40.0),)))
    with pytest.raises(ValueError):
        build_phantom(PhantomSpec(G32, (Sphere((16.0, 16.0, 16.0), 5.0, 1.5),)))


def test_infinite_cylinder_and_box():
    chi, _ = build_phantom(PhantomSpec(G32, (Cylinder((0, 0, 1), (16, 16, 16), 3.0, -0.1),)))
    assert np.all(chi.data[16, 16, :] == -0.1)
    chi, _ = build_phantom(PhantomSpec(G32, (Box((4.0, 4.0, 4.0), (6.0, 6.0, 6.0), 0.2),)))
    assert int(np.sum(chi.data == 0.2)) == 27


def test_default_phantom_is_deterministic():
    a = build_phantom(default_phantom_spec(32))
    b = build_phantom(default_phantom_spec(32))
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1], b[1])
    assert a[1].sum() == 2334


def test_noiseless_single_orientation_is_forward_field():
    chi, _ = build_phantom(default_phantom_spec(16))
    oset = synth_orientation_set(chi, [Z_AXIS])
    assert np.array_equal(oset.fields[0].data, forward_field(chi, dipole_kernel(chi.grid, Z_AXIS)).data)


def test_two_orientations_differ_only_where_kernels_differ():
    chi, _ = build_phantom(default_phantom_spec(16))
    x = Orientation((1.0, 0.0, 0.0))
    fz, fx = synth_orientation_set(chi, [Z_AXIS, x]).fields
    sz, sx = fft_forward(fz).data, fft_forward(fx).data
    dz, dx = dipole_kernel(chi.grid, Z_AXIS).values, dipole_kernel(chi.grid, x).values
    sc = fft_forward(chi).data
    same = dz == dx
    assert np.allclose(sz[same], sx[same], atol=1e-12)
    differs = ~same & (np.abs(sc) > 1e-6)
    assert np.all(np.abs(sz - sx)[differs] > 0)


def test_noise_is_deterministic_and_mean_free():
    chi, _ = build_phantom(default_phantom_spec(32))
    spec = NoiseSpec(0.01, seed=3)
    a = synth_orientation_set(chi, [Z_AXIS], spec).fields[0].data
    b = synth_orientation_set(chi, [Z_AXIS], spec).fields[0].data
    assert np.array_equal(a, b)
    noise = a - forward_field(chi, dipole_kernel(chi.grid, Z_AXIS)).data
    assert abs(noise.mean()) < 4 * 0.01 / math.sqrt(noise.size)
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)


def test_orientation_sweep_golden(golden):
    got = orientation_sweep(18, 30.0, 0)
    assert len(got) == 18 and got[0] == Z_AXIS
    for o, ref in zip(got, golden["orientation_sweep_18_30_seed0"]):
        assert np.allclose(o.b, ref, rtol=0, atol=1e-15)
    assert orientation_sweep(1, 30.0, 5) == [Z_AXIS]


@given(st.integers(1, 40), st.floats(1.0, 90.0), st.integers(0, 2**31))
def test_orientation_sweep_properties(n, cap, seed):
    out = orientation_sweep(n, cap, seed)
    assert len(out) == n
    cos_cap = math.cos(math.radians(cap))
    for o in out:
        assert abs(np.linalg.norm(o.b) - 1) < 1e-12
        assert o.b[2] >= cos_cap - 1e-12
    assert len(set(out)) == n


@given(st.tuples(*(st.floats(-1, 1),) * 3), st.tuples(*(st.floats(-1, 1),) * 3))
def test_distinct_orientations_have_distinct_cones(u, v):
    if np.linalg.norm(u) < 0.1 or np.linalg.norm(v) < 0.1:
        return
    a, b = Orientation.from_vector(u), Orientation.from_vector(v)
    if abs(np.dot(a.b, b.b)) > 1 - 1e-6:
        return
    g = GridSpec.cube(16)
    ma = cone_mask(dipole_kernel(g, a), 0.2).flags
    mb = cone_mask(dipole_kernel(g, b), 0.2).flags
    assert (ma ^ mb).any()
