import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermo25d import (
    HeatSinkVolume,
    OrientationSet,
    SliceGeometry,
    TubeSpec,
    VolumeGeometry,
    build_population_map,
    find_partners,
    interp_weights,
    ip_pixel,
    rasterize_tubes,
)
from thermo25d.popmap import PartnerError, read_population_records, write_population_map

O8 = OrientationSet.uniform(8)
HP = O8.half_plane_angles_deg


def test_half_plane_grid():
    assert HP == tuple(22.5 * k for k in range(16))


@pytest.mark.parametrize("theta, left, right", [(30, 22.5, 45), (0, 0, 22.5), (350, 337.5, 0), (45, 45, 67.5)])
def test_partner_examples(theta, left, right):
    l, r = find_partners(theta, O8)
    assert (HP[l], HP[r]) == (left, right)


def test_empty_orientation_set_rejected():
    with pytest.raises(ValueError):
        OrientationSet(())


@pytest.mark.parametrize("theta, expected", [(22.5, (1, 0)), (33.75, (0.5, 0.5)), (30.0, (2 / 3, 1 / 3))])
def test_weight_examples(theta, expected):
    assert interp_weights(theta, 22.5, 45.0) == pytest.approx(expected, abs=1e-12)


def test_degenerate_partners():
    with pytest.raises(PartnerError, match="degenerate partners"):
        interp_weights(10.0, 10.0, 10.0)


@given(st.floats(0, 360, exclude_max=True))
def test_weights_sum_to_one_and_swap(theta):
    l, r = find_partners(theta, O8)
    w1, w2 = interp_weights(theta, HP[l], HP[r])
    assert w1 + w2 == 1.0 and 0 <= w1 <= 1
    s1, s2 = interp_weights(theta, HP[r], HP[l])
    assert s1 == pytest.approx(w2, abs=1e-9) and s2 == pytest.approx(w1, abs=1e-9)


def test_ip_pixel_examples():
    sg = SliceGeometry(4, 257, 128)
    assert ip_pixel(0.0, 1, 0, sg, 8) == (1, 128)
    assert ip_pixel(0.0, 1, 9, sg, 8) == (1, 128)
    assert ip_pixel(10.4, 2, 3, sg, 8) == (2, 138)
    assert ip_pixel(10.5, 2, 11, sg, 8) == (2, 117)
    assert ip_pixel(200.0, 0, 0, SliceGeometry(4, 256, 128), 8) is None


def test_map_on_64_plane_without_sink():
    g = VolumeGeometry((64, 64, 3))
    pm = build_population_map(g, O8)
    assert np.all(pm.w1 + pm.w2 == 1.0)
    assert np.all(pm.i_w == 1.0) and pm.in_fov.all()


def test_voxel_on_45_degree_trace():
    g = VolumeGeometry((64, 64, 1))
    pm = build_population_map(g, O8)
    xc, yc = map(int, g.centerline)
    e = pm.entry(xc + 10, yc + 10)
    assert e.w1 == 1.0 and e.w2 == 0.0
    assert (HP[e.left_orientation], HP[e.right_orientation]) == (45.0, 67.5)


def test_map_is_deterministic_and_z_free():
    g = VolumeGeometry((40, 30, 5))
    a = build_population_map(g, O8)
    b = build_population_map(g, O8)
    assert a.equals(b)
    assert len(a) == g.nx * g.ny


def test_tube_voxels_excluded():
    g = VolumeGeometry((64, 64, 4))
    hs = rasterize_tubes(g, [TubeSpec(40, 20)])
    hard = build_population_map(g, O8, hs)
    assert hard.entry(40, 20).i_w == 0.0
    soft = build_population_map(g, O8, hs, heat_sink_mode="soft", soft_weight=0.3)
    assert soft.entry(40, 20).i_w == 0.3
    off = build_population_map(g, O8, hs, heat_sink_mode="off")
    assert off.entry(40, 20).i_w == 1.0


def test_disk_rasterization_by_enumeration():
    g = VolumeGeometry((32, 32, 3))
    assert not rasterize_tubes(g, []).mask.any()
    hs = rasterize_tubes(g, [TubeSpec(10, 12, outer_radius_mm=2.5)])
    expected = {(10 + dx, 12 + dy) for dx in range(-3, 4) for dy in range(-3, 4) if dx * dx + dy * dy <= 6.25}
    assert len(expected) == 21
    for z in range(3):
        ys, xs = np.nonzero(hs.mask[z])
        assert set(zip(xs.tolist(), ys.tolist())) == expected
    two = rasterize_tubes(g, [TubeSpec(10, 12), TubeSpec(22, 20)])
    union = rasterize_tubes(g, [TubeSpec(10, 12)]).mask | rasterize_tubes(g, [TubeSpec(22, 20)]).mask
    assert np.array_equal(two.mask, union)


def test_heat_sink_shape_mismatch():
    g = VolumeGeometry((16, 16, 2))
    with pytest.raises(ValueError):
        build_population_map(g, O8, HeatSinkVolume(VolumeGeometry((8, 8, 2)), np.zeros((2, 8, 8))))


def test_linear_sampling_taps():
    g = VolumeGeometry((33, 33, 1))
    pm = build_population_map(g, O8, radial_sampling="linear")
    c = pm.slice_geometry.center_col
    step = (pm.col_left_hi - pm.col_left)[pm.in_fov]
    outward = np.sign(pm.col_left - c)[pm.in_fov]
    assert np.all(np.abs(step) <= 1) and np.all(step * outward >= 0)
    assert np.all((pm.frac >= 0) & (pm.frac < 1))


def test_population_map_file(tmp_path):
    g = VolumeGeometry((20, 18, 2))
    pm = build_population_map(g, O8, rasterize_tubes(g, [TubeSpec(5, 5)]))
    write_population_map(tmp_path / "m.pmap25d", pm)
    header, rec = read_population_records(tmp_path / "m.pmap25d")
    assert header["format"] == "pmap25d" and rec.size == 20 * 18
    assert np.array_equal(rec["w1"], pm.w1.astype(np.float32))
    assert np.array_equal(rec["ip_left_col"], pm.col_left)
    assert np.array_equal(rec["left"], pm.left)


def test_w1_channel_volume():
    g = VolumeGeometry((10, 10, 3))
    vol = build_population_map(g, O8).channel_volume("w1")
    assert vol.kind == "weight" and np.array_equal(vol.values[0], vol.values[2])
