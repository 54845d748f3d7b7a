import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermo25d import AcquisitionParams, TubeSpec, VolumeGeometry, acquisition_schedule, ground_truth_field
from thermo25d.simulator import (
    TEMP_LIMIT_C,
    HeatSourceModel,
    PhantomSpec,
    PennesLite,
    bit_reversal_order,
    coagulation_ground_truth,
    coagulation_radius_mm,
    default_phantom,
    iter_run,
    schedule_for_duration,
    simulate_run,
    slice_temperatures,
    synthesize_phase_image,
    tube_attenuation,
)

SMALL = (49, 49, 8)


def test_schedule_examples():
    assert [a for a, _ in acquisition_schedule(8)] == [0, 90, 45, 135, 22.5, 112.5, 67.5, 157.5]
    assert [a for a, _ in acquisition_schedule(2)] == [0, 90]
    times = [t for _, t in acquisition_schedule(8, 1.1, 5.0)]
    assert times == pytest.approx([6.1 * (i + 1) for i in range(8)])
    assert len(schedule_for_duration(8, 1.1, 5.0, 900.0)) == 147
    with pytest.raises(ValueError):
        bit_reversal_order(6)


def test_field_at_start_is_baseline():
    spec = default_phantom(dims=SMALL)
    assert np.all(ground_truth_field(spec, 0.0).values == spec.t0)


def test_saturated_peak_is_clamped():
    spec = default_phantom(dims=SMALL)
    xc, yc = map(int, spec.geometry.centerline)
    v = ground_truth_field(spec, 1e6).values
    assert v[4, yc, xc] == min(spec.t0 + spec.source.peak_c, TEMP_LIMIT_C)
    assert v.max() <= TEMP_LIMIT_C


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2000), st.floats(0, 2000))
def test_field_monotone_in_time(t1, t2):
    spec = default_phantom(dims=(25, 25, 4), tubes=[TubeSpec(15, 10)])
    a, b = sorted((t1, t2))
    assert np.all(ground_truth_field(spec, a).values <= ground_truth_field(spec, b).values)


def test_full_strength_tube_axis_stays_cold():
    xc, yc = 24, 24
    spec = default_phantom(dims=SMALL, tubes=[TubeSpec(xc + 6, yc)])
    for t in (10.0, 100.0, 1e4):
        assert np.all(ground_truth_field(spec, t).values[:, yc, xc + 6] == spec.t0)


@given(st.floats(0, 48), st.floats(0, 48), st.floats(0, 1))
def test_attenuation_never_heats(x, y, s):
    spec = default_phantom(dims=SMALL, tubes=[TubeSpec(20, 30, sink_strength=s)])
    a = tube_attenuation(spec, np.array(x), np.array(y))
    assert 0.0 <= float(a) <= 1.0


def test_coagulation_ground_truth_matches_closed_form_radius():
    spec = default_phantom(dims=(97, 97, 8))
    t = 600.0
    mask = coagulation_ground_truth(spec, t, 57.0)
    assert not coagulation_ground_truth(spec, t, 95.0).any()
    z = 4
    r_star = coagulation_radius_mm(spec, t, z * spec.geometry.spacing[2], 57.0)
    xc, yc = map(int, spec.geometry.centerline)
    X, Y = np.meshgrid(np.arange(97) - xc, np.arange(97) - yc)
    assert np.array_equal(mask[z], np.hypot(X, Y) <= r_star)


def test_tube_carves_the_coagulation_zone():
    plain = default_phantom(dims=SMALL)
    tubed = default_phantom(dims=SMALL, tubes=[TubeSpec(30, 24)])
    a = coagulation_ground_truth(plain, 600.0, 57.0)
    b = coagulation_ground_truth(tubed, 600.0, 57.0)
    assert b.sum() < a.sum() and not np.any(b & ~a)


def test_noise_free_image_at_start_is_zero():
    spec = default_phantom(dims=SMALL)
    img = synthesize_phase_image(spec, 0.0, 22.5)
    assert np.all(img.pixels == 0.0)


def test_symmetric_field_gives_identical_orientations():
    spec = default_phantom(dims=SMALL)
    a = synthesize_phase_image(spec, 300.0, 0.0).pixels
    b = synthesize_phase_image(spec, 300.0, 90.0).pixels
    assert np.array_equal(a, b)


def test_slice_samples_plane_through_axis():
    spec = default_phantom(dims=SMALL)
    t = 400.0
    vol = ground_truth_field(spec, t).values
    sl = slice_temperatures(spec, t, 90.0)
    c = spec.slice_geometry.center_col
    xc, yc = map(int, spec.geometry.centerline)
    assert np.allclose(sl[:, c + 5], vol[:, yc, xc + 5])
    assert np.allclose(slice_temperatures(spec, t, 0.0)[:, c + 5], vol[:, yc + 5, xc])


@pytest.mark.parametrize("dT", [-50.0, 0.0, 1.0, 37.0, 90.0, 190.0])
def test_phase_encoding_inverts_prfs(dT):
    params = AcquisitionParams()
    wrapped = math.remainder(dT * params.k, 2 * math.pi)
    assert wrapped / params.k == pytest.approx(dT, abs=1e-9)


def test_run_is_seeded_and_ordered():
    spec = default_phantom(dims=(33, 33, 4), noise_sigma_rad=0.0148, seed=3)
    sched = acquisition_schedule(8, 1.1, 5.0, 2)
    a = simulate_run(spec, sched)
    b = simulate_run(spec, sched)
    assert len(a.references) == 8 and all(len(v) == 10 for v in a.references.values())
    assert len(a.live) == 16 and a.end_time == pytest.approx(16 * 6.1)
    assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a.live, b.live))
    c = simulate_run(spec.with_seed(4), sched)
    assert not np.array_equal(a.live[0].pixels, c.live[0].pixels)
    roles = [r for r, _ in iter_run(spec, sched)]
    assert roles == ["reference"] * 80 + ["live"] * 16


def test_references_without_sweeps():
    spec = default_phantom(dims=(33, 33, 4))
    run = simulate_run(spec, [], n_orientations=4)
    assert sorted(run.references) == [0.0, 45.0, 90.0, 135.0] and run.live == []


def test_zero_noise_references_match_first_live_at_start():
    spec = default_phantom(dims=(33, 33, 4))
    run = simulate_run(spec, [(0.0, 0.0)])
    assert np.array_equal(run.references[0.0][0].pixels, run.live[0].pixels)


def test_pennes_lite_diffuses_and_respects_limits():
    spec = PhantomSpec(VolumeGeometry((25, 25, 6)), HeatSourceModel("pennes-lite", tau_s=20.0, sigma_mm=3.0),
                       tubes=(TubeSpec(16, 12),))
    solver = PennesLite(spec)
    a = ground_truth_field(spec, 30.0, solver).values
    b = ground_truth_field(spec, 60.0, solver).values
    assert np.all(b >= a - 1e-12) and b.max() <= TEMP_LIMIT_C
    assert np.all(b[:, 12, 16] == spec.t0)
    with pytest.raises(ValueError):
        solver.advance(10.0)


def test_phantom_spec_round_trip():
    spec = default_phantom(dims=SMALL, tubes=[TubeSpec(10, 11, 2.0, 0.5, 4.0)], noise_sigma_rad=0.01, seed=9)
    again = PhantomSpec.from_dict(spec.to_dict())
    assert again == spec
    with pytest.raises(ValueError):
        PhantomSpec(VolumeGeometry((8, 8, 2), (1.0, 2.0, 1.0)))
