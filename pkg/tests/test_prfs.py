import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermo25d import (
    AcquisitionParams,
    PhaseImage,
    PRFSThermometry,
    average_references,
    build_slice_thermometry,
    phase_difference,
    prfs_temperature,
    synthesize_phase_image,
)
from thermo25d.prfs import ReferenceError
from thermo25d.simulator import default_phantom

P = AcquisitionParams()
# independent evaluation of the PRFS constant at the default scanner settings
K = 2 * math.pi * 42.576e6 * 0.01e-6 * 1.5 * 3.69e-3


def img(values, orientation=0.0, t=0.0):
    return PhaseImage(np.asarray(values, dtype=float), orientation, t, P, 0)


def test_k_matches_independent_computation():
    assert P.k == pytest.approx(K, rel=1e-12)
    assert P.k == pytest.approx(0.0148, abs=1e-4)


def test_single_reference_is_identity():
    ref = average_references([img([[0.3, -1.0]])])
    assert np.allclose(ref.mean_phase, [[0.3, -1.0]])


def test_circular_mean_across_seam():
    ref = average_references([img([[3.0]]), img([[-3.0]])])
    assert abs(abs(ref.mean_phase[0, 0]) - math.pi) < 1e-12


def test_constant_references():
    ref = average_references([img(np.full((3, 3), 0.7)) for _ in range(10)])
    assert np.allclose(ref.mean_phase, 0.7)


def test_reference_errors():
    with pytest.raises(ReferenceError, match="no references"):
        average_references([])
    with pytest.raises(ReferenceError, match="incompatible reference"):
        average_references([img([[0.0]]), img([[0.0, 0.0]])])
    ref = average_references([img([[0.0]])])
    with pytest.raises(ReferenceError, match="orientation mismatch"):
        phase_difference(img([[0.0]], orientation=90.0), ref)


@pytest.mark.parametrize("cur, ref, expected", [(-3.0, 3.0, 0.2831853), (0.5, 0.2, 0.3), (1.0, 1.0, 0.0)])
def test_phase_difference_examples(cur, ref, expected):
    d = phase_difference(img([[cur]]), average_references([img([[ref]])]))
    assert d[0, 0] == pytest.approx(expected, abs=1e-7)


def test_temperature_examples():
    assert prfs_temperature(0.0, P) == 20.0
    assert prfs_temperature(K, P) == pytest.approx(21.0)
    assert prfs_temperature(10 * K, P) == pytest.approx(30.0)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_temperature_is_affine(a, b):
    assert prfs_temperature(a + b, P) - prfs_temperature(a, P) == pytest.approx(b / K, abs=1e-9)


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_phase_difference_range(a, b):
    a, b = min(a, math.pi - 1e-9), min(b, math.pi - 1e-9)
    d = phase_difference(img([[a]]), average_references([img([[b]])]))[0, 0]
    assert -math.pi <= d < math.pi


def test_same_image_gives_t0_map():
    s = build_slice_thermometry(img(np.full((2, 2), 1.1)), average_references([img(np.full((2, 2), 1.1))]))
    assert np.allclose(s.temps, 20.0)


def test_estimator_round_trip_from_simulator():
    spec = default_phantom(dims=(33, 33, 4))
    refs = [synthesize_phase_image(spec, 0.0, a) for a in (0.0, 90.0)]
    est = PRFSThermometry().fit(refs)
    assert sorted(est.references_) == [0.0, 90.0]
    live = synthesize_phase_image(spec, 600.0, 90.0)
    (s,) = est.transform([live])
    from thermo25d.simulator import slice_temperatures
    truth = slice_temperatures(spec, 600.0, 90.0)
    # phase images are stored as float32, so allow single-precision rounding
    assert np.max(np.abs(s.temps - truth)) < 1e-3
    assert est.get_params()["te"] == 3.69e-3
    with pytest.raises(ReferenceError):
        est.transform([synthesize_phase_image(spec, 1.0, 45.0)])
