import json

import numpy as np
import pytest

from thermo25d import AcquisitionParams, PhaseImage, ScalarVolume, VolumeGeometry
from thermo25d.io import FormatError, read_phase_image, read_volume, sha256_file, write_phase_image, write_volume


def test_volume_round_trip_is_x_fastest_little_endian(tmp_path):
    g = VolumeGeometry((3, 2, 2), (1.0, 1.0, 2.0))
    vals = np.arange(12, dtype=np.float32).reshape(g.shape)
    files = write_volume(tmp_path / "t.v25d", ScalarVolume(g, vals, kind="temperature"))
    assert sorted(p.name for p in files) == ["t.v25d.json", "t.v25d.raw"]
    raw = np.fromfile(tmp_path / "t.v25d.raw", dtype="<f4")
    assert raw.tolist() == list(range(12))
    header = json.loads((tmp_path / "t.v25d.json").read_text())
    assert header["dims"] == [3, 2, 2] and header["order"] == "x-fastest"
    assert header["byte_order"] == "little" and header["dtype"] == "f32"
    back = read_volume(tmp_path / "t.v25d")
    assert back.geometry == g and np.array_equal(back.values, vals)


def test_phase_image_header_keys(tmp_path):
    img = PhaseImage(np.full((4, 5), 0.25), 22.5, 12.2, AcquisitionParams(), 2)
    write_phase_image(tmp_path / "a.p25d", img)
    header = json.loads((tmp_path / "a.p25d.json").read_text())
    assert set(header) == {"rows", "cols", "center_col", "orientation_deg", "timestamp_s",
                           "te_s", "b0_t", "alpha_ppm_per_c", "gamma_rad_per_s_t"}
    back = read_phase_image(tmp_path / "a.p25d")
    assert back.orientation_deg == 22.5 and back.timestamp == 12.2 and back.center_col == 2
    assert np.array_equal(back.pixels, np.float32(0.25) * np.ones((4, 5)))


def test_truncated_payload_is_a_format_error(tmp_path):
    g = VolumeGeometry((4, 4, 1))
    write_volume(tmp_path / "v.v25d", ScalarVolume(g, np.zeros(g.shape)))
    raw = tmp_path / "v.v25d.raw"
    raw.write_bytes(raw.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_volume(tmp_path / "v.v25d")


def test_checksum_sees_single_bit_flip(tmp_path):
    p = tmp_path / "f.bin"
    p.write_bytes(b"\x00" * 64)
    before = sha256_file(p)
    p.write_bytes(b"\x00" * 63 + b"\x01")
    assert sha256_file(p) != before
