"""Readers and writers for the ``v25d`` volume and ``p25d`` phase-image formats.

Both formats are a JSON header ``<stem>.json`` next to a raw payload
``<stem>.raw`` of little-endian float32.  Volumes are stored x-fastest, phase
images row-major (rows are z).  All writes go through a temporary file and a
rename so readers never see a half-written file.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import AcquisitionParams, PhaseImage, ScalarVolume, VolumeGeometry

F32 = np.dtype("<f4")
VOLUME_KINDS = ("temperature", "mask", "weight")


class FormatError(ValueError):
    pass


def _paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".raw")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_header(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read header {path}: {exc}") from exc


def _read_payload(path: Path, count: int) -> np.ndarray:
    try:
        data = np.fromfile(path, dtype=F32)
    except OSError as exc:
        raise FormatError(f"cannot read payload {path}: {exc}") from exc
    if data.size != count:
        raise FormatError(f"{path}: expected {count} float32 values, found {data.size}")
    return data


def write_volume(stem, volume: ScalarVolume) -> list[Path]:
    """Write ``volume`` as ``<stem>.json`` + ``<stem>.raw``; returns both paths."""
    if volume.kind not in VOLUME_KINDS:
        raise FormatError(f"unknown volume kind {volume.kind!r}")
    header_path, raw_path = _paths(stem)
    g = volume.geometry
    header = {
        "dims": list(g.dims),
        "spacing": list(g.spacing),
        "centerline": list(g.centerline),
        "dtype": "f32",
        "byte_order": "little",
        "order": "x-fastest",
        "kind": volume.kind,
    }
    atomic_write_bytes(raw_path, np.ascontiguousarray(volume.values, dtype=F32).tobytes())
    atomic_write_json(header_path, header)
    return [header_path, raw_path]


def read_volume(stem) -> ScalarVolume:
    header_path, raw_path = _paths(stem)
    h = _read_header(header_path)
    if h.get("dtype") != "f32" or h.get("byte_order") != "little" or h.get("order") != "x-fastest":
        raise FormatError(f"{header_path}: unsupported encoding")
    try:
        geom = VolumeGeometry(tuple(h["dims"]), tuple(h["spacing"]), tuple(h["centerline"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{header_path}: bad geometry: {exc}") from exc
    values = _read_payload(raw_path, geom.n_voxels).reshape(geom.shape)
    return ScalarVolume(geom, values, kind=h.get("kind", "temperature"))


def write_phase_image(stem, image: PhaseImage) -> list[Path]:
    header_path, raw_path = _paths(stem)
    rows, cols = image.shape
    p = image.params
    header = {
        "rows": rows,
        "cols": cols,
        "center_col": image.center_col,
        "orientation_deg": image.orientation_deg,
        "timestamp_s": image.timestamp,
        "te_s": p.te,
        "b0_t": p.b0,
        "alpha_ppm_per_c": p.alpha,
        "gamma_rad_per_s_t": p.gamma,
    }
    atomic_write_bytes(raw_path, np.ascontiguousarray(image.pixels, dtype=F32).tobytes())
    atomic_write_json(header_path, header)
    return [header_path, raw_path]


def read_phase_image(stem, t0: float = 20.0) -> PhaseImage:
    """Read a p25d image.  ``t0`` is not part of the format and is supplied by the caller."""
    header_path, raw_path = _paths(stem)
    h = _read_header(header_path)
    try:
        rows, cols = int(h["rows"]), int(h["cols"])
        params = AcquisitionParams(
            gamma=h["gamma_rad_per_s_t"], alpha=h["alpha_ppm_per_c"], b0=h["b0_t"], te=h["te_s"], t0=t0
        )
        pixels = _read_payload(raw_path, rows * cols).reshape(rows, cols)
        return PhaseImage(pixels, float(h["orientation_deg"]), float(h["timestamp_s"]), params, int(h["center_col"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{header_path}: missing field {exc}") from exc
