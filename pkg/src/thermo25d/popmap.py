"""Population map: the precomputed per-(x, y) look-up table driving reconstruction.

Each in-plane position stores its cylindrical coordinates, the two adjacent
half-plane samples that bracket its angle, the pixel columns to read from those
slices, the partner weights and a general weight ``i_w``.  The map is built once
and reused for every z slice and every live update.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import GeometryError, ScalarVolume, SliceGeometry, VolumeGeometry, in_plane_polar
from .io import FormatError, atomic_write_bytes, atomic_write_json

# angles closer than this (degrees) to a half-plane sample are treated as on it
ANGLE_EPS = 1e-9

HEAT_SINK_MODES = ("hard", "soft", "off")
RADIAL_SAMPLING = ("nearest", "linear")


class PartnerError(ValueError):
    pass


@dataclass(frozen=True)
class OrientationSet:
    angles_deg: tuple[float, ...]

    def __post_init__(self):
        angles = tuple(float(a) for a in self.angles_deg)
        if not angles:
            raise PartnerError("empty orientation set")
        if any(not 0.0 <= a < 180.0 for a in angles):
            raise PartnerError(f"orientations must lie in [0, 180): {angles}")
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise PartnerError(f"orientations must be strictly increasing: {angles}")
        object.__setattr__(self, "angles_deg", angles)

    @classmethod
    def uniform(cls, n: int = 8) -> "OrientationSet":
        return cls(tuple(k * 180.0 / n for k in range(n)))

    def __len__(self) -> int:
        return len(self.angles_deg)

    @property
    def half_plane_angles_deg(self) -> tuple[float, ...]:
        return self.angles_deg + tuple(a + 180.0 for a in self.angles_deg)

    def index(self, orientation_deg: float) -> int:
        try:
            return self.angles_deg.index(float(orientation_deg))
        except ValueError:
            raise PartnerError(f"orientation {orientation_deg} not in protocol") from None

    def half_plane(self, h: int) -> tuple[int, int]:
        """(orientation index, column sign) of half-plane ``h``."""
        n = len(self.angles_deg)
        return (h, 1) if h < n else (h - n, -1)


@dataclass(frozen=True)
class TubeSpec:
    """A straight tube parallel to the applicator axis.

    ``x``/``y`` locate the axis in voxel coordinates; radii are in mm.
    ``sink_strength`` is the fraction of the temperature rise removed at the wall.
    """

    x: float
    y: float
    outer_radius_mm: float = 2.5
    sink_strength: float = 1.0
    influence_radius_mm: float = 5.0

    def __post_init__(self):
        if not (self.outer_radius_mm > 0 and self.influence_radius_mm > 0):
            raise ValueError("tube radii must be positive")
        if not 0.0 <= self.sink_strength <= 1.0:
            raise ValueError("sink_strength must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "TubeSpec":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class HeatSinkVolume:
    geometry: VolumeGeometry
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool).reshape(self.geometry.shape)
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    def to_volume(self) -> ScalarVolume:
        return ScalarVolume(self.geometry, self.mask.astype(np.float32), kind="mask")

    @classmethod
    def from_volume(cls, vol: ScalarVolume) -> "HeatSinkVolume":
        return cls(vol.geometry, vol.values > 0.5)


def angular_distance(a, b):
    """Unsigned shortest distance between two angles in degrees."""
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        d = math.fmod(abs(a - b), 360.0)
        return min(d, 360.0 - d)
    d = np.fmod(np.abs(np.asarray(a) - np.asarray(b)), 360.0)
    return np.minimum(d, 360.0 - d)


def find_partners(theta_deg: float, orientations: OrientationSet) -> tuple[int, int]:
    """Half-plane indices bracketing ``theta_deg`` (left <= theta < right, cyclically)."""
    hp = orientations.half_plane_angles_deg
    m = len(hp)
    left = bisect.bisect_right(hp, theta_deg + ANGLE_EPS) - 1
    if left < 0:
        left = m - 1
    if theta_deg >= 360.0 - ANGLE_EPS:
        left = 0
    return left, (left + 1) % m


def interp_weights(theta_i: float, theta_left: float, theta_right: float) -> tuple[float, float]:
    """Linear-in-angle weights; ``w1`` belongs to the left partner and is 1 on it."""
    span = angular_distance(theta_left, theta_right)
    if span <= 0.0:
        raise PartnerError("degenerate partners")
    d = angular_distance(theta_left, theta_i)
    if d <= ANGLE_EPS:
        w1 = 1.0
    elif span - d <= ANGLE_EPS:
        w1 = 0.0
    else:
        w1 = min(max(1.0 - d / span, 0.0), 1.0)
    return w1, 1.0 - w1


def round_half_up(r):
    return math.floor(r + 0.5) if np.ndim(r) == 0 else np.floor(np.asarray(r) + 0.5)


def ip_pixel(r: float, z: int, half_plane: int, slice_geom: SliceGeometry, n_orientations: int):
    """Pixel ``(row, col)`` sampling radius ``r`` on a half-plane, or None outside the image."""
    sign = 1 if half_plane < n_orientations else -1
    col = slice_geom.center_col + sign * int(round_half_up(r))
    if not 0 <= col < slice_geom.cols:
        return None
    return (z, col)


class PopulationEntry(NamedTuple):
    r: float
    theta_deg: float
    i_w: float
    left_orientation: int
    right_orientation: int
    ip_left: tuple[int, int] | None
    ip_right: tuple[int, int] | None
    w1: float
    w2: float


class PopulationMap:
    """Per-(x, y) look-up arrays, each flattened x-fastest to length ``ny * nx``.

    Partner columns are ``-1`` when the sample falls outside the slice.  In
    ``linear`` radial sampling ``col_*_hi`` and ``frac`` describe the second
    radial tap; in ``nearest`` mode ``frac`` is all zeros.
    """

    def __init__(self, geometry, orientations, slice_geometry, radial_sampling, fields, in_fov):
        self.geometry = geometry
        self.orientations = orientations
        self.slice_geometry = slice_geometry
        self.radial_sampling = radial_sampling
        for name, arr in fields.items():
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            setattr(self, name, arr)
        in_fov = np.ascontiguousarray(in_fov)
        in_fov.flags.writeable = False
        self.in_fov = in_fov

    FIELDS = ("r", "theta", "i_w", "left", "right", "w1", "w2",
              "col_left", "col_right", "col_left_hi", "col_right_hi", "frac")

    def __len__(self) -> int:
        return self.r.size

    @property
    def valid(self) -> np.ndarray:
        """In-plane validity (``i_w > 0``) shaped ``(ny, nx)``."""
        return (self.i_w > 0).reshape(self.geometry.ny, self.geometry.nx)

    def entry(self, x: int, y: int) -> PopulationEntry:
        k = y * self.geometry.nx + x
        cl, cr = int(self.col_left[k]), int(self.col_right[k])
        return PopulationEntry(
            float(self.r[k]), float(self.theta[k]), float(self.i_w[k]),
            int(self.left[k]), int(self.right[k]),
            None if cl < 0 else (0, cl), None if cr < 0 else (0, cr),
            float(self.w1[k]), float(self.w2[k]),
        )

    def channel_volume(self, channel: str = "w1") -> ScalarVolume:
        """Broadcast one map channel over z as a weight volume."""
        plane = np.asarray(getattr(self, channel), dtype=float).reshape(self.geometry.ny, self.geometry.nx)
        vals = np.broadcast_to(plane, self.geometry.shape).copy()
        return ScalarVolume(self.geometry, vals, kind="weight")

    def validity_volume(self) -> ScalarVolume:
        return self.channel_volume("i_w")

    def equals(self, other: "PopulationMap") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in self.FIELDS
        ) and self.geometry == other.geometry and self.orientations == other.orientations


def _partner_columns(r, half_plane, n, slice_geom: SliceGeometry, radial_sampling):
    sign = np.where(half_plane < n, 1, -1)
    if radial_sampling == "nearest":
        lo = round_half_up(r).astype(np.int64)
        hi = lo
    else:
        lo = np.floor(r).astype(np.int64)
        hi = np.where(r - lo > 0.0, lo + 1, lo)
    col_lo = slice_geom.center_col + sign * lo
    col_hi = slice_geom.center_col + sign * hi
    in_fov = (col_lo >= 0) & (col_lo < slice_geom.cols) & (col_hi >= 0) & (col_hi < slice_geom.cols)
    return np.where(in_fov, col_lo, -1), np.where(in_fov, col_hi, -1), in_fov


def build_population_map(
    geom: VolumeGeometry,
    orientations: OrientationSet,
    heat_sink: HeatSinkVolume | None = None,
    slice_geometry: SliceGeometry | None = None,
    heat_sink_mode: str = "hard",
    soft_weight: float = 0.5,
    radial_sampling: str = "nearest",
) -> PopulationMap:
    """Precompute partners, weights and validity for every in-plane position."""
    if heat_sink_mode not in HEAT_SINK_MODES:
        raise ValueError(f"heat_sink_mode must be one of {HEAT_SINK_MODES}")
    if radial_sampling not in RADIAL_SAMPLING:
        raise ValueError(f"radial_sampling must be one of {RADIAL_SAMPLING}")
    if not 0.0 <= soft_weight <= 1.0:
        raise ValueError("soft_weight must lie in [0, 1]")
    slice_geometry = slice_geometry or SliceGeometry.covering(geom)
    if slice_geometry.rows != geom.nz:
        raise GeometryError(f"slice rows {slice_geometry.rows} != volume nz {geom.nz}")
    if heat_sink is not None and heat_sink.geometry.dims != geom.dims:
        raise GeometryError("heat-sink volume does not match the reconstruction geometry")

    r, theta = in_plane_polar(geom)
    r = r.ravel()
    theta = theta.ravel()
    hp = np.asarray(orientations.half_plane_angles_deg)
    m = hp.size
    n = len(orientations)

    left = np.searchsorted(hp, theta + ANGLE_EPS, side="right") - 1
    left = np.where(left < 0, m - 1, left)
    left = np.where(theta >= 360.0 - ANGLE_EPS, 0, left)
    right = (left + 1) % m

    span = angular_distance(hp[left], hp[right])
    if np.any(span <= 0.0):
        raise PartnerError("degenerate partners")
    d = angular_distance(hp[left], theta)
    w1 = np.minimum(np.maximum(1.0 - d / span, 0.0), 1.0)
    w1 = np.where(d <= ANGLE_EPS, 1.0, np.where(span - d <= ANGLE_EPS, 0.0, w1))
    w2 = 1.0 - w1

    col_left, col_left_hi, fov_l = _partner_columns(r, left, n, slice_geometry, radial_sampling)
    col_right, col_right_hi, fov_r = _partner_columns(r, right, n, slice_geometry, radial_sampling)
    frac = r - np.floor(r) if radial_sampling == "linear" else np.zeros_like(r)
    in_fov = fov_l & fov_r

    i_w = np.where(in_fov, 1.0, 0.0)
    if heat_sink is not None and heat_sink_mode != "off":
        sink = heat_sink.mask.any(axis=0).ravel()
        i_w = np.where(sink & in_fov, 0.0 if heat_sink_mode == "hard" else soft_weight, i_w)

    fields = dict(
        r=r, theta=theta, i_w=i_w, left=left.astype(np.int32), right=right.astype(np.int32),
        w1=w1, w2=w2, col_left=col_left.astype(np.int32), col_right=col_right.astype(np.int32),
        col_left_hi=col_left_hi.astype(np.int32), col_right_hi=col_right_hi.astype(np.int32), frac=frac,
    )
    return PopulationMap(geom, orientations, slice_geometry, radial_sampling, fields, in_fov)


def rasterize_tubes(geom: VolumeGeometry, tubes: Sequence[TubeSpec]) -> HeatSinkVolume:
    """Mark voxels within each tube's outer radius (in-plane distance, mm)."""
    sx, sy, _ = geom.spacing
    X, Y = np.meshgrid(np.arange(geom.nx, dtype=float), np.arange(geom.ny, dtype=float))
    plane = np.zeros((geom.ny, geom.nx), dtype=bool)
    for t in tubes:
        dist = np.sqrt(((X - t.x) * sx) ** 2 + ((Y - t.y) * sy) ** 2)
        plane |= dist <= t.outer_radius_mm + 1e-9
    return HeatSinkVolume(geom, np.broadcast_to(plane, geom.shape))


PMAP_RECORD = np.dtype([
    ("r", "<f4"), ("theta", "<f4"), ("i_w", "<f4"),
    ("left", "<i4"), ("right", "<i4"),
    ("ip_left_col", "<i4"), ("ip_right_col", "<i4"),
    ("w1", "<f4"), ("w2", "<f4"),
])


def write_population_map(stem, pmap: PopulationMap) -> list:
    """Dump the map as ``<stem>.json`` header + ``<stem>.raw`` records (x-fastest).

    Partner rows are not stored: the row of every partner pixel is the voxel's z.
    """
    stem = Path(stem)
    header_path = stem.with_name(stem.name + ".json")
    raw_path = stem.with_name(stem.name + ".raw")
    rec = np.zeros(len(pmap), dtype=PMAP_RECORD)
    rec["r"] = pmap.r
    rec["theta"] = pmap.theta
    rec["i_w"] = pmap.i_w
    rec["left"] = pmap.left
    rec["right"] = pmap.right
    rec["ip_left_col"] = pmap.col_left
    rec["ip_right_col"] = pmap.col_right
    rec["w1"] = pmap.w1
    rec["w2"] = pmap.w2
    sg = pmap.slice_geometry
    header = {
        "format": "pmap25d",
        "dims": [pmap.geometry.nx, pmap.geometry.ny],
        "spacing": list(pmap.geometry.spacing),
        "centerline": list(pmap.geometry.centerline),
        "orientations_deg": list(pmap.orientations.angles_deg),
        "half_plane_angles_deg": list(pmap.orientations.half_plane_angles_deg),
        "slice": {"rows": sg.rows, "cols": sg.cols, "center_col": sg.center_col},
        "radial_sampling": pmap.radial_sampling,
        "byte_order": "little",
        "order": "x-fastest",
        "record_size": PMAP_RECORD.itemsize,
        "fields": [[name, PMAP_RECORD[name].str] for name in PMAP_RECORD.names],
    }
    atomic_write_bytes(raw_path, rec.tobytes())
    atomic_write_json(header_path, header)
    return [header_path, raw_path]


def read_population_records(stem) -> tuple[dict, np.ndarray]:
    stem = Path(stem)
    header = json.loads(stem.with_name(stem.name + ".json").read_text())
    if header.get("format") != "pmap25d":
        raise FormatError("not a pmap25d header")
    rec = np.fromfile(stem.with_name(stem.name + ".raw"), dtype=PMAP_RECORD)
    nx, ny = header["dims"]
    if rec.size != nx * ny:
        raise FormatError(f"expected {nx * ny} records, found {rec.size}")
    return header, rec
