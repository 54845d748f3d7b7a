"""Shared geometry, containers and the cartesian/cylindrical mapping.

Conventions used throughout the package:

* Voxel coordinates are the working unit for radii; ``spacing`` only feeds
  file metadata and mm conversions in the simulator.
* Volumes are held as numpy arrays of shape ``(nz, ny, nx)`` so that a C-order
  flatten is x-fastest, matching the on-disk layout.
* The cylindrical angle is ``atan2(x - xc, y - yc)`` in degrees, i.e. zero along
  +y and 90 along +x.  A slice plane at orientation ``a`` therefore covers the
  half-planes ``a`` (positive column offsets) and ``a + 180`` (negative ones).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

RAD_TO_DEG = 180.0 / math.pi
TWO_PI = 2.0 * math.pi

# float32 storage can push a wrapped phase one ulp past +-pi
_PHASE_TOL = 1e-6


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class VolumeGeometry:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    centerline: tuple[float, float] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise GeometryError(f"dims must be three positive integers, got {self.dims}")
        if len(spacing) != 3 or any(not s > 0 for s in spacing):
            raise GeometryError(f"spacing must be three positive numbers, got {self.spacing}")
        nx, ny, _ = dims
        if self.centerline is None:
            center = (float(nx // 2), float(ny // 2))
        else:
            center = tuple(float(c) for c in self.centerline)
        if len(center) != 2 or not (0 <= center[0] < nx and 0 <= center[1] < ny):
            raise GeometryError(f"centerline {center} outside the x/y extent {nx}x{ny}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "centerline", center)

    @property
    def nx(self) -> int:
        return self.dims[0]

    @property
    def ny(self) -> int:
        return self.dims[1]

    @property
    def nz(self) -> int:
        return self.dims[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        """numpy array shape ``(nz, ny, nx)``."""
        return (self.nz, self.ny, self.nx)

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    def max_radius(self) -> float:
        """Largest in-plane distance from the centerline to any voxel."""
        xc, yc = self.centerline
        dx = max(xc, self.nx - 1 - xc)
        dy = max(yc, self.ny - 1 - yc)
        return math.sqrt(dx * dx + dy * dy)

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "centerline": list(self.centerline),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VolumeGeometry":
        return cls(tuple(d["dims"]), tuple(d.get("spacing", (1.0, 1.0, 1.0))), d.get("centerline"))


@dataclass(frozen=True)
class AcquisitionParams:
    """Scanner constants entering the PRFS conversion.

    ``gamma`` is the angular gyromagnetic ratio in rad/(s*T); ``alpha`` is in
    ppm per degree C and converted to a plain ratio when used.
    """

    gamma: float = TWO_PI * 42.576e6
    alpha: float = 0.01
    b0: float = 1.5
    te: float = 3.69e-3
    t0: float = 20.0

    def __post_init__(self):
        for name in ("gamma", "alpha", "b0", "te"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        if not math.isfinite(self.t0):
            raise ValueError("t0 must be finite")

    @property
    def k(self) -> float:
        """Phase change per degree C, rad/degC."""
        return self.gamma * (self.alpha * 1e-6) * self.b0 * self.te


@dataclass(frozen=True)
class SliceGeometry:
    """Pixel layout of an axis-containing slice: rows are z, columns a signed radius."""

    rows: int
    cols: int
    center_col: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or not 0 <= self.center_col < self.cols:
            raise GeometryError(f"invalid slice geometry {self}")

    @classmethod
    def covering(cls, geom: VolumeGeometry) -> "SliceGeometry":
        """Smallest symmetric slice whose radial extent reaches every voxel."""
        half = int(math.ceil(geom.max_radius())) + 1
        return cls(rows=geom.nz, cols=2 * half + 1, center_col=half)


@dataclass(frozen=True, eq=False)
class PhaseImage:
    pixels: np.ndarray
    orientation_deg: float
    timestamp: float = 0.0
    params: AcquisitionParams = field(default_factory=AcquisitionParams)
    center_col: int | None = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2:
            raise ValueError(f"phase image must be 2D, got shape {pixels.shape}")
        if not 0.0 <= self.orientation_deg < 180.0:
            raise ValueError(f"orientation {self.orientation_deg} outside [0, 180)")
        if pixels.size and (
            not np.all(np.isfinite(pixels)) or np.abs(pixels).max() > math.pi + _PHASE_TOL
        ):
            raise ValueError("phase values must lie in [-pi, pi)")
        center = pixels.shape[1] // 2 if self.center_col is None else int(self.center_col)
        if not 0 <= center < pixels.shape[1]:
            raise ValueError(f"center column {center} outside image of width {pixels.shape[1]}")
        pixels = pixels.view()
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "center_col", center)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def slice_geometry(self) -> SliceGeometry:
        return SliceGeometry(self.pixels.shape[0], self.pixels.shape[1], self.center_col)


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """Scalar field on a :class:`VolumeGeometry`; ``values`` has shape ``(nz, ny, nx)``."""

    geometry: VolumeGeometry
    values: np.ndarray
    kind: str = "temperature"

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.size != self.geometry.n_voxels:
            raise GeometryError(
                f"volume holds {values.size} values, geometry needs {self.geometry.n_voxels}"
            )
        values = values.reshape(self.geometry.shape).view()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def flat(self) -> np.ndarray:
        """Values in x-fastest order."""
        return self.values.ravel()


class CylCoord(NamedTuple):
    r: float
    theta_deg: float
    z: int


def wrap_angle(a):
    """Map degrees onto [0, 360).  Works on scalars and arrays."""
    if np.ndim(a) == 0:
        w = math.fmod(float(a), 360.0)
        if w < 0.0:
            w += 360.0
        return 0.0 if w >= 360.0 else w
    w = np.fmod(np.asarray(a, dtype=float), 360.0)
    w = np.where(w < 0.0, w + 360.0, w)
    return np.where(w >= 360.0, 0.0, w)


def angle_deg(dx: float, dy: float) -> float:
    """Cylindrical angle of an in-plane offset; 0 at the centerline by convention.

    This scalar routine is the single source of angles for both the population
    map and the reconstruction oracle so that the two agree bit for bit.
    """
    if dx == 0.0 and dy == 0.0:
        return 0.0
    t = math.atan2(dx, dy) * RAD_TO_DEG
    if t < 0.0:
        t += 360.0
    return 0.0 if t >= 360.0 else t


def cart_to_cyl(x: float, y: float, z: int, geom: VolumeGeometry) -> CylCoord:
    if not (0 <= x <= geom.nx - 1 and 0 <= y <= geom.ny - 1):
        raise GeometryError(f"({x}, {y}) outside the volume extent")
    xc, yc = geom.centerline
    dx = float(x) - xc
    dy = float(y) - yc
    return CylCoord(math.sqrt(dx * dx + dy * dy), angle_deg(dx, dy), z)


def cyl_to_cart(c: CylCoord, geom: VolumeGeometry) -> tuple[float, float, int]:
    xc, yc = geom.centerline
    t = math.radians(c.theta_deg)
    return xc + c.r * math.sin(t), yc + c.r * math.cos(t), c.z


def in_plane_polar(geom: VolumeGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Radius and angle for every (y, x) position, each shaped ``(ny, nx)``."""
    xc, yc = geom.centerline
    dx = np.arange(geom.nx, dtype=float) - xc
    dy = np.arange(geom.ny, dtype=float) - yc
    DX, DY = np.meshgrid(dx, dy)
    r = np.sqrt(DX * DX + DY * DY)
    theta = np.fromiter(
        map(angle_deg, DX.ravel().tolist(), DY.ravel().tolist()), dtype=float, count=DX.size
    ).reshape(DX.shape)
    return r, theta


def wrap_phase(phi):
    """Wrap radians onto [-pi, pi)."""
    w = np.mod(np.asarray(phi, dtype=float) + math.pi, TWO_PI) - math.pi
    w = np.where(w >= math.pi, w - TWO_PI, w)
    return w if np.ndim(phi) else float(w)
