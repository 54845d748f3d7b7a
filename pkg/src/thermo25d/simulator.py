"""Synthetic phantoms: ground-truth heat fields and the rotated phase-image stream.

Two heat-source models are available:

``radial-gaussian``
    ``dT = peak * (1 - exp(-t / tau)) * exp(-r^2 / 2 sigma^2) * axial(z)``.
    Closed-form, so coagulation masks have exact level sets.
``pennes-lite``
    The same Gaussian deposition profile applied as a constant-rate source
    (``peak / tau`` per second) with explicit finite-difference diffusion and
    Dirichlet boundaries.  Qualitatively realistic, no closed form.

Tubes attenuate the temperature rise by ``1 - strength * falloff(d)`` where the
falloff is 1 inside the tube and ramps linearly to 0 at the influence radius;
every temperature is finally clamped to :data:`TEMP_LIMIT_C`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .core import (
    AcquisitionParams,
    PhaseImage,
    ScalarVolume,
    SliceGeometry,
    VolumeGeometry,
    wrap_phase,
)
from .popmap import TubeSpec

TEMP_LIMIT_C = 90.0
REFERENCES_PER_ORIENTATION = 10
# heat removal rate (1/s) of a partial-strength sink in the diffusion model
SINK_RATE_PER_S = 0.5
SOURCE_KINDS = ("radial-gaussian", "pennes-lite")


@dataclass(frozen=True)
class HeatSourceModel:
    kind: str = "radial-gaussian"
    peak_c: float = 80.0
    sigma_mm: float = 12.0
    z_lo_mm: float | None = None
    z_hi_mm: float | None = None
    tau_s: float = 120.0
    diffusivity_mm2_s: float = 0.14

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown heat source kind {self.kind!r}")
        if self.peak_c < 0 or not self.sigma_mm > 0 or not self.tau_s > 0:
            raise ValueError("peak_c must be >= 0, sigma_mm and tau_s > 0")
        if self.diffusivity_mm2_s < 0:
            raise ValueError("diffusivity must be >= 0")


@dataclass(frozen=True)
class PhantomSpec:
    geometry: VolumeGeometry
    source: HeatSourceModel = field(default_factory=HeatSourceModel)
    tubes: tuple[TubeSpec, ...] = ()
    noise_sigma_rad: float = 0.0
    t0: float = 20.0
    seed: int = 0
    background_phase_rad: float = 0.0
    slice_geometry: SliceGeometry | None = None

    def __post_init__(self):
        if self.noise_sigma_rad < 0:
            raise ValueError("noise_sigma_rad must be >= 0")
        sx, sy, _ = self.geometry.spacing
        if sx != sy:
            raise ValueError("anisotropic in-plane spacing is not supported")
        object.__setattr__(self, "tubes", tuple(self.tubes))
        if self.slice_geometry is None:
            object.__setattr__(self, "slice_geometry", SliceGeometry.covering(self.geometry))
        elif self.slice_geometry.rows != self.geometry.nz:
            raise ValueError("slice rows must equal the volume depth")

    def to_dict(self) -> dict:
        sg = self.slice_geometry
        return {
            "geometry": self.geometry.to_dict(),
            "source": asdict(self.source),
            "tubes": [asdict(t) for t in self.tubes],
            "noise_sigma_rad": self.noise_sigma_rad,
            "t0": self.t0,
            "seed": self.seed,
            "background_phase_rad": self.background_phase_rad,
            "slice": {"cols": sg.cols, "center_col": sg.center_col},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        geom = VolumeGeometry.from_dict(d["geometry"])
        sl = d.get("slice")
        sg = None if sl is None else SliceGeometry(geom.nz, int(sl["cols"]), int(sl["center_col"]))
        return cls(
            geometry=geom,
            source=HeatSourceModel(**d.get("source", {})),
            tubes=tuple(TubeSpec.from_dict(t) for t in d.get("tubes", ())),
            noise_sigma_rad=float(d.get("noise_sigma_rad", 0.0)),
            t0=float(d.get("t0", 20.0)),
            seed=int(d.get("seed", 0)),
            background_phase_rad=float(d.get("background_phase_rad", 0.0)),
            slice_geometry=sg,
        )

    def with_seed(self, seed: int) -> "PhantomSpec":
        return replace(self, seed=int(seed))


def default_phantom(tubes: Sequence[TubeSpec] = (), noise_sigma_rad: float = 0.0, seed: int = 0,
                    dims=(128, 128, 32)) -> PhantomSpec:
    geom = VolumeGeometry(dims, (1.0, 1.0, 1.0))
    depth = geom.nz * geom.spacing[2]
    source = HeatSourceModel(z_lo_mm=0.25 * depth, z_hi_mm=0.75 * depth)
    return PhantomSpec(geom, source, tuple(tubes), noise_sigma_rad, seed=seed)


# field evaluation -----------------------------------------------------------

def _ramp(src: HeatSourceModel, t_s: float) -> float:
    return -math.expm1(-t_s / src.tau_s) if t_s > 0 else 0.0


def _axial(src: HeatSourceModel, z_mm):
    z_mm = np.asarray(z_mm, dtype=float)
    lo = -np.inf if src.z_lo_mm is None else src.z_lo_mm
    hi = np.inf if src.z_hi_mm is None else src.z_hi_mm
    d = np.maximum(np.maximum(lo - z_mm, z_mm - hi), 0.0)
    return np.exp(-(d * d) / (2.0 * src.sigma_mm ** 2))


def _profile(spec: PhantomSpec, x, y, z_mm):
    """Unit-peak Gaussian deposition profile at voxel coordinates (x, y) and depth z (mm)."""
    src = spec.source
    xc, yc = spec.geometry.centerline
    s = spec.geometry.spacing[0]
    r2 = ((x - xc) ** 2 + (y - yc) ** 2) * (s * s)
    return np.exp(-r2 / (2.0 * src.sigma_mm ** 2)) * _axial(src, z_mm)


def tube_attenuation(spec: PhantomSpec, x, y):
    """Multiplicative factor in [0, 1] applied to the temperature rise."""
    s = spec.geometry.spacing[0]
    att = np.ones(np.broadcast(x, y).shape)
    for t in spec.tubes:
        d = np.sqrt((x - t.x) ** 2 + (y - t.y) ** 2) * s
        span = t.influence_radius_mm - t.outer_radius_mm
        if span > 0:
            fall = np.clip((t.influence_radius_mm - d) / span, 0.0, 1.0)
        else:
            fall = np.where(d <= t.outer_radius_mm, 1.0, 0.0)
        fall = np.where(d <= t.outer_radius_mm, 1.0, fall)
        att = att * (1.0 - t.sink_strength * fall)
    return att


def _voxel_grid(geom: VolumeGeometry):
    z = np.arange(geom.nz, dtype=float)[:, None, None]
    y = np.arange(geom.ny, dtype=float)[None, :, None]
    x = np.arange(geom.nx, dtype=float)[None, None, :]
    return x, y, z


class PennesLite:
    """Explicit diffusion solver for the ``pennes-lite`` source; advances monotonically in time."""

    def __init__(self, spec: PhantomSpec):
        self.spec = spec
        geom = spec.geometry
        src = spec.source
        x, y, z = _voxel_grid(geom)
        self.source_rate = (src.peak_c / src.tau_s) * _profile(spec, x, y, z * geom.spacing[2])
        removal = 1.0 - np.broadcast_to(tube_attenuation(spec, x, y), geom.shape)
        self.removal = removal
        self.pinned = removal >= 1.0
        self.inv_h2 = [1.0 / (h * h) for h in (geom.spacing[2], geom.spacing[1], geom.spacing[0])]
        rate = src.diffusivity_mm2_s * 2.0 * sum(self.inv_h2)
        self.dt_max = 0.9 / rate if rate > 0 else math.inf
        self.t = 0.0
        self.dT = np.zeros(geom.shape)

    def _step(self, dt):
        u = self.dT
        lap = np.zeros_like(u)
        for axis, k in enumerate(self.inv_h2):
            p = np.pad(u, [(1, 1) if a == axis else (0, 0) for a in range(3)])
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(0, -2)
            hi[axis] = slice(2, None)
            lap += k * (p[tuple(lo)] + p[tuple(hi)] - 2.0 * u)
        u = u + dt * (self.spec.source.diffusivity_mm2_s * lap + self.source_rate)
        # tubes drain heat at a rate set by their strength; full removal pins the voxel to t0
        u = u * np.maximum(0.0, 1.0 - dt * SINK_RATE_PER_S * self.removal)
        u[self.pinned] = 0.0
        self.dT = u

    def advance(self, t_s: float) -> np.ndarray:
        if t_s < self.t:
            raise ValueError("PennesLite only advances forward in time")
        while self.t < t_s:
            dt = min(self.dt_max, t_s - self.t)
            self._step(dt)
            self.t = min(self.t + dt, t_s) if dt else t_s
        return self.dT


def _delta_t_points(spec: PhantomSpec, t_s: float, x, y, z_mm, solver: PennesLite | None = None):
    if spec.source.kind == "radial-gaussian":
        dT = spec.source.peak_c * _ramp(spec.source, t_s) * _profile(spec, x, y, z_mm)
        return dT * tube_attenuation(spec, x, y)
    solver = solver or PennesLite(spec)
    grid = solver.advance(t_s)
    zi = np.broadcast_to(z_mm / spec.geometry.spacing[2], np.broadcast(x, y, z_mm).shape)
    coords = np.stack([zi, np.broadcast_to(y, zi.shape), np.broadcast_to(x, zi.shape)])
    return ndimage.map_coordinates(grid, coords.reshape(3, -1), order=1, mode="nearest").reshape(zi.shape)


def _clamp(spec: PhantomSpec, dT):
    return np.minimum(spec.t0 + dT, max(TEMP_LIMIT_C, spec.t0))


def ground_truth_field(spec: PhantomSpec, t_s: float, solver: PennesLite | None = None) -> ScalarVolume:
    if t_s < 0:
        raise ValueError("t_s must be >= 0")
    geom = spec.geometry
    x, y, z = _voxel_grid(geom)
    if spec.source.kind == "radial-gaussian":
        dT = _delta_t_points(spec, t_s, x, y, z * geom.spacing[2])
    else:
        dT = (solver or PennesLite(spec)).advance(t_s)
    values = np.broadcast_to(_clamp(spec, dT), geom.shape)
    return ScalarVolume(geom, np.ascontiguousarray(values), kind="temperature")


def coagulation_ground_truth(spec: PhantomSpec, t_s: float, threshold_c: float,
                             solver: PennesLite | None = None) -> np.ndarray:
    return ground_truth_field(spec, t_s, solver).values >= threshold_c


def coagulation_radius_mm(spec: PhantomSpec, t_s: float, z_mm: float, threshold_c: float) -> float | None:
    """Closed-form radius of the coagulation disk at depth ``z_mm`` (radial-gaussian, no tubes)."""
    if spec.source.kind != "radial-gaussian":
        raise ValueError("closed form only exists for the radial-gaussian source")
    src = spec.source
    peak_eff = src.peak_c * _ramp(src, t_s) * float(_axial(src, z_mm))
    need = threshold_c - spec.t0
    if threshold_c > max(TEMP_LIMIT_C, spec.t0):
        return None
    if need <= 0:
        return math.inf
    if peak_eff < need:
        return None
    return src.sigma_mm * math.sqrt(2.0 * math.log(peak_eff / need))


# phase images ---------------------------------------------------------------

def _background_phase(spec: PhantomSpec, orientation_deg: float, shape) -> np.ndarray:
    if spec.background_phase_rad == 0.0:
        return np.zeros(shape)
    rows, cols = shape
    # smooth, deterministic per orientation
    seed = (spec.seed * 1000003 + int(round(orientation_deg * 1000))) % (2 ** 32)
    coef = np.random.default_rng(seed).normal(size=4)
    u = np.linspace(-1, 1, cols)[None, :]
    v = np.linspace(-1, 1, rows)[:, None]
    return spec.background_phase_rad * (coef[0] + coef[1] * u + coef[2] * v + coef[3] * u * v)


def slice_temperatures(spec: PhantomSpec, t_s: float, orientation_deg: float,
                       solver: PennesLite | None = None) -> np.ndarray:
    """Ground-truth temperature on the axis-containing plane at ``orientation_deg``."""
    sg = spec.slice_geometry
    geom = spec.geometry
    xc, yc = geom.centerline
    a = math.radians(orientation_deg)
    s = np.arange(sg.cols, dtype=float)[None, :] - sg.center_col
    x = xc + s * math.sin(a)
    y = yc + s * math.cos(a)
    z_mm = np.arange(sg.rows, dtype=float)[:, None] * geom.spacing[2]
    dT = _delta_t_points(spec, t_s, x, y, z_mm, solver)
    return np.broadcast_to(_clamp(spec, dT), (sg.rows, sg.cols)).copy()


def encode_phase(delta_t_c, params: AcquisitionParams) -> np.ndarray:
    """Inverse PRFS: phase offset (radians, unwrapped) produced by a temperature rise."""
    return np.asarray(delta_t_c, dtype=float) * params.k


def synthesize_phase_image(spec: PhantomSpec, t_s: float, orientation_deg: float,
                           params: AcquisitionParams | None = None, rng: np.random.Generator | None = None,
                           solver: PennesLite | None = None) -> PhaseImage:
    if not 0.0 <= orientation_deg < 180.0:
        raise ValueError("orientation must lie in [0, 180)")
    params = params or AcquisitionParams(t0=spec.t0)
    temps = slice_temperatures(spec, t_s, orientation_deg, solver)
    dphi = encode_phase(temps - spec.t0, params) + _background_phase(spec, orientation_deg, temps.shape)
    if spec.noise_sigma_rad > 0:
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        dphi = dphi + rng.normal(0.0, spec.noise_sigma_rad, size=dphi.shape)
    return PhaseImage(wrap_phase(dphi), orientation_deg, t_s, params, spec.slice_geometry.center_col)


# acquisition protocol ---------------------------------------------------------

def bit_reversal_order(n: int) -> list[int]:
    if n < 1 or n & (n - 1):
        raise ValueError(f"number of orientations must be a power of two, got {n}")
    bits = n.bit_length() - 1
    return [int(format(k, f"0{bits}b")[::-1], 2) if bits else 0 for k in range(n)]


def acquisition_schedule(n_orientations: int = 8, period_s: float = 1.1, pause_s: float = 5.0,
                         n_sweeps: int = 1) -> list[tuple[float, float]]:
    """(orientation_deg, timestamp_s) pairs; each image lands ``period + pause`` after the last."""
    if period_s < 0 or pause_s < 0:
        raise ValueError("period and pause must be >= 0")
    order = [k * 180.0 / n_orientations for k in bit_reversal_order(n_orientations)]
    step = period_s + pause_s
    return [(order[i % n_orientations], (i + 1) * step) for i in range(n_sweeps * n_orientations)]


def schedule_for_duration(n_orientations: int, period_s: float, pause_s: float,
                          duration_s: float) -> list[tuple[float, float]]:
    step = period_s + pause_s
    if step <= 0:
        raise ValueError("period + pause must be positive for a timed run")
    count = int(math.floor(duration_s / step + 1e-9))
    sweeps = -(-count // n_orientations)
    return acquisition_schedule(n_orientations, period_s, pause_s, sweeps)[:count]


@dataclass
class SimulatedRun:
    references: dict[float, list[PhaseImage]]
    live: list[PhaseImage]
    spec: PhantomSpec
    params: AcquisitionParams

    @property
    def end_time(self) -> float:
        return self.live[-1].timestamp if self.live else 0.0


def iter_run(spec: PhantomSpec, schedule: Sequence[tuple[float, float]],
             params: AcquisitionParams | None = None,
             n_references: int = REFERENCES_PER_ORIENTATION,
             reference_angles: Sequence[float] | None = None) -> Iterator[tuple[str, PhaseImage]]:
    """Yield ``("reference", image)`` for every orientation first, then ``("live", image)``."""
    params = params or AcquisitionParams(t0=spec.t0)
    rng = np.random.default_rng(spec.seed)
    solver = PennesLite(spec) if spec.source.kind == "pennes-lite" else None
    angles = {a for a, _ in schedule} | set(reference_angles or ())
    for angle in sorted(angles):
        for _ in range(n_references):
            yield "reference", synthesize_phase_image(spec, 0.0, angle, params, rng, solver)
    for angle, t in sorted(schedule, key=lambda e: e[1]):
        yield "live", synthesize_phase_image(spec, t, angle, params, rng, solver)


def simulate_run(spec: PhantomSpec, schedule: Sequence[tuple[float, float]],
                 params: AcquisitionParams | None = None, n_orientations: int | None = None,
                 n_references: int = REFERENCES_PER_ORIENTATION) -> SimulatedRun:
    """Generate references at t=0 and the scheduled live stream, deterministic in ``spec.seed``.

    ``n_orientations`` forces references for every protocol orientation even
    when ``schedule`` is empty (no live sweeps).
    """
    params = params or AcquisitionParams(t0=spec.t0)
    if n_orientations is not None and not schedule:
        angles = sorted(k * 180.0 / n_orientations for k in range(n_orientations))
        ref_sched = [(a, 0.0) for a in angles]
        refs: dict[float, list[PhaseImage]] = {}
        for kind, im in iter_run(spec, ref_sched, params, n_references):
            if kind == "reference":
                refs.setdefault(im.orientation_deg, []).append(im)
        return SimulatedRun(refs, [], spec, params)
    refs = {}
    live = []
    for kind, im in iter_run(spec, schedule, params, n_references):
        if kind == "reference":
            refs.setdefault(im.orientation_deg, []).append(im)
        else:
            live.append(im)
    return SimulatedRun(refs, live, spec, params)
