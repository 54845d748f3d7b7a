"""Live 2.5D reconstruction from the latest slice of every orientation."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import ScalarVolume, SliceGeometry, VolumeGeometry, cart_to_cyl
from .popmap import (
    HeatSinkVolume,
    OrientationSet,
    PartnerError,
    PopulationMap,
    build_population_map,
    find_partners,
    interp_weights,
    round_half_up,
)
from .prfs import SliceThermometry


class NoLiveDataError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CoagulationMask:
    geometry: VolumeGeometry
    mask: np.ndarray
    threshold_c: float

    def to_volume(self) -> ScalarVolume:
        return ScalarVolume(self.geometry, self.mask.astype(np.float32), kind="mask")


def _orientation_set(orientations) -> OrientationSet:
    if isinstance(orientations, OrientationSet):
        return orientations
    if isinstance(orientations, (int, np.integer)):
        return OrientationSet.uniform(int(orientations))
    return OrientationSet(tuple(sorted(orientations)))


class ReconstructionEngine(BaseEstimator):
    """Holds the population map and the newest slice per orientation.

    ``fit`` builds the map for a volume geometry (and optional heat-sink
    look-up volume), ``partial_fit`` ingests one :class:`SliceThermometry`,
    and ``predict`` returns the current thermometry volume.

    Parameters
    ----------
    orientations : int or sequence of float
        Either the number of evenly spaced orientations or the explicit angles.
    t0 : float
        Baseline temperature reported for excluded or not yet sampled voxels.
    heat_sink_mode : {"hard", "soft", "off"}
    soft_weight : float
        ``i_w`` inside the heat sink when ``heat_sink_mode="soft"``.
    radial_sampling : {"nearest", "linear"}
    n_jobs : int
        Worker threads used by ``predict``; output does not depend on it.
    """

    def __init__(self, orientations=8, t0=20.0, heat_sink_mode="hard", soft_weight=0.5,
                 radial_sampling="nearest", n_jobs=1):
        self.orientations = orientations
        self.t0 = t0
        self.heat_sink_mode = heat_sink_mode
        self.soft_weight = soft_weight
        self.radial_sampling = radial_sampling
        self.n_jobs = n_jobs

    def fit(self, geometry: VolumeGeometry, heat_sink: HeatSinkVolume | None = None,
            slice_geometry: SliceGeometry | None = None):
        self.orientations_ = _orientation_set(self.orientations)
        self.heat_sink_ = heat_sink
        self.population_map_ = build_population_map(
            geometry, self.orientations_, heat_sink, slice_geometry,
            heat_sink_mode=self.heat_sink_mode, soft_weight=self.soft_weight,
            radial_sampling=self.radial_sampling,
        )
        self.geometry_ = geometry
        sg = self.population_map_.slice_geometry
        n = len(self.orientations_)
        # one row per z: all slices side by side, plus a trailing t0 sentinel column
        self._stack = np.full((sg.rows, n * sg.cols + 1), float(self.t0))
        self.slices_: list[SliceThermometry | None] = [None] * n
        self.last_update_ = np.full(n, np.nan)
        self._cache = None
        self._prepare_indices()
        return self

    def _prepare_indices(self):
        pm = self.population_map_
        n = len(self.orientations_)
        cols = pm.slice_geometry.cols
        sentinel = n * cols

        def flat(h, col):
            o = np.where(h < n, h, h - n)
            return np.where(col >= 0, o * cols + col, sentinel).astype(np.intp)

        self._o_left = np.where(pm.left < n, pm.left, pm.left - n)
        self._o_right = np.where(pm.right < n, pm.right, pm.right - n)
        self._idx = (flat(pm.left, pm.col_left), flat(pm.right, pm.col_right),
                     flat(pm.left, pm.col_left_hi), flat(pm.right, pm.col_right_hi))

    # ingest -----------------------------------------------------------------

    def partial_fit(self, slice_: SliceThermometry):
        check_is_fitted(self, "population_map_")
        try:
            o = self.orientations_.index(slice_.orientation_deg)
        except PartnerError:
            raise PartnerError("orientation not in protocol") from None
        sg = self.population_map_.slice_geometry
        if slice_.temps.shape != (sg.rows, sg.cols) or slice_.center_col != sg.center_col:
            raise ValueError(
                f"slice shape {slice_.temps.shape} / center {slice_.center_col} does not match "
                f"the population map ({sg.rows}, {sg.cols}) / {sg.center_col}"
            )
        if not np.all(np.isfinite(slice_.temps)):
            raise ValueError("slice temperatures must be finite")
        last = self.last_update_[o]
        if not np.isnan(last) and slice_.timestamp < last:
            raise ValueError("slice is older than the stored one for this orientation")
        self.slices_[o] = slice_
        self.last_update_[o] = slice_.timestamp
        self._stack[:, o * sg.cols:(o + 1) * sg.cols] = slice_.temps
        self._cache = None
        return self

    @property
    def n_populated(self) -> int:
        return sum(s is not None for s in self.slices_)

    def ages(self, now: float | None = None) -> list[dict]:
        """Age of the data behind each orientation, in seconds (None if never seen)."""
        check_is_fitted(self, "population_map_")
        if now is None:
            seen = self.last_update_[~np.isnan(self.last_update_)]
            now = float(seen.max()) if seen.size else 0.0
        return [
            {"orientation_deg": a, "age_s": None if np.isnan(t) else float(now - t)}
            for a, t in zip(self.orientations_.angles_deg, self.last_update_)
        ]

    # reconstruction ----------------------------------------------------------

    def _effective_weights(self):
        """Per-(x, y) gather indices and weights for the current set of ingested slices.

        Invalid voxels read the t0 sentinel column with weights (1, 0), which
        yields exactly t0 without a separate masking pass.
        """
        pm = self.population_map_
        present = np.array([s is not None for s in self.slices_])
        pl = present[self._o_left]
        pr = present[self._o_right]
        both = pl & pr
        w1 = np.where(both, pm.w1, np.where(pl, 1.0, 0.0))
        w2 = np.where(both, pm.w2, np.where(pr, 1.0, 0.0))
        i_w = np.where(pl | pr, pm.i_w, 0.0)
        valid = i_w > 0.0
        sentinel = self._stack.shape[1] - 1
        il, ir, il_hi, ir_hi = (np.where(valid, idx, sentinel) for idx in self._idx)
        w1 = np.where(valid, w1, 1.0)
        w2 = np.where(valid, w2, 0.0)
        f = np.where(valid, pm.frac, 0.0)
        return il, ir, il_hi, ir_hi, w1, w2, i_w, f

    def _rows(self, z0, z1, out, gather):
        il, ir, il_hi, ir_hi, w1, w2, i_w, f = gather
        linear = self.population_map_.radial_sampling == "linear"
        g = 1.0 - f
        soft = (i_w > 0.0) & (i_w < 1.0)
        any_soft = bool(soft.any())
        t0 = float(self.t0)
        n = il.size
        tl = np.empty(n)
        tr = np.empty(n)
        tmp = np.empty(n)
        for z in range(z0, z1):
            row = self._stack[z]
            np.take(row, il, out=tl)
            np.take(row, ir, out=tr)
            if linear:
                np.multiply(g, tl, out=tl)
                np.multiply(f, np.take(row, il_hi, out=tmp), out=tmp)
                np.add(tl, tmp, out=tl)
                np.multiply(g, tr, out=tr)
                np.multiply(f, np.take(row, ir_hi, out=tmp), out=tmp)
                np.add(tr, tmp, out=tr)
            np.multiply(w1, tl, out=tl)
            np.multiply(w2, tr, out=tr)
            dst = out[z]
            np.add(tl, tr, out=dst)
            if any_soft:
                dst[soft] = t0 + i_w[soft] * (dst[soft] - t0)

    def predict(self, X=None) -> ScalarVolume:
        """Current thermometry volume; cached until the next ingest."""
        check_is_fitted(self, "population_map_")
        if self._cache is not None:
            return self._cache
        if self.n_populated == 0:
            raise NoLiveDataError("no live data")
        geom = self.geometry_
        gather = self._effective_weights()
        out = np.empty((geom.nz, geom.ny * geom.nx))
        n_jobs = max(1, int(self.n_jobs))
        bounds = np.linspace(0, geom.nz, min(n_jobs, geom.nz) + 1).astype(int)
        chunks = list(zip(bounds[:-1], bounds[1:]))
        if len(chunks) == 1:
            self._rows(0, geom.nz, out, gather)
        else:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                list(pool.map(lambda c: self._rows(c[0], c[1], out, gather), chunks))
        self._cache = ScalarVolume(geom, out.reshape(geom.shape), kind="temperature")
        return self._cache

    def oracle_predict(self) -> ScalarVolume:
        return oracle_reconstruct(self)


def ingest(engine: ReconstructionEngine, slice_: SliceThermometry) -> ReconstructionEngine:
    return engine.partial_fit(slice_)


def reconstruct_volume(engine: ReconstructionEngine) -> ScalarVolume:
    return engine.predict()


def oracle_reconstruct(engine: ReconstructionEngine) -> ScalarVolume:
    """Same contract as :func:`reconstruct_volume`, recomputed voxel column by column.

    Uses neither the population map nor the stacked slice buffer: geometry,
    partners, weights and pixel columns are derived afresh from the engine's
    configuration and its stored slices.
    """
    check_is_fitted(engine, "population_map_")
    slices = engine.slices_
    if all(s is None for s in slices):
        raise NoLiveDataError("no live data")
    geom = engine.geometry_
    orient = engine.orientations_
    n = len(orient)
    hp = orient.half_plane_angles_deg
    sg = engine.population_map_.slice_geometry
    t0 = float(engine.t0)
    linear = engine.radial_sampling == "linear"
    sink = None
    if engine.heat_sink_ is not None and engine.heat_sink_mode != "off":
        sink = engine.heat_sink_.mask.any(axis=0)
    out = np.empty(geom.shape)

    def columns(r, h):
        sign = 1 if h < n else -1
        if linear:
            lo = math.floor(r)
            hi = lo + 1 if r - lo > 0.0 else lo
        else:
            lo = hi = int(round_half_up(r))
        c_lo, c_hi = sg.center_col + sign * lo, sg.center_col + sign * hi
        if 0 <= c_lo < sg.cols and 0 <= c_hi < sg.cols:
            return c_lo, c_hi
        return None

    def sample(h, cols, frac):
        temps = slices[h if h < n else h - n].temps
        if not linear:
            return temps[:, cols[0]]
        return (1.0 - frac) * temps[:, cols[0]] + frac * temps[:, cols[1]]

    for y in range(geom.ny):
        for x in range(geom.nx):
            c = cart_to_cyl(x, y, 0, geom)
            left, right = find_partners(c.theta_deg, orient)
            w1, w2 = interp_weights(c.theta_deg, hp[left], hp[right])
            cols_l, cols_r = columns(c.r, left), columns(c.r, right)
            i_w = 1.0 if cols_l is not None and cols_r is not None else 0.0
            if i_w and sink is not None and sink[y, x]:
                i_w = 0.0 if engine.heat_sink_mode == "hard" else float(engine.soft_weight)
            have_l = slices[left if left < n else left - n] is not None
            have_r = slices[right if right < n else right - n] is not None
            if i_w == 0.0 or not (have_l or have_r):
                out[:, y, x] = t0
                continue
            frac = c.r - math.floor(c.r)
            if have_l and have_r:
                val = w1 * sample(left, cols_l, frac) + w2 * sample(right, cols_r, frac)
            else:
                # the missing partner carries zero weight
                val = 1.0 * sample(left if have_l else right, cols_l if have_l else cols_r, frac) + 0.0
            if i_w != 1.0:
                val = t0 + i_w * (val - t0)
            out[:, y, x] = val
    return ScalarVolume(geom, out, kind="temperature")


def coagulation_mask(volume: ScalarVolume, threshold_c: float, validity=None) -> CoagulationMask:
    """Voxels at or above ``threshold_c``; ``validity`` is a PopulationMap or (ny, nx) mask."""
    if not math.isfinite(threshold_c):
        raise ValueError("threshold must be finite")
    mask = volume.values >= threshold_c
    if validity is not None:
        if isinstance(validity, PopulationMap):
            validity = validity.valid
        mask = mask & np.broadcast_to(np.asarray(validity, dtype=bool), mask.shape[-2:])
    return CoagulationMask(volume.geometry, mask, float(threshold_c))


def replay(engine: ReconstructionEngine, slices: Sequence[SliceThermometry], callback=None):
    """Ingest slices in timestamp order, optionally reconstructing after each one."""
    for s in sorted(slices, key=lambda s: s.timestamp):
        engine.partial_fit(s)
        if callback is not None:
            callback(s, engine.predict())
    return engine
