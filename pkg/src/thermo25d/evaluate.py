"""Segmentation metrics, summary statistics and latency benchmarks."""
from __future__ import annotations

import logging
import math
import os
import platform
import time
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .core import ScalarVolume, VolumeGeometry
from .popmap import OrientationSet, TubeSpec, build_population_map, rasterize_tubes
from .prfs import SliceThermometry
from .reconstruct import ReconstructionEngine

logger = logging.getLogger(__name__)

Z_975 = 1.96


class MetricError(ValueError):
    pass


class DegenerateDiceWarning(UserWarning):
    pass


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class SummaryStat:
    mean: float
    sem95: float
    n: int
    sigma: float

    def __str__(self):
        return f"{self.mean:.2f}±{self.sem95:.2f}"


def _mask_array(m):
    return np.asarray(getattr(m, "mask", m), dtype=bool)


def confusion(pred, truth) -> ConfusionCounts:
    p, t = _mask_array(pred), _mask_array(truth)
    if p.shape != t.shape:
        raise MetricError(f"geometry mismatch: {p.shape} vs {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def dice(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        warnings.warn("both masks empty; Dice defined as 1.0", DegenerateDiceWarning, stacklevel=2)
        return 1.0
    return 2 * c.tp / denom


def sensitivity(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise MetricError("undefined sensitivity")
    return c.tp / (c.tp + c.fn)


def sem95(samples: Sequence[float]) -> SummaryStat:
    """Mean with a 1.96 * sigma / sqrt(n) half-width; sigma uses n - 1."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise MetricError("sem95 needs at least two samples")
    mean = float(x.mean())
    sigma = math.sqrt(float(np.sum((x - mean) ** 2)) / (n - 1))
    return SummaryStat(mean, sigma / math.sqrt(n) * Z_975, n, sigma)


def temperature_rmse(recon: ScalarVolume, truth: ScalarVolume, validity=None) -> float:
    """RMSE over valid voxels; ``validity`` is a PopulationMap, (ny, nx) or full-shape mask."""
    if recon.geometry.dims != truth.geometry.dims:
        raise MetricError("geometry mismatch")
    err = recon.values - truth.values
    if validity is not None:
        v = getattr(validity, "valid", validity)
        v = np.broadcast_to(np.asarray(v, dtype=bool), err.shape)
        err = err[v]
    if err.size == 0:
        raise MetricError("no valid voxels")
    return float(np.sqrt(np.mean(np.square(err))))


# benchmarks -----------------------------------------------------------------

@dataclass
class BenchmarkResult:
    name: str
    repetitions: int
    mean_ms: float
    sd_ms: float
    median_ms: float
    p5_ms: float
    p95_ms: float
    single_shot: bool
    n_jobs: int = 1

    def __str__(self):
        flag = " (single shot, sd undefined)" if self.single_shot else ""
        return f"{self.name}: {self.mean_ms:.2f}ms ± {self.sd_ms:.2f}ms{flag}"

    def to_dict(self) -> dict:
        return asdict(self)


def machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


def time_callable(name: str, fn: Callable[[], object], repetitions: int, n_jobs: int = 1,
                  setup: Callable[[], object] | None = None) -> BenchmarkResult:
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    times = []
    for _ in range(repetitions):
        if setup is not None:
            setup()
        t = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t) * 1e3)
    a = np.asarray(times)
    single = repetitions == 1
    return BenchmarkResult(
        name, repetitions, float(a.mean()), 0.0 if single else float(a.std(ddof=1)),
        float(np.median(a)), float(np.percentile(a, 5)), float(np.percentile(a, 95)), single, n_jobs,
    )


BENCH_OPS = ("population_map", "heat_sink_lut", "reconstruction")


def benchmark(op: str, repetitions: int = 100, geometry: VolumeGeometry | None = None,
              n_jobs: int = 1, seed: int = 0) -> BenchmarkResult:
    """Time one of :data:`BENCH_OPS` on a synthetic setup of the given geometry."""
    if op not in BENCH_OPS:
        raise ValueError(f"unknown benchmark op {op!r}; choose from {BENCH_OPS}")
    geometry = geometry or VolumeGeometry((256, 256, 64))
    xc, yc = geometry.centerline
    tubes = [TubeSpec(xc + 10, yc + 4), TubeSpec(xc - 8, yc - 12)]
    orient = OrientationSet.uniform(8)
    if op == "population_map":
        return time_callable(op, lambda: build_population_map(geometry, orient), repetitions, n_jobs)
    if op == "heat_sink_lut":
        return time_callable(op, lambda: rasterize_tubes(geometry, tubes), repetitions, n_jobs)

    engine = ReconstructionEngine(orientations=orient, n_jobs=n_jobs).fit(geometry)
    sg = engine.population_map_.slice_geometry
    rng = np.random.default_rng(seed)
    for a in orient.angles_deg:
        engine.partial_fit(SliceThermometry(20 + 60 * rng.random((sg.rows, sg.cols)), a, 0.0, sg.center_col))

    def invalidate():
        engine._cache = None

    return time_callable(op, engine.predict, repetitions, n_jobs, setup=invalidate)
