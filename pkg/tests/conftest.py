import numpy as np
import pytest

from thermo25d import ReconstructionEngine, SliceThermometry, TubeSpec, VolumeGeometry, rasterize_tubes


def random_engine(seed, dims=(64, 64, 64), n_orientations=8, heat_sink_mode="hard",
                  radial_sampling="nearest", n_jobs=1, keep=None):
    """Engine with seeded random slices; ``keep`` limits how many orientations are populated."""
    rng = np.random.default_rng(seed)
    geom = VolumeGeometry(dims)
    xc, yc = geom.centerline
    tubes = [TubeSpec(xc + rng.uniform(-15, 15), yc + rng.uniform(-15, 15), outer_radius_mm=rng.uniform(1.5, 4))]
    engine = ReconstructionEngine(orientations=n_orientations, heat_sink_mode=heat_sink_mode,
                                  radial_sampling=radial_sampling, n_jobs=n_jobs)
    engine.fit(geom, rasterize_tubes(geom, tubes))
    sg = engine.population_map_.slice_geometry
    angles = list(engine.orientations_.angles_deg)
    if keep is not None:
        angles = [angles[i] for i in sorted(rng.choice(len(angles), size=keep, replace=False))]
    for t, a in enumerate(angles):
        temps = 20.0 + 70.0 * rng.random((sg.rows, sg.cols))
        engine.partial_fit(SliceThermometry(temps, a, float(t), sg.center_col))
    return engine


@pytest.fixture
def small_geom():
    return VolumeGeometry((32, 32, 8))
