"""Volumetric (2.5D) MR thermometry from rotated 2D phase images."""
from .core import (
    AcquisitionParams,
    CylCoord,
    PhaseImage,
    ScalarVolume,
    SliceGeometry,
    VolumeGeometry,
    cart_to_cyl,
    cyl_to_cart,
    wrap_angle,
    wrap_phase,
)
from .evaluate import ConfusionCounts, SummaryStat, benchmark, confusion, dice, sem95, sensitivity, temperature_rmse
from .popmap import (
    HeatSinkVolume,
    OrientationSet,
    PopulationMap,
    TubeSpec,
    build_population_map,
    find_partners,
    interp_weights,
    ip_pixel,
    rasterize_tubes,
)
from .prfs import (
    PRFSThermometry,
    ReferenceSet,
    SliceThermometry,
    average_references,
    build_slice_thermometry,
    phase_difference,
    prfs_temperature,
)
from .reconstruct import (
    CoagulationMask,
    ReconstructionEngine,
    coagulation_mask,
    ingest,
    oracle_reconstruct,
    reconstruct_volume,
)
from .simulator import (
    HeatSourceModel,
    PhantomSpec,
    acquisition_schedule,
    coagulation_ground_truth,
    ground_truth_field,
    simulate_run,
    synthesize_phase_image,
)

__version__ = "0.1.0"
