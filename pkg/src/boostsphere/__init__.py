"""Bijective sphere registration with two stereographic charts and LSQC maps."""

from .boost import (
    BoostState,
    Problem,
    RegistrationResult,
    StandardSphere,
    StopConfig,
    build_standard_sphere,
    extract_map,
    glue,
    optimize,
    step,
    total_loss,
)
from .charts import SbdPair, check_sbd_compatibility, transform_bc
from .diffmap import ChartParams, forward, vjp
from .estimator import SphereRegistration
from .losses import LossWeights
from .lsqc import assemble, bc_from_map, lsqc_map, solve
from .mesh import TriMesh, disk_mesh, icosphere, load_mesh, save_mesh
from .task import LandmarkSpec, TaskContext

__version__ = "0.1.0"

__all__ = [
    "BoostState", "ChartParams", "LandmarkSpec", "LossWeights", "Problem", "RegistrationResult",
    "SbdPair", "SphereRegistration", "StandardSphere", "StopConfig", "TaskContext", "TriMesh",
    "assemble", "bc_from_map", "build_standard_sphere", "check_sbd_compatibility", "disk_mesh",
    "extract_map", "forward", "glue", "icosphere", "load_mesh", "lsqc_map", "optimize", "save_mesh",
    "solve", "step", "total_loss", "transform_bc", "vjp",
]
