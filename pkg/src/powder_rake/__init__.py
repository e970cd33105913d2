"""Cohesive metal-powder DEM: adhesive contact laws, a velocity-Verlet
integrator, blade/roller spreading and funnel angle-of-repose scenes, and
powder-layer quality metrics."""

__version__ = "0.1.0"

from .core import (Box, Cylinder, MaterialParams, ParticleSet, SimConfig, SizeDistribution,
                   estimate_stiffness, generate_pile, max_stable_dt, read_snapshot_csv,
                   write_snapshot_csv, write_snapshot_vtk)
from .errors import (CalibrationError, CapacityError, ConfigError, InstabilityError,
                     MeasurementError, PowderRakeError)
from .integrator import Simulation
from .metrics import LayerMetrics, Region, layer_metrics
from .scenarios import (FunnelScene, SpreadScene, build_reservoir, calibrate_gamma,
                        run_spreading, run_static_aor)
from .walls import AxisymmetricWall, Plane, ToolKinematics

__all__ = [
    "AxisymmetricWall", "Box", "CalibrationError", "CapacityError", "ConfigError", "Cylinder",
    "FunnelScene", "InstabilityError", "LayerMetrics", "MaterialParams", "MeasurementError",
    "ParticleSet", "Plane", "PowderRakeError", "Region", "SimConfig", "Simulation",
    "SizeDistribution", "SpreadScene", "ToolKinematics", "build_reservoir", "calibrate_gamma",
    "estimate_stiffness", "generate_pile", "layer_metrics", "max_stable_dt",
    "read_snapshot_csv", "run_spreading", "run_static_aor", "write_snapshot_csv",
    "write_snapshot_vtk",
]
