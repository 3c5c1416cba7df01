"""fmtlab: fluorescence molecular tomography workbench.

FEM diffusion forward model, sparse FISTA reconstruction, and reweighted-l1
illumination pattern design, composed into a two-step optimization loop.
"""

from .config import RunConfig, parse_config
from .fem import OpticalMedium, SystemMatrix, assemble_system
from .forward import DetectorPlane, MeasurementSet, born_measurements, build_gamma
from .illum import IlluminationPattern, PatternDesigner, reweighted_l1, split_pattern
from .jacobian import SensitivityMatrix, assemble_W
from .mesh import MeshGrid, build_grid, build_phantom_mesh, classify_nodes
from .metrics import MetricsReport, evaluate
from .pipeline import build_state, run_loop, run_round
from .recon import FistaReconstructor, fista

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "parse_config",
    "OpticalMedium", "SystemMatrix", "assemble_system",
    "DetectorPlane", "MeasurementSet", "born_measurements", "build_gamma",
    "IlluminationPattern", "PatternDesigner", "reweighted_l1", "split_pattern",
    "SensitivityMatrix", "assemble_W",
    "MeshGrid", "build_grid", "build_phantom_mesh", "classify_nodes",
    "MetricsReport", "evaluate",
    "build_state", "run_loop", "run_round",
    "FistaReconstructor", "fista",
]
