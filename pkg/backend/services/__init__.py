"""
服务模块
"""

from .model_service import model_service, ModelService
from .fracops_service import fracops_service, FracOpsService
from .solver_service import solver_service, SolverService
from .diagnostics_service import diagnostics_service, DiagnosticsService
from .particle_service import particle_service, ParticleService
from .config_parser import config_parser, parse_config
from .snapshot_io import read_snapshot, write_snapshot, write_manifest, DiagnosticsWriter
from .run_service import run_service, RunService
from .check_suite import CheckSuite, run_check_suite

__all__ = [
    "model_service", "ModelService",
    "fracops_service", "FracOpsService",
    "solver_service", "SolverService",
    "diagnostics_service", "DiagnosticsService",
    "particle_service", "ParticleService",
    "config_parser", "parse_config",
    "read_snapshot", "write_snapshot", "write_manifest", "DiagnosticsWriter",
    "run_service", "RunService",
    "CheckSuite", "run_check_suite",
]
