"""
数据模型包 - Pydantic 模型与数值数据类
"""

from .system import SystemSpec, SymmetrizedSystem, ValidationIssue, ValidationReport
from .field import PeriodicGrid, ScalarField, KernelKind, KernelTable
from .simulation import (
    PositivityPolicy, SchemeParams, State, StepReport, Trajectory,
    EntropyReport, ResidualSeries, flatten_report
)
from .particle import LevyConvention, ParticleEnsemble, PotentialSpec
from .run_config import (
    InitialProfile, InitialCondition, ParticleSettings, OutputSettings,
    RunConfig, SweepParameter, CheckResult
)

__all__ = [
    "SystemSpec", "SymmetrizedSystem", "ValidationIssue", "ValidationReport",
    "PeriodicGrid", "ScalarField", "KernelKind", "KernelTable",
    "PositivityPolicy", "SchemeParams", "State", "StepReport", "Trajectory",
    "EntropyReport", "ResidualSeries", "flatten_report",
    "LevyConvention", "ParticleEnsemble", "PotentialSpec",
    "InitialProfile", "InitialCondition", "ParticleSettings", "OutputSettings",
    "RunConfig", "SweepParameter", "CheckResult",
]
