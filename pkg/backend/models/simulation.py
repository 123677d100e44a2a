"""
时间推进相关的数据模型：格式参数、状态、步报告与轨迹
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from core.config import settings
from .field import PeriodicGrid, ScalarField


class PositivityPolicy(str, Enum):
    """负值处理策略"""
    MONITOR = "monitor"
    CLAMP = "clamp"


class SchemeParams(BaseModel):
    """IMEX 格式与近似层级参数 (κ, ε, ρ)"""
    dt: float = Field(..., description="时间步长", gt=0)
    T: float = Field(..., description="终止时间")
    kappa: float = Field(default=0.0, description="人工粘性 κ", ge=0)
    eps: float = Field(default=0.0, description="核正则化 ε（0 表示精确乘子）", ge=0, lt=1)
    rho: float = Field(default=0.0, description="磨光宽度 ρ（0 选择 g_0）", ge=0)
    dealias: bool = Field(default=True, description="二次乘积使用 2/3 规则")
    positivity_policy: PositivityPolicy = Field(default=PositivityPolicy.MONITOR, description="负值策略")
    snapshot_every: int = Field(default=100, description="每多少步保存快照", ge=1)
    adaptive_dt: bool = Field(default=True, description="按 CFL 上界自适应缩小时间步")
    cfl: float = Field(default_factory=lambda: settings.CFL_NUMBER, description="CFL 常数", gt=0)
    grid_points: int = Field(default=128, description="每轴网格点数 N", ge=4)
    half_length: float = Field(default=8.0, description="计算盒半长 L", gt=0)
    midpoint_residual: bool = Field(default=False, description="熵残差使用中点产生率")

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_horizon(self):
        if self.T < self.dt:
            raise ValueError(f"终止时间 T={self.T} 必须 ≥ dt={self.dt}")
        if self.grid_points % 2:
            raise ValueError("网格点数必须为偶数")
        return self

    @property
    def uses_stabilizer(self) -> bool:
        return self.kappa > 0

    def grid(self, d: int) -> PeriodicGrid:
        return PeriodicGrid(d=d, N=self.grid_points, L=self.half_length)


@dataclass(frozen=True)
class State:
    """时刻 t 的各物种密度快照"""
    t: float
    u: Tuple[ScalarField, ...]

    def __post_init__(self):
        if not self.u:
            raise ValueError("状态至少包含一个物种")
        grid = self.u[0].grid
        if any(f.grid != grid for f in self.u):
            raise ValueError("所有物种必须位于同一网格")

    @property
    def grid(self) -> PeriodicGrid:
        return self.u[0].grid

    @property
    def n(self) -> int:
        return len(self.u)

    def stack(self) -> np.ndarray:
        return np.stack([f.values for f in self.u])

    @classmethod
    def from_arrays(cls, t: float, grid: PeriodicGrid, arrays) -> "State":
        return cls(float(t), tuple(ScalarField(grid, a) for a in arrays))


class StepReport(BaseModel):
    """单步诊断记录"""
    step: int = Field(..., description="步序号")
    t: float = Field(..., description="时间")
    dt: float = Field(..., description="到达本步所用步长（第 0 步为 0）")
    mass: List[float] = Field(..., description="各物种质量")
    minimum: List[float] = Field(..., description="各物种最小值")
    moment: List[float] = Field(..., description="各物种 m 阶矩")
    entropy: Optional[float] = Field(None, description="熵 H（无不变测度时为空）")
    D_frac: Optional[float] = Field(None, description="分数扩散耗散")
    D_cross: Optional[float] = Field(None, description="交叉扩散耗散")
    D_kappa: Optional[float] = Field(None, description="人工粘性耗散 4κΣπ∫|∇√u|²")
    residual: Optional[float] = Field(None, description="熵不等式单步残差")
    clamp_correction: float = Field(default=0.0, description="截断后恢复的质量")
    entropy_admissible: bool = Field(default=True, description="熵是否在非负容差内计算")


@dataclass
class Trajectory:
    """快照序列与逐步诊断"""
    snapshots: List[State] = field(default_factory=list)
    snapshot_steps: List[int] = field(default_factory=list)
    reports: List[StepReport] = field(default_factory=list)
    completed: bool = False

    @property
    def final_state(self) -> State:
        return self.snapshots[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.reports])

    def to_frame(self) -> pd.DataFrame:
        """按 diagnostics.csv 的列顺序展开"""
        return pd.DataFrame([flatten_report(r) for r in self.reports])


def flatten_report(report: StepReport) -> Dict[str, float]:
    """StepReport → diagnostics.csv 的一行"""
    row: Dict[str, float] = {"step": report.step, "t": report.t}
    for i, value in enumerate(report.mass, start=1):
        row[f"mass_{i}"] = value
    for i, value in enumerate(report.minimum, start=1):
        row[f"min_{i}"] = value
    row["entropy"] = _or_nan(report.entropy)
    row["D_frac"] = _or_nan(report.D_frac)
    row["D_cross"] = _or_nan(report.D_cross)
    row["residual"] = _or_nan(report.residual)
    for i, value in enumerate(report.moment, start=1):
        row[f"moment_{i}"] = value
    row["dt"] = report.dt
    return row


def _or_nan(value: Optional[float]) -> float:
    return float("nan") if value is None else value


class EntropyReport(BaseModel):
    """熵、两类耗散与单步残差"""
    H: float = Field(..., description="熵值")
    D_frac: float = Field(..., description="4Σσ_i∫|(-Δ)^{α/2}√u_i|²")
    D_cross: float = Field(..., description="λΣ∫|∇(-Δ)^{(β-1)/4}u_i|²")
    D_kappa: Optional[float] = Field(None, description="黏性项 4κΣπ_i∫|∇√u_i|²")
    residual: Optional[float] = Field(None, description="H(t_{k+1}) - H(t_k) + dt·(D_frac + D_cross)")


class ResidualSeries(BaseModel):
    """整条轨迹的熵不等式残差"""
    residuals: List[float] = Field(default_factory=list, description="逐步残差")
    max_residual: float = Field(..., description="最大单步残差")
    integrated_residual: float = Field(..., description="时间积分残差 H(T)-H(0)+Σdt·D")
    tolerance: float = Field(..., description="tol_ei(dt) = C_res·dt²·steps")
    passed: bool = Field(..., description="运行级判定（最大单步残差 ≤ tol）")
    integrated_passed: bool = Field(..., description="时间积分残差 ≤ 1e-6·|H(0)|")
    midpoint: bool = Field(default=False, description="是否使用中点产生率")
