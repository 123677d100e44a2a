"""
运行配置与检查结果数据模型
"""

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator

from .particle import LevyConvention
from .simulation import SchemeParams
from .system import SystemSpec


class InitialProfile(str, Enum):
    """初值方案"""
    GAUSSIAN_BUMPS = "gaussian-bumps"
    CONSTANT = "constant"
    FROM_SNAPSHOT = "from-snapshot"


class InitialCondition(BaseModel):
    """初值配方：每个物种一个高斯包 / 常数 / 快照文件"""
    profile: InitialProfile = Field(default=InitialProfile.GAUSSIAN_BUMPS, description="初值方案")
    centers: Optional[List[List[float]]] = Field(None, description="各物种包中心")
    widths: Optional[List[float]] = Field(None, description="各物种包标准差")
    masses: Optional[List[float]] = Field(None, description="各物种质量")
    values: Optional[List[float]] = Field(None, description="常数初值")
    background: float = Field(default=0.0, description="叠加的常数背景", ge=0)
    path: Optional[str] = Field(None, description="快照路径")


class ParticleSettings(BaseModel):
    """粒子系统设置"""
    count: List[int] = Field(default_factory=lambda: [1000], description="各物种粒子数")
    delta: Optional[float] = Field(None, description="V_N 宽度（缺省按 N^(-1/(d+2))）")
    convention: LevyConvention = Field(default=LevyConvention.GENERATOR, description="Lévy 指数约定")
    bandwidth: Optional[float] = Field(None, description="经验密度平滑宽度")
    dt: Optional[float] = Field(None, description="粒子时间步（缺省沿用格式 dt）")
    T: Optional[float] = Field(None, description="粒子终止时间（缺省沿用格式 T）")
    snapshot_every: Optional[int] = Field(None, description="密度快照间隔")
    seed: Optional[int] = Field(None, description="64 位无符号随机种子")

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, value):
        if value is not None and not 0 <= value < 2 ** 64:
            raise ValueError("seed 必须是 64 位无符号整数")
        return value

    @field_validator("count")
    @classmethod
    def _positive_counts(cls, value):
        if any(c < 1 for c in value):
            raise ValueError("每个物种粒子数必须 ≥ 1")
        return value


class OutputSettings(BaseModel):
    """输出设置"""
    directory: Optional[str] = Field(None, description="输出目录（缺省为 DEFAULT_OUTPUT_DIR/命令名）")


class RunConfig(BaseModel):
    """完整运行配置"""
    system: SystemSpec
    scheme: SchemeParams
    initial: InitialCondition = Field(default_factory=InitialCondition)
    particles: ParticleSettings = Field(default_factory=ParticleSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)
    source: Dict[str, Dict[str, str]] = Field(default_factory=dict, description="原始键值（用于清单回显）")

    def with_updates(self, **sections: Any) -> "RunConfig":
        return self.model_copy(update=sections)


class SweepParameter(str, Enum):
    """参数扫描对象"""
    EPS = "eps"
    RHO = "rho"
    KAPPA = "kappa"
    DT = "dt"


class CheckResult(BaseModel):
    """检查套件中的一项"""
    name: str = Field(..., description="检查名称")
    passed: bool = Field(..., description="是否通过")
    value: float = Field(..., description="观测值")
    threshold: float = Field(..., description="阈值")
    detail: str = Field(default="", description="补充说明")
