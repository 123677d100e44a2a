"""
应用配置管理模块
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class Settings(BaseSettings):
    """应用配置类"""

    # 应用基础配置
    APP_NAME: str = Field(default="fracross", description="应用名称")

    # 日志配置
    LOG_LEVEL: str = Field(default="INFO", description="日志级别")
    LOG_FILE: str = Field(default="logs/fracross.log", description="日志文件")
    LOG_ROTATION: str = Field(default="10 MB", description="日志轮转大小")

    # 模型（熵结构）配置
    DETAILED_BALANCE_TOL: float = Field(default=1e-10, description="细致平衡相对容差")
    JACOBI_TOL: float = Field(default=1e-12, description="Jacobi 迭代的非对角相对质量阈值")
    JACOBI_MAX_SWEEPS: int = Field(default=100, description="Jacobi 最大循环次数")

    # 分数阶算子配置
    QUADRATURE_IMAGES_1D: int = Field(default=1024, description="一维求积周期镜像层数")
    QUADRATURE_IMAGES_ND: int = Field(default=2, description="高维求积周期镜像层数")
    IMAGINARY_RESIDUE_TOL: float = Field(default=1e-12, description="反变换虚部残差阈值（相对）")
    RIESZ_TAIL_PHASE: float = Field(default=400.0, description="|k|/ε 超过该值时忽略外截断的谱贡献")
    RIESZ_TABLE_STEP: float = Field(default=0.005, description="Riesz 振荡积分累积表步长")

    # 求解器配置
    CFL_NUMBER: float = Field(default=0.4, description="自适应时间步 CFL 常数")
    NEGATIVITY_TOL: float = Field(default=1e-8, description="允许的负值相对幅度")
    LOG_FLOOR: float = Field(default=1e-300, description="诊断中 log 的下限")

    # 诊断配置
    RESIDUAL_CONSTANT: float = Field(default=1.0, description="熵不等式残差容差常数 C_res")

    # 粒子系统配置
    RADIAL_TABLE_POINTS: int = Field(default=8192, description="势函数径向表节点数")
    DRIFT_BLOCK_SIZE: int = Field(default=512, description="成对漂移分块大小")
    POTENTIAL_WIDTH_FACTOR: float = Field(default=1.0, description="V_N 宽度系数 delta_N = c * N^(-1/(d+2))")

    # 输出配置
    DEFAULT_OUTPUT_DIR: str = Field(default="runs", description="默认输出目录")
    SNAPSHOT_MAGIC: str = Field(default="FXD1", description="快照文件魔数")
    SNAPSHOT_VERSION: int = Field(default=1, description="快照格式版本")
    MAX_JOBS: int = Field(default=4, description="扫描任务最大并发数")

    # 检查套件配置
    CHECK_SEED: int = Field(default=20240601, description="检查套件默认随机种子")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="FRACROSS_",
        case_sensitive=True,
        extra="ignore",
    )

    def tolerance_summary(self) -> dict:
        """汇总写入运行清单的数值容差"""
        return {
            "detailed_balance_tol": self.DETAILED_BALANCE_TOL,
            "jacobi_tol": self.JACOBI_TOL,
            "cfl_number": self.CFL_NUMBER,
            "negativity_tol": self.NEGATIVITY_TOL,
            "log_floor": self.LOG_FLOOR,
            "residual_constant": self.RESIDUAL_CONSTANT,
        }


# 创建全局配置实例
settings = Settings()
