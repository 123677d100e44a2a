"""
粒子系统数据模型
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np


class LevyConvention(str, Enum):
    """Lévy 噪声的指数约定

    GENERATOR: 增量特征指数 σ|ξ|^{2α}，与 PDE 生成元 σ(-Δ)^α 一致
    SCALED: √(2σ)·L(t)，L 的特征指数为 |ξ|^{2α}，等效系数 (2σ)^α
    """
    GENERATOR = "generator"
    SCALED = "scaled"


@dataclass
class ParticleEnsemble:
    """各物种粒子位置（周期盒内），时间与随机数发生器"""
    positions: List[np.ndarray]
    t: float
    L: float
    rng: np.random.Generator
    masses: Optional[List[float]] = None

    def __post_init__(self):
        self.positions = [np.atleast_2d(np.asarray(p, dtype=float)) for p in self.positions]
        for p in self.positions:
            if p.shape[0] < 1:
                raise ValueError("每个物种至少需要一个粒子")
            if np.any(p < -self.L) or np.any(p >= self.L):
                raise ValueError("粒子位置必须位于 [-L, L)^d 内")
        if self.masses is None:
            self.masses = [1.0] * len(self.positions)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def d(self) -> int:
        return self.positions[0].shape[1]

    @property
    def counts(self) -> List[int]:
        return [p.shape[0] for p in self.positions]


@dataclass(frozen=True)
class PotentialSpec:
    """V_N（单位质量高斯）及 ∇(-Δ)^{(β-1)/2}V_N 的径向表

    径向分量 g(r) 在 r_nodes 上线性插值，G(x) = g(|x|)·x/|x|，g(0) = 0。
    """
    delta_N: float
    beta: float
    d: int
    r_nodes: np.ndarray
    g_values: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def spacing(self) -> float:
        return float(self.r_nodes[1] - self.r_nodes[0])

    @property
    def r_max(self) -> float:
        return float(self.r_nodes[-1])

    def radial(self, r: np.ndarray) -> np.ndarray:
        """径向分量的线性插值，表外为 0"""
        return np.interp(r, self.r_nodes, self.g_values, right=0.0)
