"""
种群模型规格与熵结构数据模型
"""

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


class SystemSpec(BaseModel):
    """n 物种分数阶交叉扩散模型 (n, d, α, β, σ, A, π, m)

    取值范围由 validate_system 以报告形式检查，这里只保证结构自洽。
    """
    n: int = Field(..., description="物种数", ge=1)
    d: int = Field(..., description="空间维数", ge=1)
    alpha: float = Field(..., description="分数阶扩散阶数 α")
    beta: float = Field(..., description="非局部梯度阶数 β")
    sigma: List[float] = Field(..., description="自扩散系数 σ_i")
    A: List[List[float]] = Field(..., description="相互作用矩阵 a_ij")
    pi: Optional[List[float]] = Field(None, description="不变测度 π_i")
    m: float = Field(..., description="矩指数")

    model_config = {"frozen": True}

    @field_validator("sigma", "pi")
    @classmethod
    def _finite_vector(cls, value):
        if value is not None and not np.all(np.isfinite(value)):
            raise ValueError("向量含非有限值")
        return value

    @model_validator(mode="after")
    def _check_shapes(self):
        if len(self.sigma) != self.n:
            raise ValueError(f"sigma 长度 {len(self.sigma)} 与 n={self.n} 不符")
        if len(self.A) != self.n or any(len(row) != self.n for row in self.A):
            raise ValueError(f"A 必须是 {self.n}x{self.n} 矩阵")
        if self.pi is not None and len(self.pi) != self.n:
            raise ValueError(f"pi 长度 {len(self.pi)} 与 n={self.n} 不符")
        return self

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.A, dtype=float)

    @property
    def sigma_vector(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)

    @property
    def pi_vector(self) -> Optional[np.ndarray]:
        return None if self.pi is None else np.asarray(self.pi, dtype=float)

    def with_pi(self, pi: Optional[np.ndarray]) -> "SystemSpec":
        """返回替换 π 后的副本"""
        values = None if pi is None else [float(p) for p in pi]
        return self.model_copy(update={"pi": values})


class SymmetrizedSystem(BaseModel):
    """对称化矩阵 S = diag(π)A 及其最小特征值 λ"""
    S: List[List[float]] = Field(..., description="对称矩阵 π_i a_ij")
    symmetry_defect: float = Field(..., description="相对对称缺陷")
    eigenvalues: List[float] = Field(..., description="升序特征值")
    lambda_min: float = Field(..., description="最小特征值 λ")
    positive_definite: bool = Field(..., description="是否正定")

    model_config = {"frozen": True}

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.S, dtype=float)


class ValidationIssue(BaseModel):
    """单条校验问题"""
    code: str = Field(..., description="机器可读代码")
    message: str = Field(..., description="问题描述")
    species: Optional[int] = Field(None, description="相关物种（从 0 计）")
    reference: Optional[str] = Field(None, description="对应的假设条件")


class ValidationReport(BaseModel):
    """validate_system 的结构化报告，空即为可接受"""
    issues: List[ValidationIssue] = Field(default_factory=list, description="问题列表")

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> List[str]:
        return [issue.code for issue in self.issues]

    def summary(self) -> str:
        if self.ok:
            return "模型与初值可接受"
        return "; ".join(f"[{i.code}] {i.message}" for i in self.issues)
