"""
周期网格、标量场与核表
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
from scipy import fft as sfft


@dataclass(frozen=True)
class PeriodicGrid:
    """周期盒 [-L, L)^d 上每轴 N 个点的均匀网格"""
    d: int
    N: int
    L: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("维数 d 必须 ≥ 1")
        if self.N < 4 or self.N % 2:
            raise ValueError(f"每轴点数 N={self.N} 必须为 ≥4 的偶数")
        if not self.L > 0:
            raise ValueError("半长 L 必须为正")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** self.d

    @cached_property
    def axis(self) -> np.ndarray:
        """单轴坐标 x_j = -L + j h"""
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def axis_indices(self) -> np.ndarray:
        """单轴整数波数 j ∈ [-N/2, N/2)，按 FFT 顺序"""
        return np.rint(sfft.fftfreq(self.N) * self.N).astype(int)

    @cached_property
    def axis_wavenumbers(self) -> np.ndarray:
        """单轴波数 k = (π/L) j"""
        return (np.pi / self.L) * self.axis_indices

    @cached_property
    def coordinates(self) -> List[np.ndarray]:
        return np.meshgrid(*([self.axis] * self.d), indexing="ij", sparse=True)

    @cached_property
    def radius(self) -> np.ndarray:
        """盒坐标下的 |x|"""
        r2 = sum(x ** 2 for x in self.coordinates)
        return np.sqrt(np.broadcast_to(r2, self.shape))

    @cached_property
    def periodic_radius(self) -> np.ndarray:
        """到索引原点的最小像距离，用于把核中心放在 FFT 原点"""
        offsets = self.h * self.axis_indices.astype(float)
        parts = np.meshgrid(*([offsets] * self.d), indexing="ij", sparse=True)
        return np.sqrt(np.broadcast_to(sum(p ** 2 for p in parts), self.shape))

    @cached_property
    def k_components(self) -> List[np.ndarray]:
        return np.meshgrid(*([self.axis_wavenumbers] * self.d), indexing="ij", sparse=True)

    @cached_property
    def k_odd_components(self) -> List[np.ndarray]:
        """奇乘子用的波数分量，Nyquist 模置零以保持输出为实"""
        k = self.axis_wavenumbers.copy()
        k[self.axis_indices == -self.N // 2] = 0.0
        return np.meshgrid(*([k] * self.d), indexing="ij", sparse=True)

    @cached_property
    def k_abs(self) -> np.ndarray:
        return np.sqrt(np.broadcast_to(sum(k ** 2 for k in self.k_components), self.shape))

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3 规则：保留每轴 |j| ≤ N/3 的模"""
        keep = np.abs(self.axis_indices) <= self.N // 3
        parts = np.meshgrid(*([keep] * self.d), indexing="ij", sparse=True)
        mask = parts[0]
        for p in parts[1:]:
            mask = mask & p
        return np.broadcast_to(mask, self.shape)

    def multiplier(self, exponent: float) -> np.ndarray:
        """|k|^exponent，零模置 0"""
        out = np.zeros(self.shape)
        nz = self.k_abs > 0
        out[nz] = self.k_abs[nz] ** exponent
        return out

    def describe(self) -> Dict[str, Any]:
        return {"d": self.d, "N": self.N, "L": self.L, "h": self.h}


@dataclass
class ScalarField:
    """网格上的实值场（行主序，形状 N^d）"""
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            if self.values.size == int(np.prod(self.grid.shape)):
                self.values = self.values.reshape(self.grid.shape)
            else:
                raise ValueError(
                    f"场长度 {self.values.size} 与网格 {self.grid.shape} 不符"
                )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("场含非有限值")

    @classmethod
    def zeros(cls, grid: PeriodicGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: PeriodicGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn: Callable[..., np.ndarray]) -> "ScalarField":
        """fn 接收 d 个坐标数组（稀疏广播）"""
        values = np.broadcast_to(fn(*grid.coordinates), grid.shape)
        return cls(grid, np.array(values, dtype=float))

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def mean(self) -> float:
        return float(self.values.mean())

    def hat(self) -> np.ndarray:
        return sfft.fftn(self.values)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


class KernelKind(str, Enum):
    """核表类型"""
    REGULARIZED_RIESZ_HALF = "regularized-riesz-half"
    CONVOLUTION_SQUARE = "convolution-square"
    MOLLIFIER = "mollifier"
    CUSTOM = "custom"


@dataclass
class KernelTable:
    """径向核在网格上的取值及其谱系数

    values 以最小像距离居中于索引原点；from_values 构造时 spectrum = normalization · h^d · Re FFT(values)，
    正则化 Riesz 核的谱另行按周期化核的 Fourier 系数给出。
    """
    kind: KernelKind
    grid: PeriodicGrid
    values: np.ndarray
    spectrum: np.ndarray
    normalization: float = 1.0
    params: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_values(
        cls,
        grid: PeriodicGrid,
        kind: KernelKind,
        values: np.ndarray,
        normalization: float = 1.0,
        **params: Any,
    ) -> "KernelTable":
        values = np.asarray(values, dtype=float).reshape(grid.shape)
        spectrum = normalization * grid.cell_volume * sfft.fftn(values).real
        return cls(kind, grid, values, spectrum, normalization, dict(params))

    def mass(self) -> float:
        return float(self.normalization * self.values.sum() * self.grid.cell_volume)
