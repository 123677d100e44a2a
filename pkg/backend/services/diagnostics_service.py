"""
诊断服务 - 熵、熵产生、守恒量、L^p 范数与各类不等式的运行时检查
"""

from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy import fft as sfft
from scipy import special

from core.config import settings
from core.errors import NonAdmissible, NonPositiveField
from models.field import KernelTable, PeriodicGrid, ScalarField
from models.simulation import EntropyReport, ResidualSeries, SchemeParams, State, Trajectory
from models.system import SystemSpec
from services.fracops_service import fractional_laplacian_constant


def _parseval(grid: PeriodicGrid, spectrum: np.ndarray, weight: np.ndarray) -> float:
    """Σ_x |f|² h^d 的谱形式：h^d/N^d Σ_k w_k |F_k|²"""
    n_points = float(np.prod(grid.shape))
    return float(np.sum(weight * np.abs(spectrum) ** 2) * grid.cell_volume / n_points)


def _pi_weights(spec: SystemSpec, pi: Optional[Sequence[float]]) -> np.ndarray:
    if pi is not None:
        return np.asarray(pi, dtype=float)
    if spec.pi_vector is not None:
        return spec.pi_vector
    return np.ones(spec.n)


class DiagnosticsService:
    """只读诊断量计算"""

    def __init__(self, negativity_tol: Optional[float] = None):
        self.negativity_tol = settings.NEGATIVITY_TOL if negativity_tol is None else negativity_tol

    # ---------- 非负性 ----------

    def admissible_values(self, field: ScalarField, species: int = 0) -> np.ndarray:
        """容差内的负值截为 0；超出 -tol·max 则抛出 NonAdmissible"""
        values = field.values
        scale = max(float(np.max(np.abs(values))), 0.0)
        minimum = float(values.min())
        if minimum < -self.negativity_tol * scale:
            raise NonAdmissible(
                f"物种 {species + 1} 最小值 {minimum:.3e} 低于 -{self.negativity_tol:g}·max"
            )
        return np.clip(values, 0.0, None)

    # ---------- 熵 ----------

    def entropy_functional(self, state: State, pi: Sequence[float]) -> float:
        """H = Σ_i π_i Σ_x u_i log u_i h^d，约定 0 log 0 = 0"""
        pi = np.asarray(pi, dtype=float)
        total = 0.0
        for i, field in enumerate(state.u):
            u = self.admissible_values(field, i)
            total += pi[i] * float(np.sum(special.xlogy(u, u)))
        return total * state.grid.cell_volume

    def entropy_production(
        self, state: State, spec: SystemSpec, lam: float, pi: Optional[Sequence[float]] = None
    ) -> Tuple[float, float]:
        """(D_frac, D_cross)

        D_frac = 4Σπ_iσ_i∫|(-Δ)^{α/2}√u_i|²，D_cross = λΣ∫|∇(-Δ)^{(β-1)/4}u_i|²。
        """
        grid = state.grid
        weights = _pi_weights(spec, pi)
        frac_weight = grid.multiplier(2.0 * spec.alpha)
        cross_weight = grid.multiplier(spec.beta + 1.0)

        d_frac = 0.0
        d_cross = 0.0
        for i, field in enumerate(state.u):
            u = self.admissible_values(field, i)
            if spec.sigma[i] != 0.0:
                d_frac += 4.0 * weights[i] * spec.sigma[i] * _parseval(grid, sfft.fftn(np.sqrt(u)), frac_weight)
            d_cross += _parseval(grid, sfft.fftn(u), cross_weight)
        return d_frac, lam * d_cross

    def approximate_entropy_production(
        self,
        state: State,
        spec: SystemSpec,
        lam: float,
        params: SchemeParams,
        half_kernel: Optional[KernelTable] = None,
        pi: Optional[Sequence[float]] = None,
    ) -> EntropyReport:
        """近似系统的熵与耗散：D_frac、正则化 D_cross 与 κ 项 4κΣπ_i∫|∇√u_i|²"""
        grid = state.grid
        weights = _pi_weights(spec, pi)
        d_frac, d_cross = self.entropy_production(state, spec, lam, weights)

        if half_kernel is not None:
            # |∇K̃*u|² 的谱权重为 |k|² K̂²
            cross_weight = grid.k_abs ** 2 * half_kernel.spectrum ** 2
            d_cross = lam * sum(
                _parseval(grid, sfft.fftn(self.admissible_values(f, i)), cross_weight)
                for i, f in enumerate(state.u)
            )

        d_kappa = 0.0
        if params.kappa > 0:
            grad_weight = grid.k_abs ** 2
            for i, field in enumerate(state.u):
                root = np.sqrt(self.admissible_values(field, i))
                d_kappa += 4.0 * params.kappa * weights[i] * _parseval(grid, sfft.fftn(root), grad_weight)

        return EntropyReport(
            H=self.entropy_functional(state, weights), D_frac=d_frac, D_cross=d_cross, D_kappa=d_kappa
        )

    def entropy_inequality_residual(
        self,
        trajectory: Trajectory,
        midpoint: bool = False,
        constant: Optional[float] = None,
    ) -> ResidualSeries:
        """残差 r_k = H(t_{k+1}) - H(t_k) + dt·D(t_k)，并给出时间积分残差

        D 取步报告里记录的 D_frac + D_cross (+ D_kappa)；midpoint 为真时取两端平均。
        """
        reports = trajectory.reports
        if any(r.entropy is None or r.D_frac is None or r.D_cross is None for r in reports):
            raise NonAdmissible("轨迹缺少熵或耗散记录，无法计算熵不等式残差")
        constant = settings.RESIDUAL_CONSTANT if constant is None else constant

        def production(r) -> float:
            return r.D_frac + r.D_cross + (r.D_kappa or 0.0)

        residuals: List[float] = []
        integrated = 0.0
        for prev, cur in zip(reports[:-1], reports[1:]):
            rate = 0.5 * (production(prev) + production(cur)) if midpoint else production(prev)
            residuals.append(cur.entropy - prev.entropy + cur.dt * rate)
            integrated += cur.dt * rate
        integrated += reports[-1].entropy - reports[0].entropy

        steps = len(residuals)
        dt_max = max((r.dt for r in reports[1:]), default=0.0)
        tolerance = constant * dt_max ** 2 * steps
        max_residual = max(residuals, default=0.0)
        scale = max(abs(reports[0].entropy), 1.0)
        series = ResidualSeries(
            residuals=residuals,
            max_residual=max_residual,
            integrated_residual=integrated,
            tolerance=tolerance,
            passed=max_residual <= tolerance,
            integrated_passed=integrated <= 1e-6 * scale,
            midpoint=midpoint,
        )
        logger.debug(
            f"熵不等式残差: max={max_residual:.3e}, 积分={integrated:.3e}, tol={tolerance:.3e}"
        )
        return series

    # ---------- 守恒量与范数 ----------

    def conserved_quantities(self, state: State, m: float) -> Tuple[np.ndarray, np.ndarray]:
        """质量 Σu_i h^d 与矩 Σu_i(1+|x|²)^{m/2} h^d（x 为盒坐标）"""
        grid = state.grid
        weight = (1.0 + grid.radius ** 2) ** (m / 2.0)
        data = state.stack()
        axes = tuple(range(1, data.ndim))
        mass = data.sum(axis=axes) * grid.cell_volume
        moment = (data * weight).sum(axis=axes) * grid.cell_volume
        return mass, moment

    def lp_norms(self, state: State, exponents: Iterable[float]) -> pd.DataFrame:
        """各物种的离散 L^p 范数表（行为物种，列为 p）"""
        exponents = list(exponents)
        if any(p < 1 for p in exponents):
            raise ValueError("L^p 指数必须 ≥ 1")
        h_d = state.grid.cell_volume
        rows = {}
        for i, field in enumerate(state.u, start=1):
            a = np.abs(field.values)
            row = {}
            for p in exponents:
                if np.isinf(p):
                    row[p] = float(a.max())
                else:
                    row[p] = float(np.sum(a ** p) * h_d) ** (1.0 / p)
            rows[f"u_{i}"] = row
        return pd.DataFrame.from_dict(rows, orient="index")

    def l2_norm_parseval(self, field: ScalarField) -> float:
        return float(np.sqrt(_parseval(field.grid, field.hat(), np.ones(field.grid.shape))))

    # ---------- 不等式检查 ----------

    def stroock_varopoulos_gap(
        self,
        u: ScalarField,
        s: float,
        r_cut: Optional[float] = None,
        floor: Optional[float] = None,
    ) -> float:
        """成对求积下 ∫log u (-Δ)^s u - 4∫|(-Δ)^{s/2}√u|²

        LHS = (c/2)Σ w (u(x)-u(y))(log u(x)-log u(y))，RHS = 2cΣ w (√u(x)-√u(y))²，
        w = |x-y|^{-d-2s} h^{2d}，按最小像距离截断于 r_cut。两侧逐项比较，差值非负。
        """
        grid = u.grid
        values = u.values
        if floor is not None:
            if np.any(values <= 0):
                logger.info(f"Stroock–Varopoulos 检查使用下限 {floor:g}")
            values = np.maximum(values, floor)
        elif np.any(values <= 0):
            raise NonPositiveField("Stroock–Varopoulos 检查要求 u 严格为正")

        r_cut = grid.L if r_cut is None else r_cut
        c = fractional_laplacian_constant(grid.d, s)
        log_u = np.log(values)
        root = np.sqrt(values)
        axes = tuple(range(grid.d))

        total = 0.0
        for offset in np.ndindex(*grid.shape):
            r = float(grid.periodic_radius[offset])
            if r == 0.0 or r > r_cut:
                continue
            w = r ** (-grid.d - 2.0 * s) * grid.cell_volume ** 2
            du = values - np.roll(values, offset, axis=axes)
            dlog = log_u - np.roll(log_u, offset, axis=axes)
            droot = root - np.roll(root, offset, axis=axes)
            total += w * float(np.sum(0.5 * du * dlog - 2.0 * droot ** 2))
        return c * total

    def fractional_l1_bound(self, u: ScalarField, alpha: float, constant: float = 4.0) -> Dict[str, float]:
        """乘积法则估计 ‖(-Δ)^{α/2}u‖₁ ≤ C‖u‖₁^{1/2}‖(-Δ)^{α/2}√u‖₂，C 缺省为 4；取更小的 C 可考察估计的锐度"""
        grid = u.grid
        values = self.admissible_values(u)
        multiplier = grid.multiplier(alpha)
        lhs = float(np.sum(np.abs(sfft.ifftn(sfft.fftn(values) * multiplier).real)) * grid.cell_volume)
        l1 = float(values.sum() * grid.cell_volume)
        root_norm = np.sqrt(_parseval(grid, sfft.fftn(np.sqrt(values)), multiplier ** 2))
        rhs = constant * np.sqrt(l1) * root_norm
        return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs * (1.0 + 1e-12) + 1e-14)}

    def entropy_argmin_gap(self, u: ScalarField) -> float:
        """H(u) - H(ū)，ū 为等质量常数；Jensen 不等式保证非负"""
        values = self.admissible_values(u)
        mean = float(values.mean())
        h_u = float(np.sum(special.xlogy(values, values)))
        h_mean = float(values.size * special.xlogy(mean, mean))
        return (h_u - h_mean) * u.grid.cell_volume

    # ---------- 矩的 Gronwall 包络 ----------

    def fit_gronwall_envelope(self, times: Sequence[float], moments: Sequence[float]) -> float:
        """最小的 C ≥ 0 使 M(t) ≤ M(0)e^{Ct} + C 在给定样本上成立（二分）"""
        times = np.asarray(times, dtype=float)
        moments = np.asarray(moments, dtype=float)
        m0 = moments[0]

        def holds(c: float) -> bool:
            return bool(np.all(moments <= m0 * np.exp(c * times) + c + 1e-12 * max(m0, 1.0)))

        if holds(0.0):
            return 0.0
        upper = 1.0
        while not holds(upper):
            upper *= 2.0
            if upper > 1e12:
                raise ValueError("矩增长无法用 Gronwall 包络描述")
        lower = 0.0
        for _ in range(80):
            mid = 0.5 * (lower + upper)
            if holds(mid):
                upper = mid
            else:
                lower = mid
        return upper

    def moment_envelope_check(
        self, times: Sequence[float], moments: Sequence[float], margin: float = 1.0
    ) -> Dict[str, float]:
        """用前半段拟合 C，在后半段以 (1+margin)·C 验证包络（无超指数增长）"""
        times = np.asarray(times, dtype=float)
        moments = np.asarray(moments, dtype=float)
        half = max(2, len(times) // 2)
        c_fit = self.fit_gronwall_envelope(times[:half], moments[:half])
        c_check = (1.0 + margin) * c_fit
        envelope = moments[0] * np.exp(c_check * times) + c_check
        excess = float(np.max(moments[half:] - envelope[half:])) if len(times) > half else -np.inf
        return {
            "C_fit": c_fit,
            "C_check": c_check,
            "max_excess": excess,
            "holds": bool(excess <= 1e-12 * max(moments[0], 1.0)),
        }


# 创建全局服务实例
diagnostics_service = DiagnosticsService()
