"""
不变量检查套件 - 算子恒等式、Stroock–Varopoulos 模糊测试、g_ρ 界与矩阵往返
"""

from typing import Callable, List, Optional

import numpy as np
import pandas as pd
from loguru import logger
from scipy import fft as sfft

from core.config import settings
from models.field import PeriodicGrid, ScalarField
from models.run_config import CheckResult, RunConfig
from models.simulation import SchemeParams, State
from models.system import SystemSpec
from services.diagnostics_service import diagnostics_service
from services.fracops_service import fracops_service, fractional_laplacian_constant
from services.model_service import model_service
from services.solver_service import solver_service


def band_limited_field(grid: PeriodicGrid, rng: np.random.Generator) -> ScalarField:
    """保留 2/3 规则内模的随机实场（不含 Nyquist）"""
    noise = rng.standard_normal(grid.shape)
    values = sfft.ifftn(sfft.fftn(noise) * grid.dealias_mask).real
    return ScalarField(grid, values)


def _inner(f: ScalarField, g: ScalarField) -> float:
    return float(np.sum(f.values * g.values) * f.grid.cell_volume)


class CheckSuite:
    """快速、确定性的不变量检查"""

    def __init__(self, seed: Optional[int] = None):
        self.seed = settings.CHECK_SEED if seed is None else seed

    def _checks(self) -> List[Callable[[np.random.Generator], CheckResult]]:
        return [
            self.check_constant,
            self.check_self_adjoint,
            self.check_semigroup,
            self.check_splitting,
            self.check_quadrature,
            self.check_stroock_varopoulos,
            self.check_stabilizer,
            self.check_matrix_round_trip,
            self.check_mollifier,
            self.check_convolution_square,
            self.check_linear_diffusion,
            self.check_entropy_argmin,
        ]

    def run(self, config: Optional[RunConfig] = None) -> List[CheckResult]:
        rng = np.random.default_rng(self.seed)
        results = []
        for check in self._checks():
            try:
                result = check(rng)
            except Exception as e:
                logger.error(f"检查 {check.__name__} 异常: {e}")
                result = CheckResult(name=check.__name__, passed=False, value=float("nan"),
                                     threshold=float("nan"), detail=str(e))
            results.append(result)
        if config is not None:
            results.extend(self.config_checks(config))
        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.warning(f"检查失败: {failed}")
        else:
            logger.info(f"全部 {len(results)} 项检查通过")
        return results

    # ---------- fracops ----------

    def check_constant(self, rng) -> CheckResult:
        value = fractional_laplacian_constant(2, 0.5)
        error = abs(value - 1.0 / (2.0 * np.pi))
        return CheckResult(name="c_{2,1/2} = 1/(2π)", passed=error <= 1e-13, value=error, threshold=1e-13)

    def check_self_adjoint(self, rng) -> CheckResult:
        grid = PeriodicGrid(d=2, N=32, L=np.pi)
        f = ScalarField(grid, rng.standard_normal(grid.shape))
        g = ScalarField(grid, rng.standard_normal(grid.shape))
        s = 0.37
        lhs = _inner(fracops_service.frac_laplacian_spectral(f, s), g)
        rhs = _inner(f, fracops_service.frac_laplacian_spectral(g, s))
        error = abs(lhs - rhs) / max(abs(lhs), 1.0)
        return CheckResult(name="(-Δ)^s 自伴", passed=error <= 1e-12, value=error, threshold=1e-12)

    def check_semigroup(self, rng) -> CheckResult:
        grid = PeriodicGrid(d=1, N=128, L=4.0)
        f = band_limited_field(grid, rng)
        composed = fracops_service.frac_laplacian_spectral(fracops_service.frac_laplacian_spectral(f, 0.3), 0.4)
        direct = fracops_service.frac_laplacian_spectral(f, 0.7)
        error = float(np.max(np.abs(composed.values - direct.values)) / np.max(np.abs(direct.values)))
        return CheckResult(name="半群复合 s1+s2", passed=error <= 1e-12, value=error, threshold=1e-12)

    def check_splitting(self, rng) -> CheckResult:
        grid = PeriodicGrid(d=2, N=32, L=np.pi)
        f = band_limited_field(grid, rng)
        beta = 0.6
        div = fracops_service.spectral_divergence(fracops_service.nonlocal_gradient(f, beta))
        target = fracops_service.frac_power_spectral(f, beta + 1.0)
        error = float(np.max(np.abs(div.values + target.values)) / np.max(np.abs(target.values)))
        return CheckResult(name="div∘∇(-Δ)^{(β-1)/2} = -(-Δ)^{(β+1)/2}", passed=error <= 1e-12,
                           value=error, threshold=1e-12)

    def check_quadrature(self, rng) -> CheckResult:
        grid = PeriodicGrid(d=1, N=128, L=np.pi)
        x = grid.axis
        f = ScalarField(grid, np.cos(x) + 0.5 * np.sin(2 * x) + 0.25 * np.cos(3 * x))
        s = 0.5
        spectral = fracops_service.frac_laplacian_spectral(f, s).values
        quadrature = fracops_service.frac_laplacian_quadrature(f, s).values
        error = float(np.max(np.abs(spectral - quadrature)) / np.max(np.abs(spectral)))
        return CheckResult(name="求积与谱形式一致 (N=128)", passed=error <= 1e-3, value=error, threshold=1e-3)

    def check_mollifier(self, rng) -> CheckResult:
        grid = PeriodicGrid(d=2, N=64, L=2.0)
        table = fracops_service.build_mollifier(grid, 0.4)
        error = abs(table.mass() - 1.0)
        ok = error <= 1e-14 and bool(np.all(table.values >= 0))
        return CheckResult(name="W_ρ 单位质量且非负", passed=ok, value=error, threshold=1e-14)

    def check_convolution_square(self, rng) -> CheckResult:
        grid = PeriodicGrid(d=1, N=512, L=8.0)
        _, full = fracops_service.build_regularized_riesz(grid, 0.5, 0.2)
        worst = float(full.spectrum.min() / full.spectrum.max())
        return CheckResult(name="K^(ε) 谱非负", passed=worst >= -1e-10, value=worst, threshold=-1e-10)

    # ---------- diagnostics ----------

    def check_stroock_varopoulos(self, rng, trials: int = 1000) -> CheckResult:
        grid = PeriodicGrid(d=1, N=64, L=4.0)
        worst = np.inf
        for _ in range(trials):
            u = ScalarField(grid, rng.uniform(0.01, 5.0, grid.shape) ** rng.uniform(0.5, 3.0))
            s = float(rng.uniform(0.05, 0.95))
            worst = min(worst, diagnostics_service.stroock_varopoulos_gap(u, s))
        return CheckResult(name=f"Stroock–Varopoulos 间隙 ({trials} 次)", passed=worst >= -1e-12,
                           value=worst, threshold=-1e-12)

    def check_entropy_argmin(self, rng, trials: int = 200) -> CheckResult:
        grid = PeriodicGrid(d=1, N=64, L=4.0)
        worst = min(
            diagnostics_service.entropy_argmin_gap(ScalarField(grid, rng.exponential(1.0, grid.shape)))
            for _ in range(trials)
        )
        return CheckResult(name="常数态使熵最小", passed=worst >= -1e-12, value=worst, threshold=-1e-12)

    # ---------- solver ----------

    def check_stabilizer(self, rng, trials: int = 500) -> CheckResult:
        grid = PeriodicGrid(d=1, N=128, L=4.0)
        mollifier = fracops_service.build_mollifier(grid, 0.3)
        worst_ratio = 0.0
        worst_mean = 0.0
        for _ in range(trials):
            u = ScalarField(grid, rng.exponential(1.0, grid.shape))
            bounds = solver_service.stabilizer_bounds(u, 0.3, mollifier)
            worst_ratio = max(worst_ratio, bounds["l1_ratio"])
            worst_mean = max(worst_mean, abs(bounds["mean"]))
        ok = worst_ratio <= 2.0 and worst_mean <= 1e-13
        return CheckResult(name=f"g_ρ: ‖g‖₁ ≤ 2‖u‖₂², 均值为 0 ({trials} 次)", passed=ok,
                           value=worst_ratio, threshold=2.0, detail=f"max |mean| = {worst_mean:.2e}")

    def check_linear_diffusion(self, rng) -> CheckResult:
        grid = PeriodicGrid(d=1, N=64, L=np.pi)
        worst = 0.0
        for alpha in (0.3, 0.5, 0.8):
            spec = SystemSpec(n=1, d=1, alpha=alpha, beta=0.5, sigma=[1.0], A=[[0.0]], pi=[1.0], m=0.4)
            params = SchemeParams(dt=0.01, T=0.05, adaptive_dt=False, grid_points=64, half_length=np.pi)
            u0 = band_limited_field(grid, rng)
            state = State(0.0, (u0,))
            for k in range(5):
                state, _ = solver_service.imex_step(state, spec, params, step=k)
            factor = (1.0 + params.dt * grid.multiplier(2.0 * alpha)) ** (-5)
            expected = sfft.ifftn(u0.hat() * factor).real
            worst = max(worst, float(np.max(np.abs(state.u[0].values - expected))))
        return CheckResult(name="线性分数扩散逐模精确", passed=worst <= 1e-12, value=worst, threshold=1e-12)

    # ---------- model ----------

    def check_matrix_round_trip(self, rng, trials: int = 50) -> CheckResult:
        worst = 0.0
        for _ in range(trials):
            n = int(rng.integers(2, 6))
            B = rng.uniform(0.1, 1.0, (n, n))
            S = B + B.T + n * np.eye(n)
            pi = rng.uniform(0.5, 2.0, n)
            pi /= pi[0]
            A = S / pi[:, None]
            recovered = model_service.find_invariant_measure(A)
            eig = model_service.jacobi_eigenvalues(S)
            worst = max(
                worst,
                float(np.max(np.abs(recovered - pi) / pi)),
                float(np.max(np.abs(eig - np.linalg.eigvalsh(S))) / np.max(np.abs(eig))),
            )
        return CheckResult(name="π 与特征值往返", passed=worst <= 1e-10, value=worst, threshold=1e-10)

    def config_checks(self, config: RunConfig) -> List[CheckResult]:
        """针对具体配置的模型检查"""
        spec = config.system
        structure = model_service.entropy_structure(spec)
        results = [CheckResult(
            name="配置的熵结构",
            passed=structure is not None and structure.positive_definite,
            value=float("nan") if structure is None else structure.lambda_min,
            threshold=0.0,
            detail="无不变测度" if structure is None else f"λ = {structure.lambda_min:.6g}",
        )]
        return results

    @staticmethod
    def table(results: List[CheckResult]) -> pd.DataFrame:
        frame = pd.DataFrame([r.model_dump() for r in results])
        frame["passed"] = frame["passed"].map({True: "PASS", False: "FAIL"})
        return frame[["name", "passed", "value", "threshold", "detail"]]


def run_check_suite(config: Optional[RunConfig] = None, seed: Optional[int] = None) -> List[CheckResult]:
    return CheckSuite(seed).run(config)
