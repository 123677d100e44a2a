"""
粒子服务 - α 稳定噪声驱动的中等相互作用粒子系统
"""

from typing import Callable, List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy import integrate, special, stats

from core.config import settings
from core.errors import RhoUnresolved, UnresolvedPotential
from models.field import PeriodicGrid, ScalarField
from models.particle import LevyConvention, ParticleEnsemble, PotentialSpec
from models.system import SystemSpec
from services.fracops_service import fracops_service


def wrap_positions(x: np.ndarray, L: float) -> np.ndarray:
    """周期折回到 [-L, L)"""
    wrapped = -L + np.mod(x + L, 2.0 * L)
    # mod 的舍入可能给出恰好 L
    wrapped[wrapped >= L] = -L
    return wrapped


def minimum_image(dx: np.ndarray, L: float) -> np.ndarray:
    return dx - 2.0 * L * np.round(dx / (2.0 * L))


def default_width(count: int, d: int) -> float:
    """δ_N ∝ N^{-1/(d+2)}"""
    return settings.POTENTIAL_WIDTH_FACTOR * float(count) ** (-1.0 / (d + 2.0))


def subordinator_scale(alpha: float, sigma: float, dt: float, convention: LevyConvention) -> float:
    """从属子 S 满足 E e^{-λS} = e^{-cλ^α}，返回 c"""
    if convention == LevyConvention.SCALED:
        return (2.0 * sigma) ** alpha * dt
    return sigma * dt


class ParticleService:
    """粒子系统模拟"""

    # ---------- Lévy 增量 ----------

    def sample_subordinator(
        self, alpha: float, scale: float, rng: np.random.Generator, size: int
    ) -> np.ndarray:
        """单边 α 稳定变量，Laplace 变换 e^{-scale·λ^α}

        S1 参数化下 β = 1、α < 1 的稳定律满足 E e^{-λS} = exp(-γ^α λ^α / cos(πα/2))。
        """
        gamma = (scale * np.cos(np.pi * alpha / 2.0)) ** (1.0 / alpha)
        draws = stats.levy_stable.rvs(alpha, 1.0, loc=0.0, scale=gamma, size=size, random_state=rng)
        return np.clip(np.asarray(draws, dtype=float), 0.0, None)

    def sample_levy_increment(
        self,
        alpha: float,
        sigma: float,
        dt: float,
        rng: np.random.Generator,
        size: int = 1,
        d: int = 1,
        convention: LevyConvention = LevyConvention.GENERATOR,
    ) -> np.ndarray:
        """各向同性增量 √(2S)·Z，特征函数 e^{-σdt|ξ|^{2α}}（generator 约定），形状 (size, d)"""
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha={alpha} 必须位于 (0,1)")
        if dt <= 0:
            raise ValueError("dt 必须为正")
        if sigma < 0:
            raise ValueError("sigma 必须非负")
        if sigma == 0.0:
            return np.zeros((size, d))
        scale = subordinator_scale(alpha, sigma, dt, convention)
        S = self.sample_subordinator(alpha, scale, rng, size)
        Z = rng.standard_normal((size, d))
        return np.sqrt(2.0 * S)[:, None] * Z

    # ---------- 位势表 ----------

    def build_potential_table(
        self,
        L: float,
        beta: float,
        d: int,
        delta: float,
        points: Optional[int] = None,
    ) -> PotentialSpec:
        """V_N = 单位质量高斯（标准差 δ）与 ∇(-Δ)^{(β-1)/2}V_N 的径向表

        d = 1 时在细周期网格上用谱乘子 i k|k|^{β-1} 计算（与 PDE 的周期算子一致）；
        d ≥ 2 时用 Hankel 变换求全空间径向分量。
        """
        points = settings.RADIAL_TABLE_POINTS if points is None else points
        if d == 1:
            fine = PeriodicGrid(d=1, N=points, L=L)
            r = fine.periodic_radius
            V = np.exp(-r ** 2 / (2.0 * delta ** 2))
            V /= V.sum() * fine.h
            G = fracops_service.nonlocal_gradient(ScalarField(fine, V), beta)[0].values
            half = points // 2
            r_nodes = fine.h * np.arange(half + 1)
            g_values = G[: half + 1].copy()
            g_values[0] = 0.0
            mass = float(V.sum() * fine.h)
        else:
            r_nodes = np.linspace(0.0, L * np.sqrt(d), points)
            k = np.linspace(0.0, 12.0 / delta, 4 * points + 1)
            v_hat = np.exp(-0.5 * (delta * k) ** 2)
            weight = k ** (beta + d / 2.0) * v_hat
            g_values = np.zeros_like(r_nodes)
            for idx, r in enumerate(r_nodes[1:], start=1):
                integrand = weight * special.jv(d / 2.0, k * r)
                g_values[idx] = -(2.0 * np.pi) ** (-d / 2.0) * r ** (1.0 - d / 2.0) * integrate.trapezoid(integrand, k)
            mass = 1.0

        logger.debug(f"位势表: d={d}, δ={delta:.4g}, 节点 {len(r_nodes)}, 间距 {r_nodes[1] - r_nodes[0]:.3g}")
        return PotentialSpec(
            delta_N=delta, beta=beta, d=d, r_nodes=r_nodes, g_values=g_values,
            metadata={"mass": mass, "L": L, "points": points},
        )

    def evaluate_potential_gradient(self, dx: np.ndarray, potential: PotentialSpec) -> np.ndarray:
        """G(x) = g(|x|)·x/|x|，dx 形状 (..., d)"""
        r = np.sqrt(np.sum(dx ** 2, axis=-1))
        g = potential.radial(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, dx / r[..., None], 0.0)
        return g[..., None] * unit

    # ---------- 漂移与时间步 ----------

    def pair_drift(
        self, ensemble: ParticleEnsemble, spec: SystemSpec, potential: PotentialSpec
    ) -> List[np.ndarray]:
        """-Σ_j a_ij (M_j/N_j) Σ_ℓ G(X_i^k - X_j^ℓ)，最小像差分，按目标粒子分块"""
        if potential.delta_N < 2.0 * potential.spacing:
            raise UnresolvedPotential(
                f"δ_N={potential.delta_N:.3g} 小于径向表间距的两倍 ({2 * potential.spacing:.3g})"
            )
        A = spec.matrix
        L = ensemble.L
        block = settings.DRIFT_BLOCK_SIZE
        drifts = []
        for i, X in enumerate(ensemble.positions):
            drift = np.zeros_like(X)
            for j, Y in enumerate(ensemble.positions):
                if A[i, j] == 0.0:
                    continue
                weight = A[i, j] * ensemble.masses[j] / Y.shape[0]
                for start in range(0, X.shape[0], block):
                    dx = minimum_image(X[start:start + block, None, :] - Y[None, :, :], L)
                    drift[start:start + block] -= weight * self.evaluate_potential_gradient(dx, potential).sum(axis=1)
            drifts.append(drift)
        return drifts

    def total_momentum(self, ensemble: ParticleEnsemble, drifts: Sequence[np.ndarray]) -> np.ndarray:
        """Σ_i (M_i/N_i) Σ_k drift_ik"""
        total = np.zeros(ensemble.d)
        for mass, drift in zip(ensemble.masses, drifts):
            total += mass / drift.shape[0] * drift.sum(axis=0)
        return total

    def em_step(
        self,
        ensemble: ParticleEnsemble,
        spec: SystemSpec,
        potential: PotentialSpec,
        dt: float,
        rng: Optional[np.random.Generator] = None,
        convention: LevyConvention = LevyConvention.GENERATOR,
    ) -> ParticleEnsemble:
        """X ← wrap(X + drift·dt + Lévy 增量)"""
        if dt <= 0:
            raise ValueError("dt 必须为正")
        rng = ensemble.rng if rng is None else rng
        drifts = self.pair_drift(ensemble, spec, potential)
        positions = []
        for i, (X, drift) in enumerate(zip(ensemble.positions, drifts)):
            noise = self.sample_levy_increment(
                spec.alpha, spec.sigma[i], dt, rng, size=X.shape[0], d=X.shape[1], convention=convention
            )
            positions.append(wrap_positions(X + dt * drift + noise, ensemble.L))
        return ParticleEnsemble(positions, ensemble.t + dt, ensemble.L, rng, list(ensemble.masses))

    # ---------- 网格与粒子之间 ----------

    def sample_particles(self, u0: ScalarField, count: int, rng: np.random.Generator) -> np.ndarray:
        """按网格密度抽取格点（逆 CDF），格内均匀抖动"""
        grid = u0.grid
        weights = np.clip(u0.values, 0.0, None).ravel()
        total = weights.sum()
        if total <= 0:
            raise ValueError("初值密度的质量为 0，无法抽样粒子")
        cdf = np.cumsum(weights / total)
        cells = np.searchsorted(cdf, rng.random(count) * cdf[-1], side="right")
        cells = np.minimum(cells, weights.size - 1)
        multi = np.unravel_index(cells, grid.shape)
        positions = np.column_stack([grid.axis[m] for m in multi])
        positions += rng.uniform(-0.5, 0.5, size=positions.shape) * grid.h
        return wrap_positions(positions, grid.L)

    def ensemble_from_fields(
        self, u0: Sequence[ScalarField], counts: Sequence[int], rng: np.random.Generator, t: float = 0.0
    ) -> ParticleEnsemble:
        positions = [self.sample_particles(f, c, rng) for f, c in zip(u0, counts)]
        masses = [f.integral() for f in u0]
        return ParticleEnsemble(positions, t, u0[0].grid.L, rng, masses)

    def empirical_density(
        self, ensemble: ParticleEnsemble, grid: PeriodicGrid, bandwidth: Optional[float] = None
    ) -> List[ScalarField]:
        """最近格点直方图（每粒子质量 M_i/N_i），可选 W_bandwidth 平滑；bandwidth 至少为 2h"""
        if bandwidth is not None and bandwidth < 2.0 * grid.h:
            raise RhoUnresolved(f"平滑宽度 {bandwidth} 小于两倍网格步长 2h={2 * grid.h:.3g}")
        mollifier = fracops_service.build_mollifier(grid, bandwidth) if bandwidth else None
        fields = []
        for mass, X in zip(ensemble.masses, ensemble.positions):
            idx = np.mod(np.rint((X + grid.L) / grid.h).astype(int), grid.N)
            flat = np.ravel_multi_index(tuple(idx.T), grid.shape)
            counts = np.bincount(flat, minlength=int(np.prod(grid.shape))).reshape(grid.shape)
            field = ScalarField(grid, counts * (mass / X.shape[0]) / grid.cell_volume)
            if mollifier is not None:
                field = fracops_service.periodic_convolve(field, mollifier)
            fields.append(field)
        return fields

    def l1_distance(self, a: ScalarField, b: ScalarField) -> float:
        return float(np.sum(np.abs(a.values - b.values)) * a.grid.cell_volume)

    # ---------- 运行 ----------

    def run_particles(
        self,
        ensemble: ParticleEnsemble,
        spec: SystemSpec,
        potential: PotentialSpec,
        dt: float,
        T: float,
        convention: LevyConvention = LevyConvention.GENERATOR,
        snapshot_every: int = 10,
        on_snapshot: Optional[Callable[[int, ParticleEnsemble], None]] = None,
    ) -> ParticleEnsemble:
        """推进到 T，每 snapshot_every 步及终点回调 on_snapshot(step, ensemble)"""
        logger.info(
            f"开始粒子模拟: 物种 {ensemble.n}, 粒子数 {ensemble.counts}, δ_N={potential.delta_N:.4g}, "
            f"dt={dt}, T={T}, 约定 {convention.value}"
        )
        if on_snapshot is not None:
            on_snapshot(0, ensemble)
        step = 0
        horizon_tol = 1e-12 * max(T, 1.0)
        while T - ensemble.t > horizon_tol:
            remaining = T - ensemble.t
            h = remaining if dt >= remaining or remaining - dt < 1e-9 * dt else dt
            ensemble = self.em_step(ensemble, spec, potential, h, convention=convention)
            step += 1
            finished = T - ensemble.t <= horizon_tol
            if on_snapshot is not None and (step % snapshot_every == 0 or finished):
                on_snapshot(step, ensemble)
        logger.info(f"粒子模拟完成: {step} 步, t={ensemble.t:.6g}")
        return ensemble


# 创建全局服务实例
particle_service = ParticleService()
