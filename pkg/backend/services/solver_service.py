"""
求解器服务 - 极限系统与近似系统的 IMEX 伪谱时间推进
"""

import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy import fft as sfft

from core.errors import ClampWarning, MissingMollifier, NonAdmissible, NonFinite, ValidationError
from models.field import KernelTable, PeriodicGrid, ScalarField
from models.simulation import (
    PositivityPolicy, SchemeParams, State, StepReport, Trajectory
)
from models.system import SymmetrizedSystem, SystemSpec
from services.diagnostics_service import diagnostics_service
from services.fracops_service import fracops_service
from services.model_service import model_service

Observer = Callable[[StepReport, Optional[State]], None]


def gaussian_weight(grid: PeriodicGrid) -> np.ndarray:
    """e^{-|x|²}/π^{d/2}，在网格上重归一化为单位质量"""
    weight = np.exp(-grid.radius ** 2) / np.pi ** (grid.d / 2.0)
    return weight / (weight.sum() * grid.cell_volume)


@dataclass
class StepContext:
    """一次运行中不变的核表与乘子"""
    grid: PeriodicGrid
    spec: SystemSpec
    params: SchemeParams
    half_kernel: Optional[KernelTable] = None
    kernel: Optional[KernelTable] = None
    mollifier: Optional[KernelTable] = None
    structure: Optional[SymmetrizedSystem] = None
    pi: Optional[np.ndarray] = None

    @property
    def lam(self) -> Optional[float]:
        return None if self.structure is None else self.structure.lambda_min

    def denominators(self, dt: float) -> List[np.ndarray]:
        """1 + dt(κ|k|² + σ_i|k|^{2α})"""
        k2 = self.grid.k_abs ** 2
        frac = self.grid.multiplier(2.0 * self.spec.alpha)
        return [1.0 + dt * (self.params.kappa * k2 + sigma * frac) for sigma in self.spec.sigma]


class SolverService:
    """IMEX 伪谱求解器"""

    # ---------- 上下文 ----------

    def build_context(
        self,
        grid: PeriodicGrid,
        spec: SystemSpec,
        params: SchemeParams,
        structure: Optional[SymmetrizedSystem] = None,
    ) -> StepContext:
        half_kernel = kernel = mollifier = None
        if params.eps > 0:
            half_kernel, kernel = fracops_service.build_regularized_riesz(grid, spec.beta, params.eps)
        if params.kappa > 0 and params.rho > 0:
            mollifier = fracops_service.build_mollifier(grid, params.rho)
        elif params.kappa == 0 and params.rho > 0:
            logger.info("κ = 0：忽略 ρ，求解极限系统")
        pi = None
        if structure is not None:
            pi = spec.pi_vector
            if pi is None:
                pi = model_service.find_invariant_measure(spec.matrix)
        return StepContext(
            grid=grid, spec=spec, params=params,
            half_kernel=half_kernel, kernel=kernel, mollifier=mollifier,
            structure=structure, pi=pi,
        )

    # ---------- 稳定项 ----------

    def eval_stabilizer(
        self, u: ScalarField, rho: float, mollifier: Optional[KernelTable] = None
    ) -> ScalarField:
        """g_ρ[u] = u(W_ρ*u) - G·∫u(W_ρ*u)，ρ = 0 时为 g_0[u] = u² - G·∫u²；网格均值严格为 0"""
        return u.with_values(self._stabilizer_values(u, rho, mollifier))

    def _stabilizer_values(
        self, u: ScalarField, rho: float, mollifier: Optional[KernelTable] = None
    ) -> np.ndarray:
        if rho > 0:
            if mollifier is None:
                raise MissingMollifier(f"ρ={rho} > 0 需要磨光核表")
            product = u.values * fracops_service.periodic_convolve(u, mollifier).values
        else:
            product = u.values ** 2
        grid = u.grid
        total = float(product.sum() * grid.cell_volume)
        return product - gaussian_weight(grid) * total

    def stabilizer_bounds(
        self,
        u: ScalarField,
        rho: float,
        mollifier: Optional[KernelTable] = None,
        v: Optional[ScalarField] = None,
    ) -> Dict[str, float]:
        """‖g[u]‖₁/‖u‖₂²、‖g[u]‖₂/‖u‖₂² 与（给定 v 时）Lipschitz 比 ‖g[u]-g[v]‖₂/(‖u+v‖₂‖u-v‖₂)"""
        h_d = u.grid.cell_volume
        g = self.eval_stabilizer(u, rho, mollifier).values
        u_sq = float(np.sum(u.values ** 2) * h_d)
        out = {
            "l1_ratio": float(np.sum(np.abs(g)) * h_d) / u_sq if u_sq > 0 else 0.0,
            "l2_ratio": float(np.sqrt(np.sum(g ** 2) * h_d)) / u_sq if u_sq > 0 else 0.0,
            "mean": float(g.mean()),
        }
        if v is not None:
            gv = self.eval_stabilizer(v, rho, mollifier).values
            diff = float(np.sqrt(np.sum((g - gv) ** 2) * h_d))
            denom = float(np.sqrt(np.sum((u.values + v.values) ** 2) * h_d)
                          * np.sqrt(np.sum((u.values - v.values) ** 2) * h_d))
            out["lipschitz_ratio"] = diff / denom if denom > 0 else 0.0
        return out

    # ---------- 通量 ----------

    def _dealias(self, values: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
        return sfft.ifftn(sfft.fftn(values) * grid.dealias_mask).real

    def transport_fields(
        self, state: State, spec: SystemSpec, kernel: Optional[KernelTable] = None
    ) -> List[List[np.ndarray]]:
        """F_j = ∇(K^(ε)*u_j)（ε > 0）或 ∇(-Δ)^{(β-1)/2}u_j（ε = 0）"""
        fields = []
        for u_j in state.u:
            if kernel is not None:
                smoothed = fracops_service.periodic_convolve(u_j, kernel)
                grad = fracops_service.spectral_gradient(smoothed)
            else:
                grad = fracops_service.nonlocal_gradient(u_j, spec.beta)
            fields.append([g.values for g in grad])
        return fields

    def _velocity(self, i: int, spec: SystemSpec, transport: List[List[np.ndarray]]) -> List[np.ndarray]:
        A = spec.matrix
        grid_shape = transport[0][0].shape
        velocity = [np.zeros(grid_shape) for _ in range(spec.d)]
        for j, F_j in enumerate(transport):
            if A[i, j] == 0.0:
                continue
            for axis in range(spec.d):
                velocity[axis] += A[i, j] * F_j[axis]
        return velocity

    def cross_diffusion_flux(
        self,
        state: State,
        i: int,
        spec: SystemSpec,
        kernel: Optional[KernelTable] = None,
        dealias: bool = True,
        transport: Optional[List[List[np.ndarray]]] = None,
    ) -> List[ScalarField]:
        """Σ_j a_ij (u_i)_+ F_j，乘积在物理空间形成"""
        if transport is None:
            transport = self.transport_fields(state, spec, kernel)
        return [ScalarField(state.grid, c) for c in self._flux_arrays(state, i, spec, dealias, transport)]

    def _flux_arrays(
        self, state: State, i: int, spec: SystemSpec, dealias: bool, transport: List[List[np.ndarray]]
    ) -> List[np.ndarray]:
        grid = state.grid
        velocity = self._velocity(i, spec, transport)
        positive = np.clip(state.u[i].values, 0.0, None)
        if dealias:
            positive = self._dealias(positive, grid)
            velocity = [self._dealias(v, grid) for v in velocity]
        return [positive * v for v in velocity]

    def cfl_time_step(
        self, state: State, spec: SystemSpec, params: SchemeParams,
        transport: Optional[List[List[np.ndarray]]] = None, kernel: Optional[KernelTable] = None,
    ) -> float:
        """dt ≤ C_cfl·h / max_i ‖Σ_j a_ij F_j‖_∞"""
        if transport is None:
            transport = self.transport_fields(state, spec, kernel)
        speed = 0.0
        for i in range(state.n):
            for component in self._velocity(i, spec, transport):
                speed = max(speed, float(np.max(np.abs(component))))
        if speed == 0.0:
            return params.dt
        return min(params.dt, params.cfl * state.grid.h / speed)

    # ---------- 单步 ----------

    def imex_step(
        self,
        state: State,
        spec: SystemSpec,
        params: SchemeParams,
        context: Optional[StepContext] = None,
        dt: Optional[float] = None,
        step: int = 0,
        transport: Optional[List[List[np.ndarray]]] = None,
    ) -> Tuple[State, StepReport]:
        """显式通量与稳定项 + 逐模隐式线性扩散

        transport 为本状态已算好的输运场（如 CFL 步长估计时的结果），缺省时现算。
        """
        grid = state.grid
        if context is None:
            context = self.build_context(grid, spec, params)

        if transport is None:
            transport = self.transport_fields(state, spec, context.kernel)
        if dt is None:
            dt = self.cfl_time_step(state, spec, params, transport) if params.adaptive_dt else params.dt
        denominators = context.denominators(dt)

        new_values = []
        # 爆破时允许溢出，随后统一以 NonFinite 报告
        with np.errstate(all="ignore"):
            for i, field in enumerate(state.u):
                flux = self._flux_arrays(state, i, spec, params.dealias, transport)
                explicit_hat = fracops_service.spectral_divergence_hat(flux, grid)
                if params.dealias:
                    explicit_hat = explicit_hat * grid.dealias_mask
                if params.kappa > 0:
                    rho = params.rho
                    g = self._stabilizer_values(field, rho, context.mollifier if rho > 0 else None)
                    explicit_hat = explicit_hat - params.kappa * sfft.fftn(g)
                u_hat = (field.hat() + dt * explicit_hat) / denominators[i]
                new_values.append(sfft.ifftn(u_hat).real)

        if not all(np.all(np.isfinite(v)) for v in new_values):
            raise NonFinite(
                f"第 {step + 1} 步出现非有限值 (t={state.t + dt:.6g})",
                last_good_state=state, step=step,
            )

        clamp_correction = 0.0
        if params.positivity_policy == PositivityPolicy.CLAMP:
            for i, values in enumerate(new_values):
                if values.min() >= 0:
                    continue
                mass = values.sum()
                clipped = np.clip(values, 0.0, None)
                if clipped.sum() > 0:
                    clipped *= mass / clipped.sum()
                clamp_correction += float(np.sum(np.abs(clipped - values)) * grid.cell_volume)
                new_values[i] = clipped
            if clamp_correction > 0:
                logger.debug(f"第 {step + 1} 步截断负值，修正量 {clamp_correction:.3e}")

        new_state = State.from_arrays(state.t + dt, grid, new_values)
        mass, moment = diagnostics_service.conserved_quantities(new_state, spec.m)
        report = StepReport(
            step=step + 1,
            t=new_state.t,
            dt=dt,
            mass=mass.tolist(),
            minimum=[float(v.min()) for v in new_values],
            moment=moment.tolist(),
            clamp_correction=clamp_correction,
        )
        return new_state, report

    # ---------- 运行 ----------

    def _with_entropy(self, report: StepReport, state: State, context: StepContext) -> StepReport:
        if context.structure is None:
            return report
        try:
            production = diagnostics_service.approximate_entropy_production(
                state, context.spec, context.lam, context.params, context.half_kernel, context.pi
            )
        except NonAdmissible as e:
            logger.debug(f"t={state.t:.6g} 熵诊断跳过: {e}")
            return report.model_copy(update={"entropy_admissible": False})
        return report.model_copy(update={
            "entropy": production.H,
            "D_frac": production.D_frac,
            "D_cross": production.D_cross,
            "D_kappa": production.D_kappa if context.params.kappa > 0 else None,
        })

    def _with_residual(self, report: StepReport, previous: StepReport, midpoint: bool) -> StepReport:
        if report.entropy is None or previous.entropy is None:
            return report

        def production(r: StepReport) -> float:
            return r.D_frac + r.D_cross + (r.D_kappa or 0.0)

        rate = 0.5 * (production(previous) + production(report)) if midpoint else production(previous)
        return report.model_copy(update={"residual": report.entropy - previous.entropy + report.dt * rate})

    def initial_report(self, state: State, spec: SystemSpec) -> StepReport:
        mass, moment = diagnostics_service.conserved_quantities(state, spec.m)
        return StepReport(
            step=0, t=state.t, dt=0.0,
            mass=mass.tolist(),
            minimum=[float(f.values.min()) for f in state.u],
            moment=moment.tolist(),
        )

    def run_simulation(
        self,
        u0: State,
        spec: SystemSpec,
        params: SchemeParams,
        structure: Optional[SymmetrizedSystem] = None,
        observer: Optional[Observer] = None,
    ) -> Trajectory:
        """推进到 T；每步记录诊断，每 snapshot_every 步及终点保存快照

        observer(report, snapshot_or_None) 在每步之后调用。
        初值与系数先经 validate_system 校验，不通过时抛出 ValidationError。
        出现 NonFinite 时异常携带已完成的部分轨迹 (e.trajectory)。
        """
        validation = model_service.validate_system(spec, list(u0.u))
        if not validation.ok:
            raise ValidationError(validation.summary(), issues=validation.issues)

        grid = u0.grid
        context = self.build_context(grid, spec, params, structure)
        if params.kappa == 0 and params.rho > 0:
            logger.warning("κ = 0 时 ρ 不起作用")

        trajectory = Trajectory()
        state = u0
        report = self._with_entropy(self.initial_report(state, spec), state, context)
        trajectory.reports.append(report)
        trajectory.snapshots.append(state)
        trajectory.snapshot_steps.append(0)
        if observer is not None:
            observer(report, state)

        logger.info(
            f"开始模拟: n={spec.n}, d={spec.d}, N={grid.N}, L={grid.L}, dt={params.dt}, T={params.T}, "
            f"κ={params.kappa}, ε={params.eps}, ρ={params.rho}"
        )

        step = 0
        clamp_warned = False
        horizon_tol = 1e-12 * max(params.T, 1.0)
        while params.T - state.t > horizon_tol:
            remaining = params.T - state.t
            dt = params.dt
            transport = None
            if params.adaptive_dt:
                transport = self.transport_fields(state, spec, context.kernel)
                dt = self.cfl_time_step(state, spec, params, transport)
            if dt >= remaining or remaining - dt < 1e-9 * dt:
                dt = remaining
            try:
                new_state, new_report = self.imex_step(
                    state, spec, params, context, dt=dt, step=step, transport=transport
                )
            except NonFinite as e:
                logger.error(f"模拟中止: {e}")
                e.trajectory = trajectory
                raise

            if new_report.clamp_correction > 0 and not clamp_warned:
                clamp_warned = True
                message = f"第 {step + 1} 步起使用截断策略恢复非负性"
                logger.warning(message)
                warnings.warn(message, ClampWarning, stacklevel=2)

            new_report = self._with_entropy(new_report, new_state, context)
            new_report = self._with_residual(new_report, report, params.midpoint_residual)
            step += 1
            state, report = new_state, new_report
            trajectory.reports.append(report)

            snapshot = None
            finished = params.T - state.t <= horizon_tol
            if step % params.snapshot_every == 0 or finished:
                snapshot = state
                trajectory.snapshots.append(state)
                trajectory.snapshot_steps.append(step)
            if observer is not None:
                observer(report, snapshot)

        trajectory.completed = True
        logger.info(f"模拟完成: {step} 步, t={state.t:.6g}")
        return trajectory


# 创建全局服务实例
solver_service = SolverService()
