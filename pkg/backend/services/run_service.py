"""
运行编排服务 - simulate / particles / sweep 三个命令的实现
"""

import asyncio
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from core.config import settings
from core.errors import NonFinite, ValidationError
from models.run_config import RunConfig, SweepParameter
from models.simulation import SchemeParams, State, Trajectory
from models.system import ValidationIssue
from services.config_parser import config_parser
from services.diagnostics_service import diagnostics_service
from services.model_service import model_service
from services.particle_service import default_width, particle_service
from services.snapshot_io import (
    SnapshotObserver, list_snapshots, read_snapshot, snapshot_name, write_manifest, write_snapshot
)
from services.solver_service import solver_service


@dataclass
class SimulationOutcome:
    """一次 PDE 运行的结果摘要"""
    directory: str
    trajectory: Trajectory
    residual_max: Optional[float]
    integrated_residual: Optional[float]
    mass_drift: float

    @property
    def final_state(self) -> State:
        return self.trajectory.final_state


class RunService:
    """命令行各子命令的编排"""

    def output_directory(self, config: RunConfig, out: Optional[str], command: str) -> str:
        """--out 优先，其次配置 [output] directory，最后 DEFAULT_OUTPUT_DIR/命令名"""
        return out or config.output.directory or os.path.join(settings.DEFAULT_OUTPUT_DIR, command)

    def design_selections(self, config: RunConfig) -> Dict[str, Any]:
        """写入清单的设计选择"""
        scheme = config.scheme
        return {
            "domain": "periodic box [-L, L)^d",
            "time_integrator": "IMEX first order (implicit linear diffusion, explicit transport)",
            "riesz_cutoff": "quintic-hermite" if scheme.eps > 0 else "exact multiplier",
            "stabilizer": ("g_rho" if scheme.rho > 0 else "g_0") if scheme.kappa > 0 else "none",
            "limit_system": scheme.kappa == 0,
            "positivity_policy": scheme.positivity_policy.value,
            "positive_part": "flux only",
            "dealias": "2/3 rule" if scheme.dealias else "off",
            "adaptive_dt": scheme.adaptive_dt,
            "cfl": scheme.cfl,
            "residual_time_stamp": "midpoint" if scheme.midpoint_residual else "beginning-of-step",
            "dissipation_constant": 4,
            "moment_weight": "box coordinates",
            "log_floor": settings.LOG_FLOOR,
            "levy_convention": config.particles.convention.value,
            "drift_normalization": "per-species 1/N_j",
        }

    # ---------- simulate ----------

    def simulate(self, config: RunConfig, directory: str, initial: Optional[State] = None) -> SimulationOutcome:
        """在 directory 下完成一次 PDE 运行（诊断 CSV、快照与清单）"""
        os.makedirs(directory, exist_ok=True)
        spec = config.system
        structure = model_service.entropy_structure(spec)
        state0 = initial if initial is not None else config_parser.build_initial_state(config)
        selections = self.design_selections(config)
        write_manifest(directory, config, "simulate", selections)

        observer = SnapshotObserver(directory)
        try:
            trajectory = solver_service.run_simulation(state0, spec, config.scheme, structure, observer)
        except NonFinite as e:
            observer.close()
            if e.last_good_state is not None:
                write_snapshot(os.path.join(directory, snapshot_name(e.step or 0)), e.last_good_state)
            raise
        observer.close()

        residual_max = integrated = None
        if structure is not None and all(r.entropy is not None for r in trajectory.reports):
            series = diagnostics_service.entropy_inequality_residual(
                trajectory, midpoint=config.scheme.midpoint_residual
            )
            residual_max = max((abs(r) for r in series.residuals), default=0.0)
            integrated = series.integrated_residual
            logger.info(
                f"熵不等式: 最大单步残差 {series.max_residual:.3e} (tol {series.tolerance:.3e}), "
                f"积分残差 {series.integrated_residual:.3e}"
            )

        first, last = trajectory.reports[0].mass, trajectory.reports[-1].mass
        drift = max(abs(b - a) / max(abs(a), 1e-300) for a, b in zip(first, last))
        write_manifest(directory, config, "simulate", selections, extra={"summary": {
            "steps": len(trajectory.reports) - 1,
            "final_time": trajectory.reports[-1].t,
            "relative_mass_drift": drift,
            "entropy_structure": None if structure is None else structure.model_dump(),
            "residual_max_abs": residual_max,
            "integrated_residual": integrated,
        }})
        logger.info(f"运行目录 {directory}: 质量相对漂移 {drift:.3e}")
        return SimulationOutcome(directory, trajectory, residual_max, integrated, drift)

    def cmd_simulate(self, config: RunConfig, out: Optional[str] = None) -> int:
        self.simulate(config, self.output_directory(config, out, "simulate"))
        return 0

    # ---------- particles ----------

    def cmd_particles(
        self,
        config: RunConfig,
        out: Optional[str] = None,
        seed: Optional[int] = None,
        compare: Optional[str] = None,
    ) -> int:
        """粒子系统运行；给出 compare 时与 PDE 运行目录逐时刻比较 L¹ 距离"""
        directory = self.output_directory(config, out, "particles")
        os.makedirs(directory, exist_ok=True)
        spec, scheme, settings_p = config.system, config.scheme, config.particles
        seed = seed if seed is not None else settings_p.seed
        if seed is None:
            raise ValidationError("粒子运行必须给出 seed", issues=[ValidationIssue(
                code="seed_missing", message="粒子运行必须给出 seed"
            )])
        if not 0 <= seed < 2 ** 64:
            raise ValidationError(f"seed={seed} 不是 64 位无符号整数", issues=[ValidationIssue(
                code="seed_range", message="seed 必须位于 [0, 2^64)"
            )])

        rng = np.random.default_rng(seed)
        grid = scheme.grid(spec.d)
        state0 = config_parser.build_initial_state(config)
        counts = settings_p.count if len(settings_p.count) == spec.n else settings_p.count[:1] * spec.n
        ensemble = particle_service.ensemble_from_fields(list(state0.u), counts, rng)
        delta = settings_p.delta or default_width(min(counts), spec.d)
        potential = particle_service.build_potential_table(grid.L, spec.beta, spec.d, delta)
        dt = settings_p.dt or scheme.dt
        T = settings_p.T or scheme.T
        every = settings_p.snapshot_every or scheme.snapshot_every
        bandwidth = settings_p.bandwidth

        pde_snapshots: Dict[float, str] = {}
        if compare:
            pde_snapshots = {read_snapshot(p).t: p for p in list_snapshots(compare)}
            logger.info(f"比较目录 {compare}: {len(pde_snapshots)} 个 PDE 快照")
        diagnostics: List[Dict[str, float]] = []
        comparisons: List[Dict[str, float]] = []

        def on_snapshot(step: int, current) -> None:
            densities = particle_service.empirical_density(current, grid, bandwidth)
            write_snapshot(os.path.join(directory, snapshot_name(step)), State(current.t, tuple(densities)))
            row: Dict[str, float] = {"step": step, "t": current.t}
            for i, field in enumerate(densities, start=1):
                row[f"mass_{i}"] = field.integral()
                row[f"count_{i}"] = current.counts[i - 1]
            diagnostics.append(row)

            match = next((p for t, p in pde_snapshots.items() if abs(t - current.t) <= 1e-9 * max(1.0, T)), None)
            if match is not None:
                pde = read_snapshot(match)
                entry: Dict[str, float] = {"step": step, "t": current.t}
                for i, (emp, ref) in enumerate(zip(densities, pde.u), start=1):
                    entry[f"l1_{i}"] = particle_service.l1_distance(emp, ref)
                comparisons.append(entry)

        write_manifest(directory, config, "particles", self.design_selections(config), extra={
            "seed": seed, "delta_N": delta, "counts": counts, "bandwidth": bandwidth,
            "compare_reference": "unsmoothed PDE snapshot",
        })
        particle_service.run_particles(
            ensemble, spec, potential, dt, T, settings_p.convention, every, on_snapshot
        )

        pd.DataFrame(diagnostics).to_csv(
            os.path.join(directory, "particle_diagnostics.csv"), index=False, float_format="%.17g"
        )
        if compare:
            path = os.path.join(directory, "compare.csv")
            frame = pd.DataFrame(comparisons)
            frame.to_csv(path, mode="a", header=not os.path.exists(path), index=False, float_format="%.17g")
            if comparisons:
                logger.info(f"终点 L¹ 距离: {comparisons[-1]}")
            else:
                logger.warning("没有与 PDE 快照时刻匹配的粒子快照")
        return 0

    # ---------- sweep ----------

    def geometric_ladder(self, start: float, rungs: int = 4, ratio: float = 0.5) -> List[float]:
        return [start * ratio ** k for k in range(rungs)]

    def _rung_config(self, config: RunConfig, parameter: SweepParameter, value: float) -> RunConfig:
        values = config.scheme.model_dump()
        values[parameter.value] = value
        if parameter == SweepParameter.DT:
            values["adaptive_dt"] = False
        return config.with_updates(scheme=SchemeParams(**values))

    async def _sweep(
        self, config: RunConfig, parameter: SweepParameter, ladder: Sequence[float], directory: str, jobs: int
    ) -> List[SimulationOutcome]:
        semaphore = asyncio.Semaphore(jobs)
        initial = config_parser.build_initial_state(config)

        async def run_rung(k: int, value: float) -> SimulationOutcome:
            async with semaphore:
                rung = self._rung_config(config, parameter, value)
                rung_dir = os.path.join(directory, f"{parameter.value}_{k}")
                logger.info(f"扫描 {parameter.value}={value:g} → {rung_dir}")
                return await asyncio.to_thread(self.simulate, rung, rung_dir, initial)

        return await asyncio.gather(*(run_rung(k, v) for k, v in enumerate(ladder)))

    def sweep_table(
        self, parameter: SweepParameter, ladder: Sequence[float], outcomes: Sequence[SimulationOutcome]
    ) -> pd.DataFrame:
        rows = []
        for k, (value, outcome) in enumerate(zip(ladder, outcomes)):
            diff = float("nan")
            if k + 1 < len(outcomes):
                a = outcome.final_state.stack()
                b = outcomes[k + 1].final_state.stack()
                diff = float(np.sqrt(np.sum((a - b) ** 2) * outcome.final_state.grid.cell_volume))
            rows.append({
                "rung": k,
                parameter.value: value,
                "diff_l2": diff,
                "residual_max": np.nan if outcome.residual_max is None else outcome.residual_max,
                "integrated_residual": np.nan if outcome.integrated_residual is None else outcome.integrated_residual,
                "mass_drift": outcome.mass_drift,
                "steps": len(outcome.trajectory.reports) - 1,
            })
        return pd.DataFrame(rows)

    def cmd_sweep(
        self,
        config: RunConfig,
        parameter: SweepParameter,
        ladder: Optional[Sequence[float]] = None,
        out: Optional[str] = None,
        jobs: Optional[int] = None,
    ) -> int:
        """沿参数阶梯重复 simulate，写出相邻终态差的 sweep.csv"""
        directory = self.output_directory(config, out, "sweep")
        jobs = max(1, jobs or settings.MAX_JOBS)
        if not ladder:
            start = getattr(config.scheme, parameter.value)
            if start <= 0:
                raise ValidationError(f"{parameter.value} 的起始值必须为正才能构造几何阶梯", issues=[
                    ValidationIssue(code="sweep_ladder", message="几何阶梯起点必须为正")
                ])
            ladder = self.geometric_ladder(start)
        ladder = [float(v) for v in ladder]
        os.makedirs(directory, exist_ok=True)

        outcomes = asyncio.run(self._sweep(config, parameter, ladder, directory, jobs))
        table = self.sweep_table(parameter, ladder, outcomes)
        table.to_csv(os.path.join(directory, "sweep.csv"), index=False, float_format="%.17g")
        write_manifest(directory, config, "sweep", self.design_selections(config), extra={
            "parameter": parameter.value, "ladder": ladder, "jobs": jobs,
        })
        logger.info(f"扫描完成:\n{table.to_string(index=False)}")
        return 0


# 创建全局服务实例
run_service = RunService()
