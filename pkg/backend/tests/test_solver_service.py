"""
测试 IMEX 求解器：稳定项、通量、线性预言、守恒与熵残差
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from scipy import fft as sfft

from core.errors import MissingMollifier, NonFinite, ValidationError
from models.field import PeriodicGrid, ScalarField
from models.simulation import PositivityPolicy, SchemeParams, State
from models.system import SystemSpec
from services.check_suite import band_limited_field
from services.diagnostics_service import diagnostics_service
from services.fracops_service import fracops_service
from services.model_service import model_service
from services.solver_service import solver_service


def two_species_spec(**overrides):
    values = dict(n=2, d=1, alpha=0.5, beta=0.5, sigma=[1.0, 1.0], A=[[2.0, 1.0], [1.0, 2.0]], pi=[1.0, 1.0], m=0.4)
    values.update(overrides)
    return SystemSpec(**values)


def bumps(grid, width=0.6):
    def bump(center):
        return ScalarField.from_function(
            grid, lambda x: np.exp(-(x - center) ** 2 / (2 * width ** 2)) / (width * np.sqrt(2 * np.pi))
        )
    return State(0.0, (bump(-1.0), bump(1.0)))


def scheme(dt, T, N=128, L=8.0, **overrides):
    return SchemeParams(dt=dt, T=T, grid_points=N, half_length=L, adaptive_dt=False, **overrides)


# ---------- 稳定项 ----------

def test_stabilizer_mean_free_and_bounded(rng):
    grid = PeriodicGrid(d=1, N=128, L=4.0)
    mollifier = fracops_service.build_mollifier(grid, 0.3)
    for _ in range(20):
        u = ScalarField(grid, rng.exponential(1.0, grid.shape))
        for rho, table in ((0.3, mollifier), (0.0, None)):
            bounds = solver_service.stabilizer_bounds(u, rho, table)
            assert abs(bounds["mean"]) <= 1e-13 * np.max(u.values) ** 2
            assert bounds["l1_ratio"] <= 2.0


def test_stabilizer_lipschitz_ratio(rng):
    grid = PeriodicGrid(d=1, N=64, L=4.0)
    u = ScalarField(grid, rng.exponential(1.0, grid.shape))
    v = ScalarField(grid, rng.exponential(1.0, grid.shape))
    bounds = solver_service.stabilizer_bounds(u, 0.0, v=v)
    assert np.isfinite(bounds["lipschitz_ratio"])
    assert bounds["lipschitz_ratio"] > 0


def test_stabilizer_requires_mollifier(grid_1d):
    with pytest.raises(MissingMollifier):
        solver_service.eval_stabilizer(ScalarField.constant(grid_1d, 1.0), 0.3)


# ---------- 通量 ----------

def test_flux_vanishes_for_constant_state(grid_2d):
    spec = two_species_spec(d=2)
    state = State(0.0, (ScalarField.constant(grid_2d, 1.0), ScalarField.constant(grid_2d, 2.0)))
    for i in range(2):
        for component in solver_service.cross_diffusion_flux(state, i, spec):
            assert np.max(np.abs(component.values)) <= 1e-12


def test_flux_vanishes_without_interaction():
    grid = PeriodicGrid(d=1, N=64, L=8.0)
    spec = two_species_spec(A=[[0.0, 0.0], [0.0, 0.0]])
    state = bumps(grid)
    for i in range(2):
        (component,) = solver_service.cross_diffusion_flux(state, i, spec)
        assert np.all(component.values == 0.0)


def test_cfl_step_never_exceeds_requested():
    grid = PeriodicGrid(d=1, N=128, L=8.0)
    params = SchemeParams(dt=0.5, T=1.0, grid_points=128, half_length=8.0, cfl=0.4)
    dt = solver_service.cfl_time_step(bumps(grid), two_species_spec(), params)
    assert 0 < dt < 0.5


# ---------- 单步 ----------

def test_linear_fractional_diffusion_matches_oracle(rng):
    """A = 0、κ = 0：每个模精确乘以 (1 + dt σ|k|^{2α})^{-1}"""
    grid = PeriodicGrid(d=1, N=64, L=np.pi)
    params = scheme(0.01, 0.05, N=64, L=np.pi)
    for alpha in (0.3, 0.5, 0.8):
        spec = SystemSpec(n=1, d=1, alpha=alpha, beta=0.5, sigma=[1.0], A=[[0.0]], pi=[1.0], m=0.4)
        u0 = band_limited_field(grid, rng)
        state = State(0.0, (u0,))
        for k in range(5):
            state, _ = solver_service.imex_step(state, spec, params, step=k)
        factor = (1.0 + params.dt * grid.multiplier(2.0 * alpha)) ** (-5)
        expected = sfft.ifftn(u0.hat() * factor).real
        np.testing.assert_allclose(state.u[0].values, expected, atol=1e-12)


def test_linear_decay_is_first_order_in_dt():
    """cos 2x 的衰减向 e^{-σ|k|^{2α}T} 一阶收敛：dt 减半误差减半，外推后误差显著更小"""
    grid = PeriodicGrid(d=1, N=64, L=np.pi)
    u0 = ScalarField.from_function(grid, lambda x: np.cos(2 * x))
    T = 0.5
    for alpha in (0.3, 0.5, 0.8):
        spec = SystemSpec(n=1, d=1, alpha=alpha, beta=0.5, sigma=[1.0], A=[[0.0]], pi=[1.0], m=0.4)
        exact = np.exp(-(2.0 ** (2 * alpha)) * T) * u0.values
        finals = []
        for dt in (0.01, 0.005):
            params = scheme(dt, T, N=64, L=np.pi)
            state = State(0.0, (u0,))
            for k in range(int(round(T / dt))):
                state, _ = solver_service.imex_step(state, spec, params, step=k)
            finals.append(state.u[0].values)
        coarse, fine = (float(np.max(np.abs(v - exact))) for v in finals)
        extrapolated = float(np.max(np.abs(2.0 * finals[1] - finals[0] - exact)))
        assert 1.8 < coarse / fine < 2.2
        assert extrapolated < 0.05 * fine


def test_constant_state_is_stationary():
    grid = PeriodicGrid(d=1, N=64, L=8.0)
    state = State(0.0, (ScalarField.constant(grid, 0.7), ScalarField.constant(grid, 1.3)))
    params = scheme(0.01, 0.1, N=64)
    new_state, report = solver_service.imex_step(state, two_species_spec(), params)
    for old, new in zip(state.u, new_state.u):
        np.testing.assert_allclose(new.values, old.values, atol=1e-14)
    assert report.step == 1
    assert report.t == pytest.approx(0.01)


def test_step_conserves_mass_with_stabilizer():
    grid = PeriodicGrid(d=1, N=128, L=8.0)
    params = scheme(0.001, 0.01, kappa=0.1, rho=0.5)
    spec = two_species_spec()
    context = solver_service.build_context(grid, spec, params)
    state = bumps(grid)
    mass0, _ = diagnostics_service.conserved_quantities(state, spec.m)
    for k in range(10):
        state, report = solver_service.imex_step(state, spec, params, context, step=k)
    np.testing.assert_allclose(report.mass, mass0, rtol=1e-12)


def test_regularized_step_runs_with_kernel():
    grid = PeriodicGrid(d=1, N=128, L=8.0)
    params = scheme(0.001, 0.005, eps=0.4)
    spec = two_species_spec()
    context = solver_service.build_context(grid, spec, params)
    assert context.kernel is not None and context.half_kernel is not None
    state, report = solver_service.imex_step(bumps(grid), spec, params, context)
    assert all(np.isfinite(m) for m in report.mass)


def test_blow_up_raises_with_last_good_state():
    # σ < 0 使 |k| = 2 的模分母为 0
    grid = PeriodicGrid(d=1, N=64, L=np.pi)
    spec = SystemSpec(n=1, d=1, alpha=0.5, beta=0.5, sigma=[-1.0], A=[[0.0]], pi=[1.0], m=0.4)
    state = State(0.0, (ScalarField.from_function(grid, lambda x: 1.0 + np.cos(2 * x)),))
    with pytest.raises(NonFinite) as info:
        solver_service.imex_step(state, spec, scheme(0.5, 1.0, N=64, L=np.pi), step=3)
    assert info.value.last_good_state is state
    assert info.value.step == 3


def test_clamp_policy_restores_nonnegativity():
    grid = PeriodicGrid(d=1, N=64, L=8.0)
    values = np.zeros(grid.shape)
    values[32] = 1.0 / grid.h
    state = State(0.0, (ScalarField(grid, values),))
    spec = SystemSpec(n=1, d=1, alpha=0.5, beta=0.5, sigma=[1.0], A=[[5.0]], pi=[1.0], m=0.4)
    params = scheme(0.01, 0.1, N=64, positivity_policy=PositivityPolicy.CLAMP)
    new_state, report = solver_service.imex_step(state, spec, params)
    assert new_state.u[0].values.min() >= 0.0
    assert report.mass[0] == pytest.approx(1.0, rel=1e-12)


# ---------- 运行 ----------

def test_run_simulation_snapshots_and_observer():
    grid = PeriodicGrid(d=1, N=128, L=8.0)
    spec = two_species_spec()
    params = scheme(0.001, 0.02, snapshot_every=5)
    seen = []
    trajectory = solver_service.run_simulation(
        bumps(grid), spec, params, model_service.entropy_structure(spec),
        observer=lambda report, snapshot: seen.append((report.step, snapshot is not None)),
    )
    assert trajectory.completed
    assert trajectory.snapshot_steps == [0, 5, 10, 15, 20]
    assert len(trajectory.reports) == 21
    assert trajectory.reports[-1].t == pytest.approx(0.02, abs=1e-12)
    assert [step for step, snap in seen if snap] == [0, 5, 10, 15, 20]
    assert all(r.entropy is not None for r in trajectory.reports)
    assert trajectory.reports[0].residual is None
    assert all(r.residual is not None for r in trajectory.reports[1:])


def test_run_is_deterministic():
    grid = PeriodicGrid(d=1, N=64, L=8.0)
    spec = two_species_spec()
    params = scheme(0.002, 0.02, N=64)
    a = solver_service.run_simulation(bumps(grid), spec, params)
    b = solver_service.run_simulation(bumps(grid), spec, params)
    for x, y in zip(a.final_state.u, b.final_state.u):
        assert np.array_equal(x.values, y.values)


def test_run_simulation_rejects_invalid_initial_data():
    grid = PeriodicGrid(d=1, N=64, L=8.0)
    state = State(0.0, (ScalarField.constant(grid, 1.0), ScalarField.constant(grid, -1.0)))
    with pytest.raises(ValidationError) as info:
        solver_service.run_simulation(state, two_species_spec(), scheme(0.01, 0.05, N=64))
    assert "initial_not_nonnegative" in [issue.code for issue in info.value.issues]


def test_adaptive_run_computes_transport_once_per_step(monkeypatch):
    grid = PeriodicGrid(d=1, N=64, L=8.0)
    params = SchemeParams(dt=0.01, T=0.05, grid_points=64, half_length=8.0, adaptive_dt=True)
    calls = []
    original = solver_service.transport_fields

    def counting(*args, **kwargs):
        calls.append(1)
        return original(*args, **kwargs)

    monkeypatch.setattr(solver_service, "transport_fields", counting)
    trajectory = solver_service.run_simulation(bumps(grid), two_species_spec(), params)
    assert trajectory.completed
    assert len(calls) == len(trajectory.reports) - 1


def test_constant_state_has_zero_residuals():
    grid = PeriodicGrid(d=1, N=64, L=8.0)
    spec = two_species_spec()
    state = State(0.0, (ScalarField.constant(grid, 0.5), ScalarField.constant(grid, 2.0)))
    trajectory = solver_service.run_simulation(
        state, spec, scheme(0.01, 0.05, N=64), model_service.entropy_structure(spec)
    )
    for report in trajectory.reports[1:]:
        assert abs(report.residual) <= 1e-12
        assert report.D_frac == pytest.approx(0.0, abs=1e-20)
        assert report.D_cross == pytest.approx(0.0, abs=1e-20)


def test_pure_fractional_heat_flow_dissipates_entropy():
    """A = 0：熵严格下降，单步残差不为正"""
    grid = PeriodicGrid(d=1, N=128, L=8.0)
    spec = SystemSpec(n=1, d=1, alpha=0.5, beta=0.5, sigma=[1.0], A=[[0.0]], pi=[1.0], m=0.4)
    u0 = State(0.0, (ScalarField.from_function(grid, lambda x: 0.5 + np.exp(-x ** 2)),))
    trajectory = solver_service.run_simulation(
        u0, spec, scheme(1e-4, 1e-3), model_service.entropy_structure(spec)
    )
    entropies = [r.entropy for r in trajectory.reports]
    assert all(b < a for a, b in zip(entropies, entropies[1:]))
    assert max(r.residual for r in trajectory.reports[1:]) <= 1e-10


@pytest.mark.slow
def test_long_run_conserves_mass_and_entropy_inequality():
    """N = 256、2000 步：质量相对漂移 ≤ 1e-11，时间积分残差 ≤ 1e-6·|H(0)|"""
    grid = PeriodicGrid(d=1, N=256, L=8.0)
    spec = two_species_spec()
    params = scheme(0.001, 2.0, N=256, snapshot_every=500)
    trajectory = solver_service.run_simulation(bumps(grid), spec, params, model_service.entropy_structure(spec))

    assert len(trajectory.reports) == 2001
    first, last = trajectory.reports[0].mass, trajectory.reports[-1].mass
    for a, b in zip(first, last):
        assert abs(b - a) / a <= 1e-11

    series = diagnostics_service.entropy_inequality_residual(trajectory)
    assert series.integrated_passed
    assert series.integrated_residual <= 1e-6 * abs(trajectory.reports[0].entropy)


@pytest.mark.slow
def test_residual_shrinks_when_dt_halves():
    grid = PeriodicGrid(d=1, N=256, L=8.0)
    spec = two_species_spec()
    structure = model_service.entropy_structure(spec)
    worst = []
    for dt in (0.004, 0.002):
        trajectory = solver_service.run_simulation(bumps(grid), spec, scheme(dt, 0.2, N=256), structure)
        residuals = diagnostics_service.entropy_inequality_residual(trajectory).residuals
        worst.append(max(abs(r) for r in residuals))
    assert 0.2 < worst[1] / worst[0] < 0.8
