"""
测试分数阶算子：谱形式、格点求积、非局部梯度、Riesz 核与磨光核
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from core.errors import GridMismatch, InvalidCutoff, RhoUnresolved
from models.field import KernelKind, KernelTable, PeriodicGrid, ScalarField
from services.check_suite import band_limited_field
from services.fracops_service import fracops_service, fractional_laplacian_constant


def test_constant_two_dimensional_half():
    assert fractional_laplacian_constant(2, 0.5) == pytest.approx(1.0 / (2.0 * np.pi), abs=1e-13)


def test_constant_field_maps_to_zero(grid_2d):
    f = ScalarField.constant(grid_2d, 3.5)
    out = fracops_service.frac_laplacian_spectral(f, 0.4)
    assert np.max(np.abs(out.values)) <= 1e-12


def test_cosine_mode_is_eigenfunction(grid_1d):
    """cos(3x) 在 [-π,π) 上：(-Δ)^s cos(3x) = 3^{2s} cos(3x)"""
    f = ScalarField.from_function(grid_1d, lambda x: np.cos(3 * x))
    for s in (0.2, 0.5, 0.9):
        out = fracops_service.frac_laplacian_spectral(f, s)
        np.testing.assert_allclose(out.values, 3.0 ** (2 * s) * f.values, atol=1e-12)


def test_spectral_order_must_be_fractional(grid_1d):
    with pytest.raises(ValueError):
        fracops_service.frac_laplacian_spectral(ScalarField.zeros(grid_1d), 1.0)


def test_self_adjoint(grid_2d, rng):
    f = ScalarField(grid_2d, rng.standard_normal(grid_2d.shape))
    g = ScalarField(grid_2d, rng.standard_normal(grid_2d.shape))
    lhs = np.sum(fracops_service.frac_laplacian_spectral(f, 0.37).values * g.values)
    rhs = np.sum(f.values * fracops_service.frac_laplacian_spectral(g, 0.37).values)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def _quadrature_error(N):
    grid = PeriodicGrid(d=1, N=N, L=np.pi)
    x = grid.axis
    f = ScalarField(grid, np.cos(x) + 0.5 * np.sin(2 * x) + 0.25 * np.cos(3 * x))
    spectral = fracops_service.frac_laplacian_spectral(f, 0.5).values
    quadrature = fracops_service.frac_laplacian_quadrature(f, 0.5).values
    return float(np.max(np.abs(spectral - quadrature)) / np.max(np.abs(spectral)))


def test_quadrature_matches_spectral():
    error = _quadrature_error(128)
    assert error <= 1e-3
    assert error < _quadrature_error(64)


def test_quadrature_constant_is_zero():
    grid = PeriodicGrid(d=1, N=32, L=2.0)
    f = ScalarField.constant(grid, 2.0)
    out = fracops_service.frac_laplacian_quadrature(f, 0.3, r_cut=1.0, periodic_tail=False)
    assert np.max(np.abs(out.values)) <= 1e-10


def test_quadrature_honours_cutoff():
    """截断半径越大，截断算子在 cos x 上的特征值越接近周期乘子"""
    grid = PeriodicGrid(d=1, N=128, L=np.pi)
    f = ScalarField.from_function(grid, lambda x: np.cos(x))
    origin = grid.N // 2
    short = fracops_service.frac_laplacian_quadrature(f, 0.5, r_cut=1.0, periodic_tail=False).values
    wide = fracops_service.frac_laplacian_quadrature(f, 0.5, r_cut=2.0, periodic_tail=False).values
    full = fracops_service.frac_laplacian_quadrature(f, 0.5).values
    assert 0.0 < short[origin] < wide[origin] < full[origin]
    assert full[origin] == pytest.approx(1.0, abs=1e-3)

    with_tail = fracops_service.frac_laplacian_quadrature(f, 0.5, r_cut=2.0).values
    assert with_tail[origin] > wide[origin]


def test_quadrature_rejects_cutoff(grid_1d):
    f = ScalarField.zeros(grid_1d)
    with pytest.raises(InvalidCutoff):
        fracops_service.frac_laplacian_quadrature(f, 0.5, r_cut=grid_1d.L + 1.0)
    with pytest.raises(InvalidCutoff):
        fracops_service.frac_laplacian_quadrature(f, 0.5, r_cut=0.5 * grid_1d.h)


def test_band_limited_field_keeps_only_dealiased_modes(grid_2d, rng):
    f = band_limited_field(grid_2d, rng)
    spectrum = f.hat()
    assert np.max(np.abs(spectrum[~grid_2d.dealias_mask])) < 1e-10
    assert np.max(np.abs(spectrum[grid_2d.dealias_mask])) > 1.0


def test_nonlocal_gradient_beta_one_is_gradient(grid_2d, rng):
    f = band_limited_field(grid_2d, rng)
    for a, b in zip(fracops_service.nonlocal_gradient(f, 1.0), fracops_service.spectral_gradient(f)):
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)


def test_splitting_identity(grid_2d, rng):
    """div ∇(-Δ)^{(β-1)/2} f = -(-Δ)^{(β+1)/2} f"""
    f = band_limited_field(grid_2d, rng)
    beta = 0.6
    div = fracops_service.spectral_divergence(fracops_service.nonlocal_gradient(f, beta))
    target = fracops_service.frac_power_spectral(f, beta + 1.0)
    assert np.max(np.abs(div.values + target.values)) <= 1e-12 * np.max(np.abs(target.values))


def test_nonlocal_gradient_is_real_and_mean_free(grid_1d, rng):
    f = ScalarField(grid_1d, rng.standard_normal(grid_1d.shape))
    (g,) = fracops_service.nonlocal_gradient(f, 0.4)
    assert abs(g.values.mean()) <= 1e-12


def test_regularized_riesz_exact_on_middle_band():
    grid = PeriodicGrid(d=1, N=512, L=8.0)
    eps, beta = 0.2, 0.5
    half, full = fracops_service.build_regularized_riesz(grid, beta, eps)
    s = (1.0 - beta) / 2.0
    r = grid.periodic_radius
    band = (r >= 1.01 * eps) & (r <= 0.99 / eps)
    np.testing.assert_allclose(half.values[band], r[band] ** (s - 1.0), rtol=1e-12)
    assert np.all(half.values[r < 0.5 * eps] == 0.0)
    assert full.spectrum.min() >= 0.0
    np.testing.assert_allclose(full.spectrum, half.spectrum ** 2)
    assert half.params["cutoff"] == "quintic-hermite"


def test_regularized_riesz_converges_as_eps_shrinks():
    """K^(ε) * φ → (-Δ)^{-s} φ，L² 误差随 ε 减半严格减小"""
    grid = PeriodicGrid(d=1, N=4096, L=8.0)
    beta = 0.5
    s = (1.0 - beta) / 2.0
    width = 0.3
    phi = ScalarField.from_function(grid, lambda x: -x / width ** 2 * np.exp(-x ** 2 / (2 * width ** 2)))
    target = fracops_service.frac_power_spectral(phi, -2.0 * s).values

    errors = []
    for eps in (0.4, 0.2, 0.1, 0.05):
        _, full = fracops_service.build_regularized_riesz(grid, beta, eps)
        approx = fracops_service.periodic_convolve(phi, full).values
        errors.append(float(np.linalg.norm(approx - target) / np.linalg.norm(target)))
    assert all(a > b for a, b in zip(errors, errors[1:])), errors
    assert errors[-1] < 0.05, errors


def test_regularized_riesz_lowest_mode_approaches_multiplier():
    grid = PeriodicGrid(d=1, N=1024, L=8.0)
    beta = 0.5
    s = (1.0 - beta) / 2.0
    k1 = np.pi / grid.L
    _, full = fracops_service.build_regularized_riesz(grid, beta, 0.05)
    assert full.spectrum[1] * k1 ** (2.0 * s) == pytest.approx(1.0, abs=0.1)


def test_regularized_riesz_restores_core_mass():
    """挖去的核区质量介于 ω(ε/2)^s/s 与 ω ε^s/s 之间，并计入零模"""
    grid = PeriodicGrid(d=1, N=512, L=8.0)
    eps, beta = 0.2, 0.5
    s = (1.0 - beta) / 2.0
    half, _ = fracops_service.build_regularized_riesz(grid, beta, eps)
    core = half.params["core_mass"]
    assert 2.0 * (0.5 * eps) ** s / s < core < 2.0 * eps ** s / s
    assert half.spectrum[0] == pytest.approx(half.mass() + half.normalization * core, rel=1e-12)


def test_regularized_riesz_two_dimensional_spectrum():
    grid = PeriodicGrid(d=2, N=128, L=8.0)
    beta = 0.5
    s = (1.0 - beta) / 2.0
    half, full = fracops_service.build_regularized_riesz(grid, beta, 0.3)
    k = grid.k_abs
    band = (k >= 1.0) & (k <= 3.0)
    ratio = half.spectrum[band] * k[band] ** s
    assert np.max(np.abs(ratio - 1.0)) < 0.1
    # 径向核：谱只依赖 |k|
    assert half.spectrum[1, 2] == pytest.approx(half.spectrum[2, 1], rel=1e-12)
    assert full.spectrum.min() >= 0.0


def test_mollifier_unit_mass(grid_2d):
    table = fracops_service.build_mollifier(grid_2d, 0.5)
    assert table.mass() == pytest.approx(1.0, abs=1e-14)
    assert np.all(table.values >= 0.0)


def test_mollifier_second_order_consistency():
    grid = PeriodicGrid(d=1, N=1024, L=np.pi)
    f = ScalarField.from_function(grid, lambda x: np.cos(x) + np.sin(2 * x))
    errors = []
    for rho in (0.4, 0.2):
        smoothed = fracops_service.periodic_convolve(f, fracops_service.build_mollifier(grid, rho))
        errors.append(float(np.max(np.abs(smoothed.values - f.values))))
    assert 3.5 < errors[0] / errors[1] < 4.5


def test_mollifier_rejects_unresolved_width(grid_1d):
    with pytest.raises(RhoUnresolved):
        fracops_service.build_mollifier(grid_1d, grid_1d.h)
    with pytest.raises(RhoUnresolved):
        fracops_service.build_mollifier(grid_1d, grid_1d.L)


def test_convolution_with_delta_is_identity(grid_2d, rng):
    f = ScalarField(grid_2d, rng.standard_normal(grid_2d.shape))
    out = fracops_service.periodic_convolve(f, fracops_service.delta_kernel(grid_2d))
    np.testing.assert_allclose(out.values, f.values, atol=1e-12)


def test_convolution_commutes_for_even_fields(grid_1d, rng):
    def even_noise():
        r = rng.standard_normal(grid_1d.shape)
        return 0.5 * (r + np.roll(r[::-1], 1))

    f = ScalarField(grid_1d, even_noise())
    g = ScalarField(grid_1d, even_noise())
    fg = fracops_service.periodic_convolve(f, KernelTable.from_values(grid_1d, KernelKind.CUSTOM, g.values))
    gf = fracops_service.periodic_convolve(g, KernelTable.from_values(grid_1d, KernelKind.CUSTOM, f.values))
    np.testing.assert_allclose(fg.values, gf.values, atol=1e-12)


def test_convolution_grid_mismatch(grid_1d):
    other = PeriodicGrid(d=1, N=32, L=np.pi)
    with pytest.raises(GridMismatch):
        fracops_service.periodic_convolve(ScalarField.zeros(grid_1d), fracops_service.delta_kernel(other))
