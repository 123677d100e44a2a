"""
分数阶算子服务 - 周期盒上的 (-Δ)^s、非局部梯度、正则化 Riesz 核与磨光核
"""

import warnings
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import fft as sfft
from scipy import integrate, special

from core.config import settings
from core.errors import (
    EpsilonTooLarge, EpsilonUnresolvedWarning, GridMismatch, InvalidCutoff, RhoUnresolved
)
from models.field import KernelKind, KernelTable, PeriodicGrid, ScalarField


def fractional_laplacian_constant(d: int, s: float) -> float:
    """c_{d,s} = 4^s Γ(d/2+s) / (π^{d/2} |Γ(-s)|)"""
    return float(4.0 ** s * special.gamma(d / 2.0 + s) / (np.pi ** (d / 2.0) * abs(special.gamma(-s))))


def riesz_normalization(d: int, a: float) -> float:
    """|x|^{a-d} / γ_d(a) 是 (-Δ)^{-a/2} 的核，返回 1/γ_d(a)"""
    gamma_d = np.pi ** (d / 2.0) * 2.0 ** a * special.gamma(a / 2.0) / special.gamma((d - a) / 2.0)
    return float(1.0 / gamma_d)


def sphere_area(d: int) -> float:
    """单位球面面积 ω_{d-1} = 2π^{d/2}/Γ(d/2)"""
    return float(2.0 * np.pi ** (d / 2.0) / special.gamma(d / 2.0))


def radial_fourier_profile(d: int, z: np.ndarray) -> np.ndarray:
    """Λ_d(z)：径向函数 f(|x|) 的 Fourier 变换为 ∫ f(r) r^{d-1} Λ_d(|k| r) dr"""
    z = np.asarray(z, dtype=float)
    if d == 1:
        return 2.0 * np.cos(z)
    nu = d / 2.0 - 1.0
    out = np.full(z.shape, sphere_area(d))
    pos = z > 1e-8
    out[pos] = (2.0 * np.pi) ** (d / 2.0) * z[pos] ** (-nu) * special.jv(nu, z[pos])
    return out


def smoothstep5(t: np.ndarray) -> np.ndarray:
    """五次 Hermite 过渡 6t^5 - 15t^4 + 10t^3，在 [0,1] 外截断，C² 连续"""
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def riesz_cutoff(r: np.ndarray, eps: float) -> np.ndarray:
    """φ_ε：[ε, 1/ε] 上为 1，[ε/2, 2/ε] 外为 0；不同 ε 的截断函数嵌套单调"""
    inner = smoothstep5((r - 0.5 * eps) / (0.5 * eps))
    outer = smoothstep5(2.0 - r * eps)
    return inner * outer


class FracOpsService:
    """周期网格上的分数阶算子"""

    # ---------- 变换工具 ----------

    def _to_real(self, values: np.ndarray, reference: np.ndarray) -> np.ndarray:
        imag = float(np.max(np.abs(values.imag))) if values.size else 0.0
        scale = float(np.max(np.abs(reference))) if reference.size else 0.0
        if imag > settings.IMAGINARY_RESIDUE_TOL * max(scale, 1.0) * 1e3:
            logger.debug(f"反变换虚部残差 {imag:.3e} 偏大")
        return values.real

    def apply_multiplier(self, f: ScalarField, multiplier: np.ndarray) -> ScalarField:
        """变换 - 乘以实乘子 - 反变换"""
        out = sfft.ifftn(f.hat() * multiplier)
        return f.with_values(self._to_real(out, f.values))

    # ---------- (-Δ)^s ----------

    def frac_laplacian_spectral(self, f: ScalarField, s: float) -> ScalarField:
        """谱形式：模 k 乘以 |k|^{2s}，零模映射为 0"""
        if not 0.0 < s < 1.0:
            raise ValueError(f"阶数 s={s} 必须位于 (0,1)")
        return self.apply_multiplier(f, f.grid.multiplier(2.0 * s))

    def frac_power_spectral(self, f: ScalarField, exponent: float) -> ScalarField:
        """一般乘子 |k|^{exponent}（可为负，零模为 0），用于 Riesz 位势等"""
        return self.apply_multiplier(f, f.grid.multiplier(exponent))

    def frac_laplacian_quadrature(
        self,
        f: ScalarField,
        s: float,
        r_cut: Optional[float] = None,
        periodic_tail: bool = True,
    ) -> ScalarField:
        """奇异积分的格点主值求和

        c_{d,s} Σ_{0<|y|≤r_cut} (f(x) - f(x-y)) |y|^{-d-2s} h^d，y 与 -y 成对求和。
        r_cut 缺省时对整个周期格点求和（镜像层 + 解析余项），d = 1 时再扣除格点奇异和的
        ζ(2s-1) 首项校正，结果逼近周期乘子 |k|^{2s}。给定 r_cut 时只求 |y| ≤ r_cut 的偏移，
        periodic_tail 为真则把 r_cut 以外的贡献按均值场余项 c ω ρ^{-2s}/(2s) (f - f̄) 计入。
        """
        if not 0.0 < s < 1.0:
            raise ValueError(f"阶数 s={s} 必须位于 (0,1)")
        grid = f.grid
        full_lattice = r_cut is None
        if not full_lattice:
            if r_cut > grid.L:
                raise InvalidCutoff(f"截断半径 r_cut={r_cut} 超过半长 L={grid.L}")
            if r_cut < grid.h:
                raise InvalidCutoff(f"截断半径 r_cut={r_cut} 小于网格步长 h={grid.h}")

        c = fractional_laplacian_constant(grid.d, s)
        h, N, d = grid.h, grid.N, grid.d
        p = d + 2.0 * s

        if full_lattice:
            images = settings.QUADRATURE_IMAGES_1D if d == 1 else settings.QUADRATURE_IMAGES_ND
            m_max = images * N
            radius = (m_max + 0.5) * h
        else:
            m_max = int(np.floor(r_cut / h + 1e-12))
            radius = r_cut

        folded = self._folded_weights(grid, m_max, p, None if full_lattice else r_cut)

        values = f.values
        result = np.zeros_like(values)
        # 成对求和 y 与 -y：只遍历半个余数集合
        for residue, self_paired in self._half_residues(grid):
            w = folded[residue]
            if w == 0.0:
                continue
            if self_paired:
                w *= 0.5
            shift = tuple(int(r) for r in residue)
            neg_shift = tuple(-r for r in shift)
            axes = tuple(range(d))
            result += w * (2.0 * values - np.roll(values, shift, axis=axes) - np.roll(values, neg_shift, axis=axes))
        result *= c * h ** d

        if full_lattice or periodic_tail:
            tail = sphere_area(d) * radius ** (-2.0 * s) / (2.0 * s)
            result += c * tail * (values - values.mean())

        if full_lattice and d == 1:
            second_diff = 2.0 * values - np.roll(values, 1) - np.roll(values, -1)
            result -= c * special.zeta(2.0 * s - 1.0) * h ** (-2.0 * s) * second_diff

        return f.with_values(result)

    def _folded_weights(self, grid: PeriodicGrid, m_max: int, p: float, r_cut: Optional[float]) -> np.ndarray:
        """把格点偏移 m 的权重 |hm|^{-p} 折叠到 m mod N 上"""
        N, d, h = grid.N, grid.d, grid.h
        axis = np.arange(-m_max, m_max + 1)
        if d == 1:
            m = axis[axis != 0]
            r = h * np.abs(m).astype(float)
            keep = r <= (r_cut if r_cut is not None else h * (m_max + 0.5))
            flat = np.mod(m[keep], N)
            return np.bincount(flat, weights=r[keep] ** (-p), minlength=N)

        folded = np.zeros(grid.shape)
        radius = r_cut if r_cut is not None else h * (m_max + 0.5)
        # 按第一轴分片，避免一次性展开 (2M+1)^d 个偏移
        rest = np.meshgrid(*([axis] * (d - 1)), indexing="ij")
        rest_sq = sum(r.astype(float) ** 2 for r in rest)
        for m0 in axis:
            r2 = (m0 ** 2 + rest_sq) * h * h
            keep = (r2 > 0) & (r2 <= radius * radius)
            if not np.any(keep):
                continue
            idx = [np.full(int(keep.sum()), m0 % N)] + [np.mod(r[keep], N) for r in rest]
            np.add.at(folded, tuple(idx), r2[keep] ** (-p / 2.0))
        return folded

    def _half_residues(self, grid: PeriodicGrid) -> List[Tuple[Tuple[int, ...], bool]]:
        """余数集合中每对 {r, -r} 取一个代表（r ≠ 0），并标记 r ≡ -r 的自配对余数"""
        N = grid.N
        seen = set()
        out = []
        for flat in range(1, N ** grid.d):
            key = tuple(int(x) for x in np.unravel_index(flat, grid.shape))
            neg = tuple((-x) % N for x in key)
            if key in seen or neg in seen:
                continue
            seen.add(key)
            out.append((key, key == neg))
        return out

    # ---------- 非局部梯度与散度 ----------

    def nonlocal_gradient(self, f: ScalarField, beta: float) -> List[ScalarField]:
        """∇(-Δ)^{(β-1)/2}：乘子 i k |k|^{β-1}，零模与 Nyquist 置 0"""
        if not 0.0 < beta <= 1.0:
            raise ValueError(f"阶数 beta={beta} 必须位于 (0,1]")
        grid = f.grid
        radial = grid.multiplier(beta - 1.0)
        f_hat = f.hat()
        return [
            f.with_values(self._to_real(sfft.ifftn(1j * k * radial * f_hat), f.values))
            for k in grid.k_odd_components
        ]

    def spectral_gradient(self, f: ScalarField) -> List[ScalarField]:
        f_hat = f.hat()
        return [
            f.with_values(self._to_real(sfft.ifftn(1j * k * f_hat), f.values))
            for k in f.grid.k_odd_components
        ]

    def spectral_divergence_hat(self, components: Sequence[np.ndarray], grid: PeriodicGrid) -> np.ndarray:
        """Σ_j i k_j v̂_j（谱空间输出，零模严格为 0）"""
        out = np.zeros(grid.shape, dtype=complex)
        for k, v in zip(grid.k_odd_components, components):
            out += 1j * k * sfft.fftn(v)
        return out

    def spectral_divergence(self, components: Sequence[ScalarField]) -> ScalarField:
        grid = components[0].grid
        div_hat = self.spectral_divergence_hat([c.values for c in components], grid)
        return ScalarField(grid, sfft.ifftn(div_hat).real)

    # ---------- 核表 ----------

    def build_regularized_riesz(
        self, grid: PeriodicGrid, beta: float, eps: float
    ) -> Tuple[KernelTable, KernelTable]:
        """K̃ = φ_ε(|x|)|x|^{s-d}（s = (1-β)/2）与其卷积平方 K^(ε) = K̃ * K̃

        values 为盒内采样的 φ_ε r^{s-d}。谱系数取周期化核的精确 Fourier 系数，
        并把内截断挖去的质量 ∫(1-φ_in)|x|^{s-d} 作为原点点质量补回：

            K̃^(k) = |k|^{-s} - [C_ε(k) - C_ε(0) + T_ε(k)] / γ_d(s)

        C_ε 为内核区 r < ε 的变换，T_ε 为 r > 1/ε 远场的变换；两者均随 ε → 0 消失，
        故 K^(ε) = K̃^2 逐模收敛到 |k|^{-2s}。
        """
        if not 0.0 < eps < 1.0:
            raise EpsilonTooLarge(f"ε={eps} 必须位于 (0,1)")
        if 2.0 / eps <= eps:
            raise EpsilonTooLarge(f"ε={eps} 使截断带退化")
        if eps / 2.0 < grid.h:
            message = f"ε/2={eps / 2:.3g} 小于网格步长 h={grid.h:.3g}，内截断带无法分辨"
            logger.warning(message)
            warnings.warn(message, EpsilonUnresolvedWarning, stacklevel=2)

        s = (1.0 - beta) / 2.0
        d = grid.d
        r = grid.periodic_radius
        values = np.zeros(grid.shape)
        inside = (r > 0) & (r <= grid.L)
        values[inside] = riesz_cutoff(r[inside], eps) * r[inside] ** (s - d)

        norm_half = riesz_normalization(d, s)
        k_unique, inverse = np.unique(grid.k_abs.ravel(), return_inverse=True)
        nz = k_unique > 0
        core_defect, core_mass = self._riesz_core_defect(d, s, eps, k_unique[nz])
        tail = self._riesz_tail(d, s, eps, k_unique[nz])

        radial = np.empty_like(k_unique)
        radial[nz] = k_unique[nz] ** (-s) * (1.0 - norm_half * tail) - norm_half * core_defect
        radial[~nz] = norm_half * (values.sum() * grid.cell_volume + core_mass)
        half = KernelTable(
            kind=KernelKind.REGULARIZED_RIESZ_HALF,
            grid=grid,
            values=values,
            spectrum=radial[inverse].reshape(grid.shape),
            normalization=norm_half,
            params={"s": s / 2.0, "eps": eps, "beta": beta, "cutoff": "quintic-hermite",
                    "core_mass": core_mass},
        )

        square_spectrum = half.spectrum ** 2
        square_values = sfft.ifftn(square_spectrum).real / (grid.cell_volume * norm_half ** 2)
        full = KernelTable(
            kind=KernelKind.CONVOLUTION_SQUARE,
            grid=grid,
            values=square_values,
            spectrum=square_spectrum,
            normalization=norm_half ** 2,
            params={"s": s, "eps": eps, "beta": beta, "cutoff": "quintic-hermite"},
        )
        logger.debug(f"正则化 Riesz 核: s={s:.3f}, ε={eps}, 核区质量 {core_mass:.4g}, 网格 {grid.describe()}")
        return half, full

    def _riesz_core_defect(
        self, d: int, s: float, eps: float, k: np.ndarray
    ) -> Tuple[np.ndarray, float]:
        """C_ε(k) - C_ε(0) = ∫_0^ε (1-φ_in) r^{s-1} [Λ_d(kr) - Λ_d(0)] dr 与核区质量 C_ε(0)"""
        k_max = float(k.max()) if k.size else 0.0
        # [0, ε/2] 换元 u = r^s 消去奇性
        nodes, weights = np.polynomial.legendre.leggauss(int(np.ceil(k_max * eps / (2.0 * s))) + 64)
        top = (0.5 * eps) ** s
        r_head = (0.5 * top * (nodes + 1.0)) ** (1.0 / s)
        w_head = 0.5 * top * weights / s
        # [ε/2, ε] 过渡带
        nodes, weights = np.polynomial.legendre.leggauss(int(np.ceil(k_max * eps / 2.0)) + 64)
        r_band = eps * (0.75 + 0.25 * nodes)
        blend = 1.0 - smoothstep5((r_band - 0.5 * eps) / (0.5 * eps))
        w_band = 0.25 * eps * weights * blend * r_band ** (s - 1.0)

        r = np.concatenate([r_head, r_band])
        w = np.concatenate([w_head, w_band])
        lam0 = sphere_area(d)
        out = np.empty_like(k)
        for idx in self._chunks(k.size, r.size):
            out[idx] = (radial_fourier_profile(d, np.outer(k[idx], r)) - lam0) @ w
        return out, float(lam0 * w.sum())

    def _riesz_tail(self, d: int, s: float, eps: float, k: np.ndarray) -> np.ndarray:
        """远场项 T_ε(k) |k|^s = ∫ g'(r) Q(kr) dr，g = 1 - φ_out，Q(x) = ∫_x^∞ t^{s-1} Λ_d(t) dt

        换元 r = (2-t)/ε 后权重为 30t²(1-t)²；|k|/ε 超过 RIESZ_TAIL_PHASE 的模置 0。
        """
        out = np.zeros_like(k)
        active = np.flatnonzero(k / eps <= settings.RIESZ_TAIL_PHASE)
        if active.size == 0:
            return out
        k_top = float(k[active].max())
        nodes, weights = np.polynomial.legendre.leggauss(int(np.ceil(k_top / eps)) + 64)
        t = 0.5 * (nodes + 1.0)
        w = 0.5 * weights * 30.0 * t ** 2 * (1.0 - t) ** 2
        xs, cumulative = self._riesz_oscillatory_table(d, s, 2.0 * k_top / eps)
        gamma_d = 1.0 / riesz_normalization(d, s)
        for idx in self._chunks(active.size, t.size):
            x = np.outer(k[active[idx]], 2.0 - t) / eps
            out[active[idx]] = (gamma_d - np.interp(x, xs, cumulative)) @ w
        return out

    def _riesz_oscillatory_table(self, d: int, s: float, x_max: float) -> Tuple[np.ndarray, np.ndarray]:
        """P(x) = ∫_0^x t^{s-1} Λ_d(t) dt 的均匀表：x ≤ 1 用换元 u = t^s 的 Gauss 积分，其后累积梯形"""
        step = settings.RIESZ_TABLE_STEP
        n_head = int(round(1.0 / step))
        xs = step * np.arange(max(n_head, int(np.ceil(x_max / step))) + 2)
        nodes, weights = np.polynomial.legendre.leggauss(64)
        u_top = xs[: n_head + 1] ** s
        u = 0.5 * np.outer(u_top, nodes + 1.0)
        head = 0.5 * u_top / s * (radial_fourier_profile(d, u ** (1.0 / s)) @ weights)

        x_tail = xs[n_head:]
        integrand = x_tail ** (s - 1.0) * radial_fourier_profile(d, x_tail)
        tail = head[-1] + integrate.cumulative_trapezoid(integrand, x_tail, initial=0.0)
        return xs, np.concatenate([head, tail[1:]])

    @staticmethod
    def _chunks(rows: int, cols: int, budget: int = 4_000_000) -> List[slice]:
        size = max(1, budget // max(cols, 1))
        return [slice(i, min(i + size, rows)) for i in range(0, rows, size)]

    def build_mollifier(self, grid: PeriodicGrid, rho: float) -> KernelTable:
        """W_ρ(x) = ρ^{-d} W_1(x/ρ)，W_1 = c_d (1-|x|²)²_+，离散重归一化为单位质量"""
        if rho < 2.0 * grid.h:
            raise RhoUnresolved(f"ρ={rho} 小于 2h={2 * grid.h:.3g}")
        if rho >= grid.L:
            raise RhoUnresolved(f"ρ={rho} 必须小于半长 L={grid.L}")

        d = grid.d
        c_d = d * (d + 2.0) * (d + 4.0) / (8.0 * sphere_area(d))
        z = grid.periodic_radius / rho
        values = c_d * np.clip(1.0 - z ** 2, 0.0, None) ** 2 / rho ** d
        values /= values.sum() * grid.cell_volume
        return KernelTable.from_values(grid, KernelKind.MOLLIFIER, values, rho=rho)

    def delta_kernel(self, grid: PeriodicGrid) -> KernelTable:
        """离散 δ：原点取 1/h^d"""
        values = np.zeros(grid.shape)
        values[(0,) * grid.d] = 1.0 / grid.cell_volume
        return KernelTable.from_values(grid, KernelKind.CUSTOM, values, name="delta")

    # ---------- 卷积 ----------

    def periodic_convolve(self, f: ScalarField, kern: KernelTable) -> ScalarField:
        """变换 - 乘以核谱 - 反变换"""
        if f.grid != kern.grid:
            raise GridMismatch(f"场网格 {f.grid.describe()} 与核网格 {kern.grid.describe()} 不一致")
        return f.with_values(sfft.ifftn(f.hat() * kern.spectrum).real)


# 创建全局服务实例
fracops_service = FracOpsService()
