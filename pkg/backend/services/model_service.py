"""
模型规格服务 - 细致平衡、不变测度、对称化与最小特征值
"""

import warnings
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from core.config import settings
from core.errors import DisconnectedWarning, NoInvariantMeasure, NotSymmetric
from models.field import ScalarField
from models.system import (
    SymmetrizedSystem, SystemSpec, ValidationIssue, ValidationReport
)


class ModelService:
    """熵结构线性代数"""

    def __init__(self, tol_db: Optional[float] = None):
        self.tol_db = settings.DETAILED_BALANCE_TOL if tol_db is None else tol_db

    # ---------- 不变测度 ----------

    def find_invariant_measure(self, A) -> np.ndarray:
        """求 π > 0 使 π_i a_ij = π_j a_ji，每个连通分量首个指标归一为 1"""
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A 必须是方阵")
        if np.any(A < 0):
            raise ValueError("A 的元素必须非负")

        forward = A > 0
        np.fill_diagonal(forward, False)
        one_sided = forward ^ forward.T
        if np.any(one_sided):
            i, j = np.argwhere(one_sided)[0]
            raise NoInvariantMeasure(
                f"a_{i + 1}{j + 1} 与 a_{j + 1}{i + 1} 仅有一个为正，细致平衡无正解"
            )

        graph = csr_matrix(forward.astype(float))
        n_components, labels = connected_components(graph, directed=False)

        pi = np.zeros(n)
        for component in range(n_components):
            root = int(np.flatnonzero(labels == component)[0])
            order, predecessors = breadth_first_order(
                graph, root, directed=False, return_predecessors=True
            )
            pi[root] = 1.0
            for node in order[1:]:
                parent = predecessors[node]
                pi[node] = pi[parent] * A[parent, node] / A[node, parent]

        self._verify_detailed_balance(A, pi)

        if n_components > 1:
            message = f"相互作用图有 {n_components} 个连通分量，π 按分量分别归一化"
            logger.warning(message)
            warnings.warn(message, DisconnectedWarning, stacklevel=2)

        logger.debug(f"不变测度: {pi}")
        return pi

    def _verify_detailed_balance(self, A: np.ndarray, pi: np.ndarray) -> None:
        flux = pi[:, None] * A
        defect = np.abs(flux - flux.T)
        scale = np.maximum(1.0, np.abs(flux))
        bad = defect > self.tol_db * scale
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise NoInvariantMeasure(
                f"环路一致性失败: |π_{i + 1}a_{i + 1}{j + 1} - π_{j + 1}a_{j + 1}{i + 1}| = {defect[i, j]:.3e}"
            )

    def detailed_balance_holds(self, A, pi) -> bool:
        try:
            self._verify_detailed_balance(np.asarray(A, dtype=float), np.asarray(pi, dtype=float))
        except NoInvariantMeasure:
            return False
        return True

    # ---------- 对称化与特征值 ----------

    def jacobi_eigenvalues(
        self,
        S,
        tol: Optional[float] = None,
        max_sweeps: Optional[int] = None,
    ) -> np.ndarray:
        """循环 Jacobi 方法，直到非对角 Frobenius 质量 < tol·‖S‖，返回升序特征值"""
        tol = settings.JACOBI_TOL if tol is None else tol
        max_sweeps = settings.JACOBI_MAX_SWEEPS if max_sweeps is None else max_sweeps

        a = 0.5 * (np.asarray(S, dtype=float) + np.asarray(S, dtype=float).T)
        n = a.shape[0]
        norm = np.linalg.norm(a)
        if norm == 0.0 or n == 1:
            return np.sort(np.diag(a).copy())

        for sweep in range(max_sweeps):
            off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
            if off < tol * norm:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    sign = 1.0 if theta >= 0 else -1.0
                    t = sign / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c

                    col_p = a[:, p].copy()
                    col_q = a[:, q].copy()
                    a[:, p] = c * col_p - s * col_q
                    a[:, q] = s * col_p + c * col_q
                    row_p = a[p, :].copy()
                    row_q = a[q, :].copy()
                    a[p, :] = c * row_p - s * row_q
                    a[q, :] = s * row_p + c * row_q
                    a[p, q] = a[q, p] = 0.0
        else:
            logger.warning(f"Jacobi 迭代 {max_sweeps} 次未收敛")

        return np.sort(np.diag(a).copy())

    def symmetrize_and_check(self, A, pi) -> SymmetrizedSystem:
        """S = diag(π)A，对称缺陷、Cholesky 正定性与 λ"""
        A = np.asarray(A, dtype=float)
        pi = np.asarray(pi, dtype=float)
        if np.any(pi <= 0):
            raise ValueError("π 必须严格为正")

        S = pi[:, None] * A
        defect = float(np.max(np.abs(S - S.T)) / max(1.0, float(np.max(np.abs(S)))))
        if defect > self.tol_db:
            raise NotSymmetric(f"diag(π)A 的对称缺陷 {defect:.3e} 超出容差 {self.tol_db:.1e}")

        S_sym = 0.5 * (S + S.T)
        eigenvalues = self.jacobi_eigenvalues(S_sym)
        lambda_min = float(eigenvalues[0])

        try:
            np.linalg.cholesky(S_sym)
            factorizable = True
        except np.linalg.LinAlgError:
            factorizable = False

        if factorizable != (lambda_min > 0):
            logger.warning(
                f"Cholesky 与 Jacobi 对正定性的判断不一致 (λ = {lambda_min:.3e})，按 λ 的符号处理"
            )

        return SymmetrizedSystem(
            S=S_sym.tolist(),
            symmetry_defect=defect,
            eigenvalues=[float(v) for v in eigenvalues],
            lambda_min=lambda_min,
            positive_definite=bool(factorizable and lambda_min > 0),
        )

    def entropy_structure(self, spec: SystemSpec) -> Optional[SymmetrizedSystem]:
        """求解模型的熵结构；没有不变测度时返回 None（仍允许模拟）"""
        pi = spec.pi_vector
        try:
            if pi is None:
                pi = self.find_invariant_measure(spec.matrix)
            return self.symmetrize_and_check(spec.matrix, pi)
        except (NoInvariantMeasure, NotSymmetric) as e:
            logger.warning(f"熵诊断不可用: {e}")
            return None

    def critical_exponent(self, spec: SystemSpec) -> float:
        """插值估计的指数 p = 2 + (β+1)/d"""
        return 2.0 + (spec.beta + 1.0) / spec.d

    # ---------- 校验 ----------

    def validate_system(self, spec: SystemSpec, u0: Sequence[ScalarField]) -> ValidationReport:
        """检查系数、细致平衡与初值的可接受性，返回问题列表"""
        issues: List[ValidationIssue] = []

        def add(code: str, message: str, species: Optional[int] = None, reference: Optional[str] = None):
            issues.append(ValidationIssue(code=code, message=message, species=species, reference=reference))

        if not 0.0 < spec.alpha < 1.0:
            add("alpha_out_of_range", f"alpha 必须位于 (0,1)，当前 {spec.alpha}", reference="coefficients")
        if not 0.0 < spec.beta < 1.0:
            add("beta_out_of_range", f"beta 必须位于 (0,1)，当前 {spec.beta}", reference="coefficients")
        for i, s in enumerate(spec.sigma):
            if s < 0:
                add("sigma_negative", f"σ_{i + 1} = {s} 为负", species=i, reference="coefficients")
        A = spec.matrix
        if np.any(A < 0):
            add("interaction_negative", "相互作用系数 a_ij 必须非负", reference="coefficients")

        pi = spec.pi_vector
        if pi is not None:
            if np.any(pi <= 0):
                add("pi_not_positive", "π_i 必须严格为正", reference="detailed_balance")
            elif not self.detailed_balance_holds(A, pi):
                add("detailed_balance_violated", "π_i a_ij = π_j a_ji 不成立", reference="detailed_balance")

        upper = min(1.0, 2.0 * spec.alpha)
        if not 0.0 < spec.m < upper:
            add("moment_exponent_out_of_range", f"m 必须位于 (0, {upper:g})，当前 {spec.m}", reference="initial_data")

        if len(u0) != spec.n:
            add("initial_species_count", f"初值物种数 {len(u0)} 与 n={spec.n} 不符", reference="initial_data")
        if u0:
            grid = u0[0].grid
            if grid.d != spec.d:
                add("initial_dimension", f"初值网格维数 {grid.d} 与 d={spec.d} 不符", reference="initial_data")
            weight = (1.0 + grid.radius ** 2) ** (spec.m / 2.0)
            for i, field in enumerate(u0):
                if field.grid != grid:
                    add("initial_grid_mismatch", "各物种初值必须位于同一网格", species=i)
                    continue
                values = field.values
                if np.any(values < 0):
                    add("initial_not_nonnegative", f"物种 {i + 1} 的初值不是非负的", species=i, reference="initial_data")
                    continue
                moment = float(np.sum(values * weight) * grid.cell_volume)
                if not np.isfinite(moment):
                    add("initial_moment_infinite", f"物种 {i + 1} 的 m 阶矩不有限", species=i, reference="initial_data")
                safe = np.where(values > 0, values, 1.0)
                entropy = float(np.sum(values * np.log(safe)) * grid.cell_volume)
                if not np.isfinite(entropy):
                    add("initial_entropy_infinite", f"物种 {i + 1} 的 u log u 积分不有限", species=i, reference="initial_data")

        report = ValidationReport(issues=issues)
        if not report.ok:
            logger.info(f"模型校验发现 {len(issues)} 个问题: {report.summary()}")
        return report


# 创建全局服务实例
model_service = ModelService()
