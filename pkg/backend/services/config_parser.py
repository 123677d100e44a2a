"""
配置解析服务 - 分节 key = value 文本到 RunConfig
"""

from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import ValidationError as PydanticValidationError

from core.errors import NoInvariantMeasure, ParseError, ValidationError
from models.field import PeriodicGrid, ScalarField
from models.particle import LevyConvention
from models.run_config import (
    InitialCondition, InitialProfile, OutputSettings, ParticleSettings, RunConfig
)
from models.simulation import PositivityPolicy, SchemeParams, State
from models.system import SystemSpec, ValidationIssue
from services.model_service import model_service


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> List[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _matrix(text: str) -> List[List[float]]:
    """分号分隔行，逗号分隔列"""
    return [_floats(row) for row in text.split(";") if row.strip()]


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"无法解析布尔值 '{text}'")


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    return int(text)


def _str(text: str) -> str:
    return text.strip()


# 每节允许的键：配置键 -> (模型字段, 解析函数)
SECTION_KEYS: Dict[str, Dict[str, Tuple[str, Callable[[str], Any]]]] = {
    "model": {
        "n": ("n", _int),
        "d": ("d", _int),
        "alpha": ("alpha", _float),
        "beta": ("beta", _float),
        "sigma": ("sigma", _floats),
        "A": ("A", _matrix),
        "pi": ("pi", _floats),
        "m": ("m", _float),
    },
    "scheme": {
        "dt": ("dt", _float),
        "T": ("T", _float),
        "kappa": ("kappa", _float),
        "eps": ("eps", _float),
        "rho": ("rho", _float),
        "dealias": ("dealias", _bool),
        "positivity_policy": ("positivity_policy", _str),
        "snapshot_every": ("snapshot_every", _int),
        "adaptive_dt": ("adaptive_dt", _bool),
        "cfl": ("cfl", _float),
        "N": ("grid_points", _int),
        "L": ("half_length", _float),
        "midpoint_residual": ("midpoint_residual", _bool),
    },
    "initial": {
        "profile": ("profile", _str),
        "centers": ("centers", _matrix),
        "widths": ("widths", _floats),
        "masses": ("masses", _floats),
        "values": ("values", _floats),
        "background": ("background", _float),
        "path": ("path", _str),
    },
    "particles": {
        "count": ("count", _ints),
        "delta": ("delta", _float),
        "convention": ("convention", _str),
        "bandwidth": ("bandwidth", _float),
        "dt": ("dt", _float),
        "T": ("T", _float),
        "snapshot_every": ("snapshot_every", _int),
        "seed": ("seed", _int),
    },
    "output": {
        "directory": ("directory", _str),
    },
}

REQUIRED_SECTIONS = ("model", "scheme")


def _issues_from_pydantic(section: str, error: PydanticValidationError) -> List[ValidationIssue]:
    issues = []
    for item in error.errors():
        location = ".".join(str(part) for part in item.get("loc", ()))
        issues.append(ValidationIssue(
            code=f"{section}_invalid",
            message=f"[{section}] {location}: {item.get('msg')}",
        ))
    return issues


class ConfigParser:
    """运行配置解析与初值构造"""

    def split_sections(self, text: str) -> Dict[str, Dict[str, Tuple[str, int]]]:
        """文本 → {节: {键: (原始值, 行号)}}；'#' 起注释"""
        sections: Dict[str, Dict[str, Tuple[str, int]]] = {}
        current: Optional[str] = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                if not line.endswith("]"):
                    raise ParseError(f"节标题格式错误: {raw.strip()}", line=lineno)
                current = line[1:-1].strip()
                if current not in SECTION_KEYS:
                    raise ParseError(f"未知节 [{current}]", line=lineno)
                if current in sections:
                    raise ParseError(f"节 [{current}] 重复出现", line=lineno)
                sections[current] = {}
                continue
            if current is None:
                raise ParseError("键值对出现在任何节之前", line=lineno)
            if "=" not in line:
                raise ParseError(f"缺少 '=': {raw.strip()}", line=lineno)
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in SECTION_KEYS[current]:
                raise ParseError(f"[{current}] 中的未知键 '{key}'", line=lineno)
            if key in sections[current]:
                raise ParseError(f"[{current}] 中的键 '{key}' 重复", line=lineno)
            sections[current][key] = (value, lineno)
        return sections

    def apply_overrides(
        self, sections: Dict[str, Dict[str, Tuple[str, int]]], overrides: Sequence[str]
    ) -> None:
        """命令行 section.key=value 覆盖"""
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ParseError(f"覆盖项 '{item}' 应为 section.key=value")
            target, value = item.split("=", 1)
            section, key = (part.strip() for part in target.split(".", 1))
            if section not in SECTION_KEYS:
                raise ParseError(f"覆盖项中的未知节 '{section}'")
            if key not in SECTION_KEYS[section]:
                raise ParseError(f"覆盖项中 [{section}] 的未知键 '{key}'")
            sections.setdefault(section, {})[key] = (value.strip(), None)

    def _convert(self, section: str, entries: Dict[str, Tuple[str, int]]) -> Dict[str, Any]:
        values: Dict[str, Any] = {}
        for key, (raw, lineno) in entries.items():
            field_name, convert = SECTION_KEYS[section][key]
            try:
                values[field_name] = convert(raw)
            except ValueError as e:
                raise ParseError(f"[{section}] {key} = {raw}: {e}", line=lineno)
        return values

    def _build(self, section: str, model, values: Dict[str, Any]):
        try:
            return model(**values)
        except PydanticValidationError as e:
            issues = _issues_from_pydantic(section, e)
            raise ValidationError("; ".join(i.message for i in issues), issues=issues)

    def parse_config(
        self,
        text: str,
        overrides: Sequence[str] = (),
        validate_initial: bool = True,
    ) -> RunConfig:
        """
        解析运行配置

        Args:
            text: 分节配置文本
            overrides: section.key=value 形式的覆盖
            validate_initial: 是否构造初值并运行 validate_system
        """
        sections = self.split_sections(text)
        self.apply_overrides(sections, overrides)
        for name in REQUIRED_SECTIONS:
            if name not in sections:
                raise ParseError(f"缺少必需的节 [{name}]")

        converted = {name: self._convert(name, entries) for name, entries in sections.items()}

        system = self._build("model", SystemSpec, converted["model"])
        scheme_values = converted["scheme"]
        if "positivity_policy" in scheme_values:
            scheme_values["positivity_policy"] = self._enum(PositivityPolicy, sections, "scheme", "positivity_policy")
        scheme = self._build("scheme", SchemeParams, scheme_values)

        initial_values = converted.get("initial", {})
        if "profile" in initial_values:
            initial_values["profile"] = self._enum(InitialProfile, sections, "initial", "profile")
        initial = self._build("initial", InitialCondition, initial_values)

        particle_values = converted.get("particles", {})
        if "convention" in particle_values:
            particle_values["convention"] = self._enum(LevyConvention, sections, "particles", "convention")
        particles = self._build("particles", ParticleSettings, particle_values)
        output = self._build("output", OutputSettings, converted.get("output", {}))

        if system.pi is None:
            try:
                pi = model_service.find_invariant_measure(system.matrix)
                system = system.with_pi(pi)
                logger.info(f"π 自动求得: {[round(p, 12) for p in pi]}")
            except NoInvariantMeasure as e:
                logger.warning(f"未找到不变测度，熵诊断将被跳过: {e}")
            except ValueError as e:
                raise ValidationError(str(e), issues=[ValidationIssue(
                    code="interaction_negative", message=str(e), reference="coefficients"
                )])

        config = RunConfig(
            system=system,
            scheme=scheme,
            initial=initial,
            particles=particles,
            output=output,
            source={name: {k: v for k, (v, _) in entries.items()} for name, entries in sections.items()},
        )

        if validate_initial:
            state = self.build_initial_state(config)
            report = model_service.validate_system(config.system, list(state.u))
            if not report.ok:
                raise ValidationError(report.summary(), issues=report.issues)
        return config

    def _enum(self, enum_cls, sections, section: str, key: str) -> Any:
        raw, lineno = sections[section][key]
        try:
            return enum_cls(raw.strip())
        except ValueError:
            allowed = ", ".join(member.value for member in enum_cls)
            raise ParseError(f"[{section}] {key} 取值 '{raw}' 不在 {{{allowed}}} 中", line=lineno)

    # ---------- 初值 ----------

    def build_initial_state(self, config: RunConfig) -> State:
        """按初值配方在格式网格上构造 State"""
        system, initial = config.system, config.initial
        grid = config.scheme.grid(system.d)

        if initial.profile == InitialProfile.FROM_SNAPSHOT:
            from services.snapshot_io import read_snapshot

            if not initial.path:
                raise ValidationError("from-snapshot 初值需要 path", issues=[ValidationIssue(
                    code="initial_path_missing", message="from-snapshot 初值需要 path"
                )])
            state = read_snapshot(initial.path)
            if state.grid != grid:
                raise ValidationError(
                    f"快照网格 {state.grid.describe()} 与格式网格 {grid.describe()} 不一致",
                    issues=[ValidationIssue(code="initial_grid_mismatch", message="快照网格不一致")],
                )
            return State(0.0, state.u)

        if initial.profile == InitialProfile.CONSTANT:
            values = initial.values or [1.0] * system.n
            self._require_length("values", values, system.n)
            fields = [ScalarField.constant(grid, v + initial.background) for v in values]
            return State(0.0, tuple(fields))

        centers = initial.centers or [[0.0] * system.d for _ in range(system.n)]
        widths = initial.widths or [0.5] * system.n
        masses = initial.masses or [1.0] * system.n
        self._require_length("centers", centers, system.n)
        self._require_length("widths", widths, system.n)
        self._require_length("masses", masses, system.n)
        fields = []
        for center, width, mass in zip(centers, widths, masses):
            if len(center) != system.d:
                raise ValidationError(
                    f"包中心 {center} 的维数与 d={system.d} 不符",
                    issues=[ValidationIssue(code="initial_dimension", message="包中心维数不符")],
                )
            fields.append(self.gaussian_bump(grid, center, width, mass, initial.background))
        return State(0.0, tuple(fields))

    def gaussian_bump(
        self, grid: PeriodicGrid, center: Sequence[float], width: float, mass: float, background: float = 0.0
    ) -> ScalarField:
        """质量为 mass 的高斯包（网格上重归一化），叠加常数背景"""
        if width <= 0:
            raise ValidationError(f"包宽度 {width} 必须为正", issues=[ValidationIssue(
                code="initial_width", message="包宽度必须为正"
            )])
        r2 = sum((x - c) ** 2 for x, c in zip(grid.coordinates, center))
        bump = np.broadcast_to(np.exp(-r2 / (2.0 * width ** 2)), grid.shape)
        bump = bump * (mass / (bump.sum() * grid.cell_volume))
        return ScalarField(grid, bump + background)

    def _require_length(self, name: str, values: Sequence, n: int) -> None:
        if len(values) != n:
            raise ValidationError(
                f"初值 {name} 的长度 {len(values)} 与物种数 {n} 不符",
                issues=[ValidationIssue(code="initial_species_count", message=f"{name} 长度不符", reference="initial_data")],
            )


# 创建全局服务实例
config_parser = ConfigParser()


def parse_config(text: str, overrides: Sequence[str] = (), validate_initial: bool = True) -> RunConfig:
    return config_parser.parse_config(text, overrides, validate_initial)
