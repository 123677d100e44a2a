"""
错误与警告类型
"""

from typing import Any, List, Optional


class FracrossError(Exception):
    """所有业务错误的基类"""

    exit_code: int = 2


class FracrossWarning(UserWarning):
    """非致命警告的基类"""


# ==================== 模型（熵结构） ====================

class NoInvariantMeasure(FracrossError):
    """矩阵不存在满足细致平衡的不变测度"""


class DisconnectedWarning(FracrossWarning):
    """相互作用图不连通，π 按分量分别归一化"""


class NotSymmetric(FracrossError):
    """diag(π)·A 的对称缺陷超出容差"""


# ==================== 分数阶算子 ====================

class InvalidCutoff(FracrossError):
    """截断半径超出计算盒"""


class EpsilonTooLarge(FracrossError):
    """正则化参数 ε 使截断带退化"""


class EpsilonUnresolvedWarning(FracrossWarning):
    """ε/2 小于网格步长，内截断带无法分辨"""


class RhoUnresolved(FracrossError):
    """磨光核宽度 ρ 无法在网格上分辨"""


class GridMismatch(FracrossError):
    """场与核不在同一网格上"""


# ==================== 求解器与诊断 ====================

class MissingMollifier(FracrossError):
    """ρ > 0 时缺少磨光核表"""


class NonFinite(FracrossError):
    """时间推进出现非有限值（爆破）"""

    def __init__(self, message: str, last_good_state: Any = None, step: Optional[int] = None):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.step = step


class NonAdmissible(FracrossError):
    """状态存在超出容差的负值，熵不可定义"""


class NonPositiveField(FracrossError):
    """Stroock–Varopoulos 检查要求严格正的场"""


class ClampWarning(FracrossWarning):
    """截断负值并重新缩放质量"""


# ==================== 粒子系统 ====================

class UnresolvedPotential(FracrossError):
    """势函数宽度小于径向表分辨率的两倍"""


# ==================== 命令行与文件 ====================

class ParseError(FracrossError):
    """配置文本解析失败"""

    exit_code = 1

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"第 {line} 行: " if line is not None else ""
        super().__init__(prefix + message)


class ValidationError(FracrossError):
    """配置或模型校验失败"""

    exit_code = 1

    def __init__(self, message: str, issues: Optional[List[Any]] = None):
        super().__init__(message)
        self.issues = issues or []


class SnapshotFormatError(FracrossError):
    """快照文件头或数据长度不一致"""

    exit_code = 1
