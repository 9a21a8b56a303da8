"""
实验室的异常类型。

每个异常都带有中文消息和结构化上下文，CLI根据 ``exit_code`` 决定退出码：
配置错误为2，自检失败为3，其余数值错误为4。
"""

from typing import Any, Dict, Optional


class LabError(Exception):
    """所有实验室异常的基类。"""

    exit_code = 4

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value!r}" for key, value in self.context.items())
        return f"{self.message} ({details})"


class DomainError(LabError):
    """参数超出允许范围。"""


class DiracPointwiseEval(LabError):
    """Dirac时间协方差没有逐点取值，应使用 big_gamma 或配对积分。"""


class WhitePointwiseEval(LabError):
    """一维空间白噪声是分布，没有逐点取值，应使用 MollifiedWhite 替代。"""


class NoFiniteThreshold(LabError):
    """在搜索范围内 C_N 没有降到阈值以下（违反Dalang条件）。"""


class ScaleUndefined(LabError):
    """θ_t 退化（例如原子谱测度使 C_N = 0）。"""


class QuadratureFailure(LabError):
    """自适应积分无法达到要求的精度。"""


class AllZeroMass(LabError):
    """所有副本都落在初值支撑集之外。"""

    def __init__(self, message: str, hit_fraction: Optional[float] = None, **context: Any):
        super().__init__(message, hit_fraction=hit_fraction, **context)
        self.hit_fraction = hit_fraction


class IdentityMismatch(LabError):
    """两种计算方式得到的结果不一致。"""


class NotApplicable(LabError):
    """该公式不适用于当前模型。"""


class NoBracket(LabError):
    """扫描结果中找不到正负号变化。"""


class ConfigError(LabError):
    """配置键值不满足约束。"""

    exit_code = 2

    def __init__(self, key: str, constraint: str, value: Any = None):
        super().__init__(f"配置项 '{key}' 不满足约束: {constraint}", key=key, value=value)
        self.key = key
        self.constraint = constraint


class SelftestFailure(LabError):
    """自检中至少有一项预言检查失败。"""

    exit_code = 3
