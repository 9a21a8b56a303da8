"""
界限常数所需的特殊函数。

Gamma函数、Bessel函数第一个正零点、Mittag-Leffler函数（级数与渐近）
以及布朗运动小球概率的渐近式和一维反射级数。
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from loguru import logger
from scipy import optimize, special

from .errors import DomainError

# 级数与渐近式的切换点: z^{1/a} = 30
ML_SWITCH = 30.0
ML_TOLERANCE = 1e-14
_LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class VolumeConstants:
    """维数d相关的几何常数。"""

    d: int
    omega_d: float
    sphere_area: float
    nu: float
    j_nu: float


@dataclass(frozen=True)
class MittagLefflerValue:
    """Mittag-Leffler函数的求值结果。

    ``regime`` 为 ``"series"`` 或 ``"asymptotic"``；溢出时 ``value`` 为
    ``math.inf``，此时只有 ``log_value`` 可用。
    """

    a: float
    z: float
    value: float
    log_value: float
    regime: str
    overflow: bool = False


def gamma_fn(x: float) -> float:
    """
    Euler Gamma函数。

    参数:
        x: 正实数

    返回:
        Γ(x)
    """
    if not x > 0:
        raise DomainError("gamma_fn 只接受正实数", x=x)
    return float(special.gamma(x))


def log_gamma(x: float) -> float:
    """log Γ(x)，x > 0。"""
    if not x > 0:
        raise DomainError("log_gamma 只接受正实数", x=x)
    return float(special.gammaln(x))


def unit_ball_volume(d: int) -> float:
    """单位球体积 ω_d = π^{d/2}/Γ(d/2+1)。"""
    if d < 1:
        raise DomainError("维数必须为正整数", d=d)
    return math.pi ** (d / 2) / gamma_fn(d / 2 + 1)


def sphere_area(d: int) -> float:
    """单位球面面积 S_{d-1} = 2π^{d/2}/Γ(d/2)。"""
    if d < 1:
        raise DomainError("维数必须为正整数", d=d)
    return 2 * math.pi ** (d / 2) / gamma_fn(d / 2)


def bessel_index(d: int) -> float:
    """小球概率使用的Bessel指标 ν = (d-2)/2。"""
    return (d - 2) / 2


@lru_cache(maxsize=None)
def bessel_first_zero(nu: float) -> float:
    """
    Bessel函数 J_ν 的第一个正零点 j_ν。

    先以步长0.05向右扫描找到变号区间，再用 brentq 求根。

    参数:
        nu: Bessel指标，ν ≥ -1/2

    返回:
        j_ν，绝对误差远小于1e-8
    """
    if nu < -0.5:
        raise DomainError("Bessel指标必须满足 ν ≥ -1/2", nu=nu)

    def j(x: float) -> float:
        return float(special.jv(nu, x))

    # j_ν 位于 (ν, ν + 2ν^{1/3} + 3) 之内
    step = 0.05
    lo = max(nu, 0.0) + step
    upper = nu + 2.0 * max(nu, 1.0) ** (1.0 / 3.0) + 3.0
    f_lo = j(lo)
    while lo < upper:
        hi = lo + step
        f_hi = j(hi)
        if f_lo == 0.0:
            return lo
        if f_lo * f_hi < 0:
            root = optimize.brentq(j, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            logger.debug(f"🎯 j_{nu} = {root:.12f}，区间 [{lo:.3f}, {hi:.3f}]")
            return float(root)
        lo, f_lo = hi, f_hi
    raise DomainError("未能找到Bessel函数的变号区间", nu=nu)


def volume_constants(d: int) -> VolumeConstants:
    """返回维数d的几何常数和Bessel零点。"""
    nu = bessel_index(d)
    return VolumeConstants(
        d=d,
        omega_d=unit_ball_volume(d),
        sphere_area=sphere_area(d),
        nu=nu,
        j_nu=bessel_first_zero(nu),
    )


def mittag_leffler_detail(a: float, z: float) -> MittagLefflerValue:
    """
    Mittag-Leffler函数 E_a(z) = Σ z^n/Γ(1+an)。

    z^{1/a} ≤ 30 时直接部分求和（逐项比值低于1e-14停止），否则返回
    渐近式 (1/a)exp(z^{1/a}) 并标记 regime。

    参数:
        a: 指数，0 < a ≤ 1
        z: 非负实数

    返回:
        MittagLefflerValue
    """
    if not 0 < a <= 1:
        raise DomainError("Mittag-Leffler 指数必须满足 0 < a ≤ 1", a=a)
    if z < 0:
        raise DomainError("Mittag-Leffler 自变量必须非负", z=z)
    if z == 0:
        return MittagLefflerValue(a=a, z=z, value=1.0, log_value=0.0, regime="series")

    x = z ** (1.0 / a)
    if x <= ML_SWITCH:
        value = mittag_leffler_series(a, z)
        return MittagLefflerValue(a=a, z=z, value=value, log_value=math.log(value), regime="series")

    log_value = x - math.log(a)
    if log_value >= _LOG_MAX:
        logger.warning(f"⚠️ Mittag-Leffler 溢出: z^(1/a)={x:.3e}，只返回对数值")
        return MittagLefflerValue(a=a, z=z, value=math.inf, log_value=log_value, regime="asymptotic", overflow=True)
    return MittagLefflerValue(a=a, z=z, value=math.exp(log_value), log_value=log_value, regime="asymptotic")


def mittag_leffler(a: float, z: float) -> float:
    """E_a(z) 的数值；溢出时为 inf，详见 mittag_leffler_detail。"""
    return mittag_leffler_detail(a, z).value


def mittag_leffler_series(a: float, z: float, max_terms: int = 100_000) -> float:
    """不做渐近切换的部分和，用于与渐近式比较。"""
    if z == 0:
        return 1.0
    log_z = math.log(z)
    total = 0.0
    previous = -math.inf
    for n in range(max_terms):
        log_term = n * log_z - special.gammaln(1.0 + a * n)
        if log_term >= _LOG_MAX:
            return math.inf
        term = math.exp(log_term)
        total += term
        # 越过峰值后才允许停止
        if n > 0 and log_term < previous and term <= ML_TOLERANCE * total:
            break
        previous = log_term
    return total


def small_ball_asymptotic(nu: float, eps: float) -> float:
    """
    小球概率的渐近式 P{sup_{0≤s≤1}|B_s| ≤ ε} ~ exp(-j_ν²/(2ε²))。
    """
    if not eps > 0:
        raise DomainError("小球半径必须为正", eps=eps)
    j_nu = bessel_first_zero(nu)
    return math.exp(-j_nu**2 / (2 * eps**2))


def small_ball_reflection_series(eps: float, max_terms: int = 100_000) -> float:
    """
    一维精确小球概率 (4/π)Σ(-1)^k/(2k+1)·exp(-(2k+1)²π²/(8ε²))。
    """
    if not eps > 0:
        raise DomainError("小球半径必须为正", eps=eps)
    total = 0.0
    for k in range(max_terms):
        m = 2 * k + 1
        term = math.exp(-(m**2) * math.pi**2 / (8 * eps**2)) / m
        total += term if k % 2 == 0 else -term
        if term < 1e-18:
            break
    return min(1.0, max(0.0, 4.0 / math.pi * total))
