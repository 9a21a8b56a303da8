"""
谱截断量。

C_N（高频尾部）、D_N（低频质量）、阈值频率 N_t，以及前沿尺度函数
θ_t、η_t、ϑ_t。
"""

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np
from loguru import logger
from scipy import integrate

from .errors import DomainError, NoFiniteThreshold, ScaleUndefined
from .kernels import SpectralKind, SpectralMeasure, TimeCovariance, big_gamma, radial_integral
from .special_fn import gamma_fn, sphere_area

if TYPE_CHECKING:
    from .bounds import ModelParams

BISECTION_RTOL = 1e-10
BRACKET_CAP = 1e12


@dataclass(frozen=True)
class SpectralQuantities:
    """某一时刻的谱截断量与尺度函数值。"""

    N: float
    C_N: float
    D_N: float
    gamma_t: float
    N_t: float
    tau: float
    theta: float
    eta: Optional[float] = None
    vartheta: Optional[float] = None
    delta: Optional[float] = None


def c_n(mu: SpectralMeasure, N: float) -> float:
    """
    高频尾部 C_N = ∫_{|ξ|>N} μ(dξ)/|ξ|²（扩展实数）。
    """
    if N < 0:
        raise DomainError("截断频率必须非负", N=N)
    if mu.kind is SpectralKind.RIESZ_DENSITY:
        if N == 0 or mu.beta >= 2:
            return math.inf
        return mu.lambda_beta * sphere_area(mu.d) * N ** (mu.beta - 2) / (2 - mu.beta)
    if mu.kind is SpectralKind.LEBESGUE_1D:
        return math.inf if N == 0 else 2.0 / N
    if mu.kind is SpectralKind.ATOMIC:
        mask = mu.atom_norms > N
        return float(np.sum(mu.atom_masses[mask] / mu.atom_norms[mask] ** 2)) if np.any(mask) else 0.0

    lower = N
    if N == 0:
        radii = np.asarray(mu.radii)
        if radii[0] == 0 and mu.density[0] > 0 and mu.d <= 2:
            return math.inf
        lower = radii[1] * 1e-6 if radii[0] == 0 else radii[0]
    return radial_integral(mu, lambda r: 1.0 / r**2, lower=lower)


def d_n(mu: SpectralMeasure, N: float) -> float:
    """
    低频质量 D_N = μ{|ξ| ≤ N}（闭球，包含边界上的原子）。
    """
    if N < 0:
        raise DomainError("截断频率必须非负", N=N)
    if mu.kind is SpectralKind.RIESZ_DENSITY:
        return mu.lambda_beta * sphere_area(mu.d) * N**mu.beta / mu.beta
    if mu.kind is SpectralKind.LEBESGUE_1D:
        return 2.0 * N
    if mu.kind is SpectralKind.ATOMIC:
        return float(np.sum(mu.atom_masses[mu.atom_norms <= N]))
    return radial_integral(mu, lambda r: np.ones_like(r), upper=N)


def threshold_level(d: int, p: int, lam: float, gamma_t: float) -> float:
    """阈值 τ = (2π)^d/(32(p-1)λ²Γ_t)；λ = 0 或 Γ_t = 0 时为 inf。"""
    denominator = 32 * (p - 1) * lam**2 * gamma_t
    if denominator == 0:
        return math.inf
    return (2 * math.pi) ** d / denominator


def n_threshold(mu: SpectralMeasure, p: int, lam: float, gamma_t: float) -> float:
    """
    阈值频率 N_t = inf{N ≥ 0: C_N ≤ τ}。

    Riesz 密度从闭式解附近开始；其他测度从 N=1 开始几何扩大区间直到
    C_N ≤ τ（上限1e12）。最后按相对误差1e-10二分。
    返回的 N 满足 C_N ≤ τ。

    参数:
        mu: 谱测度
        p: 矩的阶数，p ≥ 2
        lam: 耦合常数 λ ≥ 0
        gamma_t: Γ_t ≥ 0

    返回:
        N_t
    """
    if p < 2:
        raise DomainError("矩的阶数必须满足 p ≥ 2", p=p)
    if lam < 0 or gamma_t < 0:
        raise DomainError("要求 λ ≥ 0 且 Γ_t ≥ 0", lam=lam, gamma_t=gamma_t)
    tau = threshold_level(mu.d, p, lam, gamma_t)
    if c_n(mu, 0.0) <= tau:
        return 0.0

    if mu.kind is SpectralKind.RIESZ_DENSITY:
        lo, hi = _riesz_bracket(mu, tau)
    else:
        lo, hi = 0.0, 1.0
        while c_n(mu, hi) > tau:
            lo, hi = hi, hi * 2
            if hi > BRACKET_CAP:
                raise NoFiniteThreshold("C_N 在 N ≤ 1e12 范围内没有降到阈值以下", tau=tau, kind=mu.kind.value)
    logger.debug(f"🔍 N_t 二分区间 [{lo}, {hi}]，τ = {tau:.6g}")

    while hi - lo > BISECTION_RTOL * hi:
        mid = 0.5 * (lo + hi)
        if c_n(mu, mid) <= tau:
            hi = mid
        else:
            lo = mid
    return hi


def _riesz_bracket(mu: SpectralMeasure, tau: float):
    # C_N = K·N^{β-2}/(2-β) 可以直接反解，只需在闭式解附近修正舍入
    if tau == 0:
        raise NoFiniteThreshold("τ = 0 时 C_N 没有有限的阈值", tau=tau, kind=mu.kind.value)
    K = mu.lambda_beta * sphere_area(mu.d) / (2 - mu.beta)
    log_N = math.log(K / tau) / (2 - mu.beta)
    if log_N > math.log(np.finfo(float).max) - 1:
        raise NoFiniteThreshold("N_t 超出浮点数范围", tau=tau, kind=mu.kind.value)
    closed = math.exp(log_N)
    lo, hi = closed * (1 - 1e-8), closed * (1 + 1e-8)
    while c_n(mu, hi) > tau:
        lo, hi = hi, hi * 2
    while lo > 0 and c_n(mu, lo) <= tau:
        lo, hi = lo / 2, lo
    return lo, hi


def theta_scale(mu: SpectralMeasure, p: int, lam: float, gamma_t: float):
    """
    θ_t = sqrt(D_{N_t}/C_{N_t})。

    返回:
        (θ_t, N_t, C_{N_t}, D_{N_t})；C = inf 时 θ = 0，C = 0 而 D > 0 时
        抛出 ScaleUndefined。
    """
    N_t = n_threshold(mu, p, lam, gamma_t)
    C = c_n(mu, N_t)
    D = d_n(mu, N_t)
    if math.isinf(C):
        return 0.0, N_t, C, D
    if C == 0:
        if D == 0:
            return 0.0, N_t, C, D
        raise ScaleUndefined("C_{N_t} = 0，θ_t 为无穷（原子谱测度集中在原点）", N_t=N_t, D=D)
    return math.sqrt(D / C), N_t, C, D


def eta_scale(gamma: TimeCovariance, beta: float, t: float, delta: float) -> float:
    """η_t = Γ_{tδ²}^{1/(2-β)}。"""
    if not 0 < delta < 1:
        raise DomainError("δ 必须在 (0,1) 内", delta=delta)
    if not 0 <= beta < 2:
        raise DomainError("尺度指数要求 0 ≤ β < 2", beta=beta)
    return big_gamma(gamma, t * delta**2) ** (1 / (2 - beta))


def vartheta_scale(gamma: TimeCovariance, beta: float, t: float) -> float:
    """ϑ_t = Γ_t^{1/(2-β)}。"""
    if not 0 <= beta < 2:
        raise DomainError("尺度指数要求 0 ≤ β < 2", beta=beta)
    return big_gamma(gamma, t) ** (1 / (2 - beta))


def scale_functions(
    mu: SpectralMeasure,
    model: "ModelParams",
    gamma: TimeCovariance,
    t: float,
    delta: Optional[float] = None,
    beta: Optional[float] = None,
) -> SpectralQuantities:
    """
    计算 t 时刻的全部尺度函数。

    参数:
        mu: 谱测度
        model: 模型参数（使用 p 与 λ）
        gamma: 时间协方差
        t: 时间
        delta: 下前沿的时间比例 δ ∈ (0,1)，给出时计算 η_t
        beta: 空间核的尺度指数，给出时计算 η_t 与 ϑ_t

    返回:
        SpectralQuantities
    """
    gamma_t = big_gamma(gamma, t)
    theta, N_t, C, D = theta_scale(mu, model.p, model.lam, gamma_t)
    eta = vartheta = None
    if beta is not None:
        vartheta = vartheta_scale(gamma, beta, t)
        if delta is not None:
            eta = eta_scale(gamma, beta, t, delta)
    return SpectralQuantities(
        N=N_t,
        C_N=C,
        D_N=D,
        gamma_t=gamma_t,
        N_t=N_t,
        tau=threshold_level(mu.d, model.p, model.lam, gamma_t),
        theta=theta,
        eta=eta,
        vartheta=vartheta,
        delta=delta,
    )


def polar_gaussian_constant(d: int, beta: float) -> float:
    """∫_{R^d} e^{-|η|²}|η|^{β-d}dη = π^{d/2}Γ(β/2)/Γ(d/2)。"""
    if not beta > 0:
        raise DomainError("极坐标常数要求 β > 0", beta=beta)
    return math.pi ** (d / 2) * gamma_fn(beta / 2) / gamma_fn(d / 2)


def polar_gaussian_quadrature(d: int, beta: float) -> float:
    """同一常数的径向积分 S_{d-1}∫_0^∞ e^{-r²} r^{β-1} dr。"""
    # [0,1] 上用代数权重 r^{β-1} 处理原点奇点
    head, _ = integrate.quad(lambda r: math.exp(-r * r), 0.0, 1.0, weight="alg", wvar=(beta - 1, 0.0))
    tail, _ = integrate.quad(lambda r: math.exp(-r * r) * r ** (beta - 1), 1.0, math.inf, epsabs=0.0, epsrel=1e-13)
    return sphere_area(d) * (head + tail)
