"""
闭式界限与辅助引理。

上前沿的矩上界、下前沿常数 C_{β,δ}、Riesz 核的上前沿、一维白噪声的
上下前沿、支撑半径限制、极值引理、热核夹逼引理和单纯形积分引理。
所有公式按原样求值，不修正已发表的常数。
"""

import math
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Optional, Tuple

import numpy as np
from loguru import logger
from scipy import integrate, special

from .errors import DomainError, IdentityMismatch, NotApplicable
from .kernels import (
    SpaceCovariance,
    SpaceFamily,
    SpectralKind,
    SpectralMeasure,
    TimeCovariance,
    big_gamma,
    gamma_infinity,
    heat_ball_integral,
    riesz_fourier_constant,
)
from .spectral import c_n, d_n, scale_functions
from .special_fn import bessel_first_zero, bessel_index, gamma_fn, unit_ball_volume

# 下前沿证明中印刷的对称化系数；数值上正确的系数为2，见 front_lab.time_double_integral
PRINTED_SYMMETRIZATION_FACTOR = 4
IDENTITY_RTOL = 1e-12
SANDWICH_SLACK = 1e-9

PROFILES = ("indicator", "gaussian_bump", "unit")


@dataclass(frozen=True)
class InitialCondition:
    """
    初值 u_0。

    indicator: level·1{|y| ≤ M}；gaussian_bump: sup_norm·exp(-|y|²/(2w²))
    截断在 B_M 上；unit: u_0 ≡ 1，仅用于零方差预言检查（非紧支撑）。
    ``r`` 为支撑比例，u_0 的支撑包含在 B_{rM} 中。
    """

    profile: str = "indicator"
    M: float = 1.0
    r: float = 1.0
    level: float = 1.0
    sup_norm: Optional[float] = None
    width: float = 1.0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise DomainError("未知的初值类型", profile=self.profile)
        if not self.M > 0:
            raise DomainError("支撑半径必须满足 M > 0", M=self.M)
        if self.r < 1:
            raise DomainError("支撑比例必须满足 r ≥ 1", r=self.r)
        if not self.width > 0:
            raise DomainError("高斯初值宽度必须为正", width=self.width)
        if self.sup_norm is None:
            object.__setattr__(self, "sup_norm", self.level if self.profile != "gaussian_bump" else self.level * math.exp(self.M**2 / (2 * self.width**2)))
        if not 0 < self.level <= self.sup_norm:
            raise DomainError("初值下界必须满足 0 < C_u0 ≤ ‖u_0‖∞", level=self.level, sup_norm=self.sup_norm)

    @property
    def is_test_mode(self) -> bool:
        return self.profile == "unit"

    @property
    def support_radius(self) -> float:
        return math.inf if self.is_test_mode else self.r * self.M

    def radial(self, r):
        """u_0 作为 |y| 的函数（向量化）。"""
        r = np.asarray(r, dtype=float)
        if self.profile == "unit":
            value = np.ones_like(r)
        elif self.profile == "indicator":
            value = np.where(r <= self.M, self.level, 0.0)
        else:
            value = np.where(r <= self.M, self.sup_norm * np.exp(-(r**2) / (2 * self.width**2)), 0.0)
        return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class ModelParams:
    """模型参数: 维数 d、耦合常数 λ、矩的阶数 p 与初值。"""

    d: int = 1
    lam: float = 1.0
    p: int = 2
    u0: InitialCondition = field(default_factory=InitialCondition)

    def __post_init__(self):
        if self.d < 1:
            raise DomainError("维数必须为正整数", d=self.d)
        if self.lam < 0:
            raise DomainError("耦合常数必须满足 λ ≥ 0", lam=self.lam)
        if int(self.p) != self.p or self.p < 2:
            raise DomainError("矩的阶数必须是 ≥ 2 的整数", p=self.p)


@dataclass(frozen=True)
class FrontBounds:
    """全部闭式前沿常数；不适用的项为 None。"""

    nu_bar_cap: float = 1.0
    lower_front: Optional[float] = None
    riesz_upper: Optional[float] = None
    white_upper: Optional[float] = None
    white_lower: Optional[float] = None
    C_beta_delta: Optional[float] = None
    B_const: Optional[float] = None
    j_nu: Optional[float] = None
    M_min: Optional[float] = None
    printed_symmetrization_factor: int = PRINTED_SYMMETRIZATION_FACTOR

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RieszUpperFront:
    """Riesz 核上前沿 ῡ(p) 的界与级数常数 B。"""

    value: float
    B: float


def _check_beta(beta: float, d: int, allow_zero: bool = False):
    lower_ok = beta >= 0 if allow_zero else beta > 0
    if not (lower_ok and beta < min(2, d)):
        raise DomainError("β 超出范围 (0, min(2,d))", beta=beta, d=d)


def _check_delta(delta: float):
    if not 0 < delta < 1:
        raise DomainError("δ 必须在 (0,1) 内", delta=delta)


def moment_upper_bound(
    model: ModelParams,
    mu: SpectralMeasure,
    gamma: TimeCovariance,
    t: float,
    x,
    kappa: float = 1.0,
) -> float:
    """
    矩上界的对数:
    log[2^{p/2} e^{(p/4)tD/C} (2πt)^{-dp/4} e^{-|x|²p/(4t(ϰ+1))} e^{M²p/(4tϰ)} ω_d^{p/2} M^{dp/2} ‖u_0‖∞^p]。

    参数:
        model: 模型参数
        mu: 谱测度
        gamma: 时间协方差
        t: 时间，t > 0
        x: 空间点（或其范数）
        kappa: 松弛参数 ϰ > 0

    返回:
        对数尺度的上界
    """
    if not t > 0:
        raise DomainError("矩上界要求 t > 0", t=t)
    if not kappa > 0:
        raise DomainError("松弛参数必须满足 ϰ > 0", kappa=kappa)
    p, d = model.p, model.d
    M = model.u0.support_radius
    x_sq = float(np.sum(np.asarray(x, dtype=float) ** 2))
    quantities = scale_functions(mu, model, gamma, t)
    rate = (p / 4) * t * quantities.theta**2
    log_bound = (
        (p / 2) * math.log(2)
        + rate
        - (d * p / 4) * math.log(2 * math.pi * t)
        - x_sq * p / (4 * t * (kappa + 1))
        + M**2 * p / (4 * t * kappa)
        + (p / 2) * math.log(unit_ball_volume(d))
        + (d * p / 2) * math.log(M)
        + p * math.log(model.u0.sup_norm)
    )
    logger.debug(f"📈 矩上界: 速率项 {rate:.6g}，对数界 {log_bound:.6g}")
    return log_bound


def riesz_series_constant(d: int, beta: float) -> float:
    """级数常数 B = Λ_β Γ(β/2)Γ(1-β/2)/(2^{d-2}π^{d/2}Γ(d/2))。"""
    _check_beta(beta, d)
    lambda_beta = riesz_fourier_constant(d, beta)
    return lambda_beta * gamma_fn(beta / 2) * gamma_fn(1 - beta / 2) / (2 ** (d - 2) * math.pi ** (d / 2) * gamma_fn(d / 2))


def riesz_upper_front(d: int, beta: float, lam: float, p: int) -> RieszUpperFront:
    """
    Riesz 核的上前沿界
    ῡ(p) ≤ 2√2 (Γ((d-β)/2)Γ(1-β/2)/Γ(d/2))^{1/(2-β)} (p-1)^{1/(2-β)} λ^{2/(2-β)}。

    同时校验 √2·(B(p-1)λ²)^{1/(2-β)} 与上式在1e-12相对误差内一致。
    """
    _check_beta(beta, d)
    exponent = 1 / (2 - beta)
    ratio = gamma_fn((d - beta) / 2) * gamma_fn(1 - beta / 2) / gamma_fn(d / 2)
    displayed = 2 * math.sqrt(2) * ratio**exponent * (p - 1) ** exponent * lam ** (2 * exponent)
    B = riesz_series_constant(d, beta)
    via_b = math.sqrt(2) * (B * (p - 1) * lam**2) ** exponent
    if displayed > 0 and abs(via_b - displayed) > IDENTITY_RTOL * displayed:
        raise IdentityMismatch("√2·B^{1/(2-β)} 与上前沿闭式不一致", displayed=displayed, via_b=via_b)
    return RieszUpperFront(value=displayed, B=B)


def riesz_moment_upper_bound(
    model: ModelParams,
    beta: float,
    gamma: TimeCovariance,
    t: float,
    x,
    kappa: float = 1.0,
) -> float:
    """
    Riesz 核的精细矩上界（对数）:
    (p/2)log(4/(2-β)) + (p/2)(B(p-1)λ²Γ_t)^{2/(2-β)} t - p|x|²/(4t(ϰ+1))
    + pM²/(4tϰ) + (p/2)log ω_d + (dp/2)log M - (dp/4)log(2πt)。
    """
    _check_beta(beta, model.d)
    if not (t > 0 and kappa > 0):
        raise DomainError("要求 t > 0 且 ϰ > 0", t=t, kappa=kappa)
    p, d = model.p, model.d
    M = model.u0.support_radius
    B = riesz_series_constant(d, beta)
    x_sq = float(np.sum(np.asarray(x, dtype=float) ** 2))
    return (
        (p / 2) * math.log(4 / (2 - beta))
        + (p / 2) * (B * (p - 1) * model.lam**2 * big_gamma(gamma, t)) ** (2 / (2 - beta)) * t
        - p * x_sq / (4 * t * (kappa + 1))
        + p * M**2 / (4 * t * kappa)
        + (p / 2) * math.log(unit_ball_volume(d))
        + (d * p / 2) * math.log(M)
        - (d * p / 4) * math.log(2 * math.pi * t)
        + p * math.log(model.u0.sup_norm)
    )


def lower_front_constant(d: int, beta: float, delta: float, envelope_c: float) -> float:
    """
    下前沿常数
    C_{β,δ} = 2[(β/2)^{β/(2-β)} - (β/2)^{2/(2-β)}](1-δ)^{2/(2-β)} δ j_ν^{-2β/(2-β)} C_Λ^{2/(2-β)} sqrt(2(1-δ))。
    """
    _check_beta(beta, d, allow_zero=True)
    _check_delta(delta)
    j_nu = bessel_first_zero(bessel_index(d))
    h = beta / 2
    e = 1 / (2 - beta)
    return (
        2
        * (h ** (beta * e) - h ** (2 * e))
        * (1 - delta) ** (2 * e)
        * delta
        * j_nu ** (-2 * beta * e)
        * envelope_c ** (2 * e)
        * math.sqrt(2 * (1 - delta))
    )


def lower_front_bound(model: ModelParams, envelope: SpaceCovariance, delta: float) -> float:
    """
    下前沿界 ν̲(p) ≥ sqrt(C_{β,δ}) λ^{2/(2-β)} (p-1)^{1/(2-β)}。

    参数:
        model: 模型参数
        envelope: LowerRieszEnvelope 核（C_Λ, R, β）
        delta: δ ∈ (0,1)
    """
    beta, c_lambda = _envelope_parameters(envelope, model.d)
    constant = lower_front_constant(model.d, beta, delta, c_lambda)
    e = 1 / (2 - beta)
    return math.sqrt(constant) * model.lam ** (2 * e) * (model.p - 1) ** e


def _envelope_parameters(envelope: SpaceCovariance, d: int) -> Tuple[float, float]:
    if envelope.family is SpaceFamily.LOWER_RIESZ_ENVELOPE:
        beta, c_lambda = envelope.beta, envelope.envelope_c
    elif envelope.family is SpaceFamily.RIESZ:
        beta, c_lambda = envelope.beta, 1.0
    else:
        raise DomainError("下前沿需要 Riesz 型下界包络", family=envelope.family.value)
    _check_beta(beta, d, allow_zero=True)
    return beta, c_lambda


def small_ball_radius(model: ModelParams, envelope: SpaceCovariance, delta: float, gamma_value: float) -> float:
    """
    下前沿证明中最优的小球半径
    ε = (2^{β-1}j_ν²/(βλ²(p-1)(1-δ)Γ C_Λ))^{1/(2-β)}。
    """
    beta, c_lambda = _envelope_parameters(envelope, model.d)
    _check_delta(delta)
    if beta == 0 or model.lam == 0 or gamma_value <= 0:
        raise DomainError("小球半径要求 β > 0、λ > 0 且 Γ > 0", beta=beta, lam=model.lam, gamma=gamma_value)
    j_nu = bessel_first_zero(bessel_index(model.d))
    base = 2 ** (beta - 1) * j_nu**2 / (beta * model.lam**2 * (model.p - 1) * (1 - delta) * gamma_value * c_lambda)
    return base ** (1 / (2 - beta))


def lower_front_rate(model: ModelParams, envelope: SpaceCovariance, gamma: TimeCovariance, t: float, delta: float) -> float:
    """下界指数中的增长项 C_{β,δ} λ^{4/(2-β)} p (p-1)^{2/(2-β)} t Γ_{tδ²}^{2/(2-β)}。"""
    beta, c_lambda = _envelope_parameters(envelope, model.d)
    constant = lower_front_constant(model.d, beta, delta, c_lambda)
    e = 2 / (2 - beta)
    return constant * model.lam ** (2 * e) * model.p * (model.p - 1) ** e * t * big_gamma(gamma, t * delta**2) ** e


def white1d_fronts(lam: float, p: int, delta: float) -> Tuple[float, float]:
    """
    一维空间白噪声的前沿界:
    上界 2√2(p-1)λ²，下界 2√2/(e²π^{3/2})(1-δ)^{3/2}δ^{1/2}(p-1)λ²。
    """
    _check_delta(delta)
    if int(p) != p or p < 2:
        raise DomainError("矩的阶数必须是 ≥ 2 的整数", p=p)
    if lam < 0:
        raise DomainError("耦合常数必须满足 λ ≥ 0", lam=lam)
    scale = (p - 1) * lam**2
    upper = 2 * math.sqrt(2) * scale
    lower = 2 * math.sqrt(2) / (math.e**2 * math.pi**1.5) * (1 - delta) ** 1.5 * delta**0.5 * scale
    return upper, lower


def m_restriction(
    model: ModelParams,
    envelope: Optional[SpaceCovariance],
    delta: float,
    gamma_inf: float,
) -> float:
    """
    Γ_∞ 有限时对支撑半径的附加限制。

    包络情形: R ∧ M ≥ 2(2^{β-1}j_ν²/(βλ²(p-1)(1-δ)Γ_∞C_Λ))^{1/(2-β)}；
    白噪声情形 (envelope 为 None 或白噪声核): M ≥ √2π^{5/2}e²/(4λ²(p-1)(1-δ)Γ_∞)。

    返回:
        最小允许的 M（包络情形为 R ∧ M）
    """
    _check_delta(delta)
    if math.isinf(gamma_inf):
        raise NotApplicable("lim Γ_t = ∞，不需要对 M 加限制", gamma_inf=gamma_inf)
    if not gamma_inf > 0:
        raise DomainError("Γ_∞ 必须为正", gamma_inf=gamma_inf)
    if model.lam == 0:
        return math.inf
    if envelope is None or envelope.family in (SpaceFamily.WHITE_1D, SpaceFamily.MOLLIFIED_WHITE):
        return math.sqrt(2) * math.pi**2.5 * math.e**2 / (4 * model.lam**2 * (model.p - 1) * (1 - delta) * gamma_inf)
    return 2 * small_ball_radius(model, envelope, delta, gamma_inf)


def max_lemma(A: float, B: float, beta: float) -> Tuple[float, float]:
    """
    f(x) = Ax^{-β} - Bx^{-2} 的最大值点与最大值。

    返回:
        (x* = (2B/(βA))^{1/(2-β)}, ((β/2)^{β/(2-β)} - (β/2)^{2/(2-β)}) A^{2/(2-β)} B^{-β/(2-β)})
    """
    if not (A > 0 and B > 0 and 0 < beta < 2):
        raise DomainError("极值引理要求 A, B > 0 且 0 < β < 2", A=A, B=B, beta=beta)
    e = 1 / (2 - beta)
    argmax = (2 * B / (beta * A)) ** e
    h = beta / 2
    value = (h ** (beta * e) - h ** (2 * e)) * A ** (2 * e) * B ** (-beta * e)
    return argmax, value


def heat_kernel_sandwich(t: float, M: float, x, kappa: float, d: int) -> Tuple[float, float, float]:
    """
    热核夹逼引理: lower ≤ ∫_{|y|≤M} p_t(y-x)dy ≤ upper。

    返回:
        (lower, integral, upper)，积分由径向自适应积分给出
    """
    if not (t > 0 and kappa > 0):
        raise DomainError("夹逼引理要求 t > 0 且 ϰ > 0", t=t, kappa=kappa)
    if M < 0:
        raise DomainError("球半径必须非负", M=M)
    if M == 0:
        return 0.0, 0.0, 0.0
    x_sq = float(np.sum(np.asarray(x, dtype=float) ** 2))
    base = (2 * math.pi * t) ** (-d / 2) * unit_ball_volume(d) * M**d
    lower = base * math.exp(-(kappa + 1) * x_sq / (2 * t) - M**2 * (1 + 1 / kappa) / (2 * t))
    upper = base * math.exp(-x_sq / (2 * t * (kappa + 1)) + M**2 / (2 * t * kappa))
    integral = heat_ball_integral(t, M, math.sqrt(x_sq), d, profile=lambda r: 1.0)
    if not (lower <= integral + SANDWICH_SLACK and integral <= upper + SANDWICH_SLACK):
        raise IdentityMismatch("热核夹逼不等式不成立", lower=lower, integral=integral, upper=upper)
    return lower, integral, upper


def _simplex_integral(rates: Tuple[float, ...], s: float) -> float:
    """∫_{w_i ≥ 0, Σw_i ≤ s} exp(-Σ a_i w_i) dw，逐层嵌套积分。"""
    a = rates[0]
    if len(rates) == 1:
        return s if a == 0 else -math.expm1(-a * s) / a
    rest = rates[1:]
    value, _ = integrate.quad(lambda w: math.exp(-a * w) * _simplex_integral(rest, s - w), 0.0, s, epsabs=1e-14, epsrel=1e-12)
    return value


def simplex_bound_check(mu: SpectralMeasure, N: float, t: float, n: int) -> Tuple[float, float, bool]:
    """
    单纯形引理的数值见证:
    ∫∫_{S_{t,n}} e^{-Σw_i|ξ_i|²} dw μ(dξ) ≤ Σ_k C(n,k) t^k/k! D_N^k C_N^{n-k}。

    返回:
        (lhs, rhs, holds)
    """
    if mu.kind is not SpectralKind.ATOMIC:
        raise DomainError("单纯形检查只接受原子谱测度")
    if n not in (1, 2, 3):
        raise DomainError("单纯形检查只支持 n ∈ {1,2,3}", n=n)
    norms_sq = mu.atom_norms**2
    masses = mu.atom_masses
    lhs = 0.0
    for combo in product(range(len(masses)), repeat=n):
        weight = float(np.prod(masses[list(combo)]))
        if weight == 0:
            continue
        lhs += weight * _simplex_integral(tuple(float(norms_sq[k]) for k in combo), t)
    C, D = c_n(mu, N), d_n(mu, N)
    rhs = sum(special.comb(n, k, exact=True) * t**k / math.factorial(k) * D**k * C ** (n - k) for k in range(n + 1))
    holds = lhs <= rhs * (1 + 1e-10)
    logger.debug(f"🔺 单纯形引理 n={n}: lhs={lhs:.6g}, rhs={rhs:.6g}")
    return lhs, rhs, holds


def front_bounds(
    model: ModelParams,
    gamma: TimeCovariance,
    lam_kernel: SpaceCovariance,
    delta: float,
    envelope: Optional[SpaceCovariance] = None,
) -> FrontBounds:
    """
    计算该模型适用的全部前沿常数。

    Riesz 核自身作为下界包络（C_Λ = 1, R = ∞）；白噪声核给出一维白噪声界。
    """
    _check_delta(delta)
    values = {"j_nu": bessel_first_zero(bessel_index(model.d))}
    family = lam_kernel.family
    if envelope is None and family in (SpaceFamily.RIESZ, SpaceFamily.LOWER_RIESZ_ENVELOPE):
        envelope = lam_kernel

    if envelope is not None:
        beta, c_lambda = _envelope_parameters(envelope, model.d)
        values["C_beta_delta"] = lower_front_constant(model.d, beta, delta, c_lambda)
        values["lower_front"] = lower_front_bound(model, envelope, delta)
    if family is SpaceFamily.RIESZ:
        riesz = riesz_upper_front(model.d, lam_kernel.beta, model.lam, model.p)
        values["riesz_upper"] = riesz.value
        values["B_const"] = riesz.B
    if family in (SpaceFamily.WHITE_1D, SpaceFamily.MOLLIFIED_WHITE) and model.d == 1:
        values["white_upper"], values["white_lower"] = white1d_fronts(model.lam, model.p, delta)

    gamma_inf = gamma_infinity(gamma)
    if math.isfinite(gamma_inf) and (envelope is not None or "white_upper" in values):
        try:
            values["M_min"] = m_restriction(model, envelope if envelope is not None else lam_kernel, delta, gamma_inf)
        except DomainError as exc:
            logger.warning(f"⚠️ 无法计算支撑半径限制: {exc}")
    return FrontBounds(**values)
