"""
噪声协方差核。

时间协方差 γ、空间协方差 Λ 的参数化族，它们的积分和谱测度 μ = FΛ，
以及热核在球上的积分。所有核对象构造后不可变，所有函数都是纯函数。
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from loguru import logger
from scipy import integrate, special, stats

from .errors import (
    DiracPointwiseEval,
    DomainError,
    QuadratureFailure,
    WhitePointwiseEval,
)
from .special_fn import gamma_fn, sphere_area

QUAD_ABS_TOL = 1e-9


class TimeFamily(str, Enum):
    POWER_LAW = "PowerLaw"
    CONSTANT = "Constant"
    DIRAC = "Dirac"


class SpaceFamily(str, Enum):
    RIESZ = "Riesz"
    FRACTIONAL = "Fractional"
    CONSTANT_LEVEL = "ConstantLevel"
    MOLLIFIED_WHITE = "MollifiedWhite"
    WHITE_1D = "White1D"
    LOWER_RIESZ_ENVELOPE = "LowerRieszEnvelope"


class SpectralKind(str, Enum):
    RIESZ_DENSITY = "RieszDensity"
    ATOMIC = "Atomic"
    LEBESGUE_1D = "Lebesgue1D"
    TABULATED_RADIAL = "TabulatedRadial"


@dataclass(frozen=True)
class TimeCovariance:
    """时间协方差 γ。PowerLaw: |s|^{-α}；Constant: c；Dirac: δ(s)。"""

    family: TimeFamily
    alpha: Optional[float] = None
    level: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "family", TimeFamily(self.family))
        if self.family is TimeFamily.POWER_LAW:
            if self.alpha is None or not 0 < self.alpha < 1:
                raise DomainError("PowerLaw 时间核要求 0 < α < 1", alpha=self.alpha)
        elif self.family is TimeFamily.CONSTANT:
            if self.level is None:
                object.__setattr__(self, "level", 1.0)
            if not self.level > 0:
                raise DomainError("Constant 时间核要求 c > 0", level=self.level)

    @classmethod
    def power_law(cls, alpha: float) -> "TimeCovariance":
        return cls(TimeFamily.POWER_LAW, alpha=alpha)

    @classmethod
    def constant(cls, level: float = 1.0) -> "TimeCovariance":
        return cls(TimeFamily.CONSTANT, level=level)

    @classmethod
    def dirac(cls) -> "TimeCovariance":
        return cls(TimeFamily.DIRAC)


@dataclass(frozen=True)
class SpaceCovariance:
    """
    空间协方差 Λ。

    Riesz: |x|^{-β}；Fractional: ∏|x_i|^{2H_i-2}；ConstantLevel: Λ0；
    MollifiedWhite: 热核 p_ε；White1D: 一维Dirac；
    LowerRieszEnvelope: C_Λ|x|^{-β}·1{|x|≤R}，只作为下界包络使用。
    """

    family: SpaceFamily
    d: int = 1
    beta: Optional[float] = None
    hurst: Tuple[float, ...] = ()
    level: Optional[float] = None
    eps: Optional[float] = None
    envelope_c: Optional[float] = None
    envelope_r: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "family", SpaceFamily(self.family))
        object.__setattr__(self, "hurst", tuple(float(h) for h in self.hurst))
        family, d = self.family, self.d
        if d < 1:
            raise DomainError("维数必须为正整数", d=d)
        if family is SpaceFamily.RIESZ:
            if self.beta is None or not 0 < self.beta < min(2, d):
                raise DomainError("Riesz 核要求 0 < β < min(2,d)", beta=self.beta, d=d)
        elif family is SpaceFamily.FRACTIONAL:
            if len(self.hurst) != d or not all(0.5 < h < 1 for h in self.hurst):
                raise DomainError("Fractional 核要求 d 个 Hurst 指数且都在 (1/2,1) 内", hurst=self.hurst, d=d)
            beta = 2 * d - 2 * sum(self.hurst)
            if not 0 < beta < 2:
                raise DomainError("Fractional 核要求 β = 2d-2ΣH ∈ (0,2)", beta=beta)
            object.__setattr__(self, "beta", beta)
        elif family is SpaceFamily.CONSTANT_LEVEL:
            if self.level is None or not self.level > 0:
                raise DomainError("ConstantLevel 核要求 Λ0 > 0", level=self.level)
        elif family is SpaceFamily.MOLLIFIED_WHITE:
            if self.eps is None or not self.eps > 0:
                raise DomainError("MollifiedWhite 核要求 ε > 0", eps=self.eps)
        elif family is SpaceFamily.WHITE_1D:
            if d != 1:
                raise DomainError("White1D 只在 d = 1 时有定义", d=d)
        elif family is SpaceFamily.LOWER_RIESZ_ENVELOPE:
            if self.beta is None or not 0 <= self.beta < min(2, d):
                raise DomainError("下界包络要求 0 ≤ β < min(2,d)", beta=self.beta, d=d)
            if self.envelope_c is None or not self.envelope_c > 0:
                raise DomainError("下界包络要求 C_Λ > 0", envelope_c=self.envelope_c)
            if self.envelope_r is None or not self.envelope_r > 0:
                raise DomainError("下界包络要求 R > 0", envelope_r=self.envelope_r)

    @classmethod
    def riesz(cls, beta: float, d: int = 1) -> "SpaceCovariance":
        return cls(SpaceFamily.RIESZ, d=d, beta=beta)

    @classmethod
    def fractional(cls, hurst) -> "SpaceCovariance":
        hurst = tuple(hurst)
        return cls(SpaceFamily.FRACTIONAL, d=len(hurst), hurst=hurst)

    @classmethod
    def constant_level(cls, level: float = 1.0, d: int = 1) -> "SpaceCovariance":
        return cls(SpaceFamily.CONSTANT_LEVEL, d=d, level=level)

    @classmethod
    def mollified_white(cls, eps: float, d: int = 1) -> "SpaceCovariance":
        return cls(SpaceFamily.MOLLIFIED_WHITE, d=d, eps=eps)

    @classmethod
    def white_1d(cls) -> "SpaceCovariance":
        return cls(SpaceFamily.WHITE_1D, d=1)

    @classmethod
    def envelope(cls, c: float, r: float, beta: float, d: int) -> "SpaceCovariance":
        return cls(SpaceFamily.LOWER_RIESZ_ENVELOPE, d=d, beta=beta, envelope_c=c, envelope_r=r)


@dataclass(frozen=True)
class SpectralMeasure:
    """
    谱测度 μ。

    RieszDensity: Λ_β|ξ|^{β-d}dξ；Atomic: Σ m_k δ_{ξ_k}；Lebesgue1D: dξ；
    TabulatedRadial: ρ(|ξ|)dξ，ρ 在 ``radii`` 上给出，表外为0。
    """

    kind: SpectralKind
    d: int = 1
    beta: Optional[float] = None
    lambda_beta: Optional[float] = None
    atoms: Tuple[Tuple[Tuple[float, ...], float], ...] = ()
    radii: Tuple[float, ...] = ()
    density: Tuple[float, ...] = ()
    atom_norms: np.ndarray = field(default=None, repr=False, compare=False)
    atom_masses: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", SpectralKind(self.kind))
        if self.kind is SpectralKind.RIESZ_DENSITY:
            if self.lambda_beta is None:
                object.__setattr__(self, "lambda_beta", riesz_fourier_constant(self.d, self.beta))
        elif self.kind is SpectralKind.ATOMIC:
            atoms = tuple((tuple(float(c) for c in np.atleast_1d(loc)), float(mass)) for loc, mass in self.atoms)
            for loc, mass in atoms:
                if len(loc) != self.d:
                    raise DomainError("原子位置维数与 d 不一致", location=loc, d=self.d)
                if not (mass >= 0 and math.isfinite(mass)):
                    raise DomainError("原子质量必须为非负有限数", mass=mass)
            object.__setattr__(self, "atoms", atoms)
            norms = np.array([math.hypot(*loc) for loc, _ in atoms], dtype=float)
            masses = np.array([mass for _, mass in atoms], dtype=float)
            object.__setattr__(self, "atom_norms", norms)
            object.__setattr__(self, "atom_masses", masses)
        elif self.kind is SpectralKind.LEBESGUE_1D:
            if self.d != 1:
                raise DomainError("Lebesgue1D 只在 d = 1 时有定义", d=self.d)
        elif self.kind is SpectralKind.TABULATED_RADIAL:
            radii = np.asarray(self.radii, dtype=float)
            density = np.asarray(self.density, dtype=float)
            if radii.shape != density.shape or radii.size < 2:
                raise DomainError("径向表格长度不一致或过短", n_radii=radii.size, n_density=density.size)
            if np.any(np.diff(radii) <= 0) or radii[0] < 0:
                raise DomainError("径向网格必须从非负数开始严格递增")
            if not (np.all(np.isfinite(density)) and np.all(density >= 0)):
                raise DomainError("谱密度必须为非负有限数")
            object.__setattr__(self, "radii", tuple(radii.tolist()))
            object.__setattr__(self, "density", tuple(density.tolist()))

    @classmethod
    def riesz(cls, beta: float, d: int = 1) -> "SpectralMeasure":
        return cls(SpectralKind.RIESZ_DENSITY, d=d, beta=beta)

    @classmethod
    def atomic(cls, atoms, d: int = 1) -> "SpectralMeasure":
        return cls(SpectralKind.ATOMIC, d=d, atoms=tuple(atoms))

    @classmethod
    def lebesgue_1d(cls) -> "SpectralMeasure":
        return cls(SpectralKind.LEBESGUE_1D, d=1)

    @classmethod
    def tabulated_radial(cls, radii, density, d: int = 1) -> "SpectralMeasure":
        return cls(SpectralKind.TABULATED_RADIAL, d=d, radii=tuple(radii), density=tuple(density))


@dataclass(frozen=True)
class DalangResult:
    """Dalang 积分 ∫μ(dξ)/(1+|ξ|²) 的值；发散时 value 为 inf 并给出原因。"""

    value: float
    reason: Optional[str] = None

    @property
    def admissible(self) -> bool:
        return math.isfinite(self.value)


# 时间核


def gamma_eval(gamma: TimeCovariance, s):
    """
    γ(|s|) 的逐点值。

    参数:
        gamma: 时间协方差
        s: 实数或数组

    返回:
        非负实数（或同形状数组）
    """
    if gamma.family is TimeFamily.DIRAC:
        raise DiracPointwiseEval("Dirac 时间核没有逐点值，请使用 big_gamma 或配对积分")
    s_abs = np.abs(np.asarray(s, dtype=float))
    if gamma.family is TimeFamily.CONSTANT:
        value = np.full_like(s_abs, gamma.level)
    else:
        with np.errstate(divide="ignore"):
            value = s_abs ** (-gamma.alpha)
    return float(value) if value.ndim == 0 else value


def big_gamma(gamma: TimeCovariance, t: float) -> float:
    """
    Γ_t = ∫_0^t γ(s)ds 的闭式。

    Dirac 时间核按约定 Γ_t = 1/2。
    """
    if t < 0:
        raise DomainError("Γ_t 要求 t ≥ 0", t=t)
    if gamma.family is TimeFamily.DIRAC:
        return 0.5
    if gamma.family is TimeFamily.CONSTANT:
        return gamma.level * t
    return t ** (1 - gamma.alpha) / (1 - gamma.alpha)


def big_gamma_quadrature(gamma: TimeCovariance, t: float) -> float:
    """
    用自适应积分计算 Γ_t，PowerLaw 在奇异端点处做代换 u = s^{1-α}。
    """
    if t < 0:
        raise DomainError("Γ_t 要求 t ≥ 0", t=t)
    if gamma.family is TimeFamily.DIRAC:
        return 0.5
    if t == 0:
        return 0.0
    if gamma.family is TimeFamily.CONSTANT:
        value, abserr = integrate.quad(lambda s: gamma_eval(gamma, s), 0.0, t, epsabs=0.0, epsrel=1e-13)
    else:
        q = 1 - gamma.alpha

        def transformed(u: float) -> float:
            s = u ** (1 / q)
            return gamma_eval(gamma, s) * u ** (gamma.alpha / q) / q

        value, abserr = integrate.quad(transformed, 0.0, t**q, epsabs=0.0, epsrel=1e-13)
    logger.debug(f"📐 Γ_{t} 积分值 {value:.12g}，误差估计 {abserr:.2e}")
    return float(value)


def gamma_infinity(gamma: TimeCovariance) -> float:
    """Γ_∞ = lim Γ_t；只有 Dirac 有限 (1/2)。"""
    if gamma.family is TimeFamily.DIRAC:
        return 0.5
    return math.inf


# 空间核


def heat_kernel(t: float, x, d: Optional[int] = None):
    """d维热核 p_t(x) = (2πt)^{-d/2} exp(-|x|²/(2t))，x 的最后一维为空间维。"""
    x = np.asarray(x, dtype=float)
    if d is None:
        d = 1 if x.ndim == 0 else x.shape[-1]
    sq = x**2 if x.ndim == 0 else np.sum(x**2, axis=-1)
    value = (2 * math.pi * t) ** (-d / 2) * np.exp(-sq / (2 * t))
    return float(value) if np.ndim(value) == 0 else value


def lambda_eval(lam: SpaceCovariance, x):
    """
    Λ(x) 的逐点值（扩展实数，奇点处为 inf）。

    参数:
        lam: 空间协方差
        x: 形如 (..., d) 的点；d = 1 时也接受标量

    返回:
        非负扩展实数或数组
    """
    if lam.family is SpaceFamily.WHITE_1D:
        raise WhitePointwiseEval("White1D 没有逐点值，请使用 MollifiedWhite 替代")
    x = np.asarray(x, dtype=float)
    if lam.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != lam.d:
        raise DomainError("点的维数与核的维数不一致", shape=x.shape, d=lam.d)

    with np.errstate(divide="ignore", invalid="ignore"):
        if lam.family is SpaceFamily.FRACTIONAL:
            exponents = 2 * np.asarray(lam.hurst) - 2
            value = np.prod(np.abs(x) ** exponents, axis=-1)
        else:
            r = np.sqrt(np.sum(x**2, axis=-1))
            value = lambda_radial(lam, r)
    return float(value) if np.ndim(value) == 0 else value


def lambda_radial(lam: SpaceCovariance, r):
    """径向族的 Λ 作为 |x| 的函数。"""
    r = np.asarray(r, dtype=float)
    family = lam.family
    with np.errstate(divide="ignore"):
        if family is SpaceFamily.RIESZ:
            value = r ** (-lam.beta)
        elif family is SpaceFamily.CONSTANT_LEVEL:
            value = np.full_like(r, lam.level)
        elif family is SpaceFamily.MOLLIFIED_WHITE:
            value = (2 * math.pi * lam.eps) ** (-lam.d / 2) * np.exp(-(r**2) / (2 * lam.eps))
        elif family is SpaceFamily.LOWER_RIESZ_ENVELOPE:
            value = np.where(r <= lam.envelope_r, lam.envelope_c * r ** (-lam.beta), 0.0)
        elif family is SpaceFamily.WHITE_1D:
            raise WhitePointwiseEval("White1D 没有逐点值，请使用 MollifiedWhite 替代")
        else:
            raise DomainError("该空间核不是径向的", family=family.value)
    return value


def scaling_exponent(lam: SpaceCovariance) -> float:
    """η_t、ϑ_t 使用的齐次指数 β。"""
    if lam.family in (SpaceFamily.RIESZ, SpaceFamily.FRACTIONAL, SpaceFamily.LOWER_RIESZ_ENVELOPE):
        return float(lam.beta)
    if lam.family in (SpaceFamily.WHITE_1D, SpaceFamily.MOLLIFIED_WHITE):
        if lam.d != 1:
            raise DomainError("白噪声尺度只在 d = 1 时有定义", d=lam.d)
        return 1.0
    return 0.0


def riesz_fourier_constant(d: int, beta: float) -> float:
    """
    Riesz 核的 Fourier 常数 Λ_β = π^{d/2} 2^{d-β} Γ((d-β)/2)/Γ(β/2)。
    """
    if beta is None or not 0 < beta < d:
        raise DomainError("Λ_β 要求 0 < β < d", beta=beta, d=d)
    return math.pi ** (d / 2) * 2 ** (d - beta) * gamma_fn((d - beta) / 2) / gamma_fn(beta / 2)


def spectral_measure(lam: SpaceCovariance) -> SpectralMeasure:
    """空间协方差对应的谱测度。"""
    if lam.family is SpaceFamily.RIESZ:
        return SpectralMeasure.riesz(lam.beta, lam.d)
    if lam.family is SpaceFamily.CONSTANT_LEVEL:
        origin = (0.0,) * lam.d
        return SpectralMeasure.atomic([(origin, (2 * math.pi) ** lam.d * lam.level)], d=lam.d)
    if lam.family is SpaceFamily.WHITE_1D:
        return SpectralMeasure.lebesgue_1d()
    if lam.family is SpaceFamily.MOLLIFIED_WHITE:
        # Fp_ε(ξ) = exp(-ε|ξ|²/2)，截断在 e^{-40}
        r_max = math.sqrt(80.0 / lam.eps)
        radii = np.linspace(0.0, r_max, 4001)
        return SpectralMeasure.tabulated_radial(radii, np.exp(-lam.eps * radii**2 / 2), d=lam.d)
    raise DomainError("该空间核没有可用的谱测度", family=lam.family.value)


def radial_integral(
    mu: SpectralMeasure,
    weight: Callable,
    lower: Optional[float] = None,
    upper: float = math.inf,
) -> float:
    """
    ∫_{lower<|ξ|≤upper} weight(|ξ|) μ(dξ)，weight 为向量化的径向函数。

    ``lower`` 为 None 时积分区域为闭球 {|ξ| ≤ upper}（包含原点处的原子）。
    RieszDensity 与 Lebesgue1D 使用自适应积分，Atomic 精确求和，
    TabulatedRadial 使用梯形公式。
    """
    if mu.kind is SpectralKind.ATOMIC:
        mask = mu.atom_norms <= upper
        if lower is not None:
            mask &= mu.atom_norms > lower
        if not np.any(mask):
            return 0.0
        return float(np.sum(mu.atom_masses[mask] * weight(mu.atom_norms[mask])))
    lower = 0.0 if lower is None else lower
    if mu.kind is SpectralKind.TABULATED_RADIAL:
        radii = np.asarray(mu.radii)
        density = np.asarray(mu.density)
        lo = max(lower, radii[0])
        hi = min(upper, radii[-1])
        if hi <= lo:
            return 0.0
        grid = np.union1d(radii[(radii > lo) & (radii < hi)], [lo, hi])
        values = np.interp(grid, radii, density) * weight(grid) * grid ** (mu.d - 1)
        return float(sphere_area(mu.d) * integrate.trapezoid(values, grid))
    if mu.kind is SpectralKind.LEBESGUE_1D:
        prefactor, power = 2.0, 0.0
    else:
        prefactor, power = mu.lambda_beta * sphere_area(mu.d), mu.beta - 1
    value, abserr = integrate.quad(
        lambda r: weight(np.asarray(r)) * r**power, lower, upper, epsabs=0.0, epsrel=1e-11, limit=500
    )
    return float(prefactor * value)


def dalang_check(mu: SpectralMeasure) -> DalangResult:
    """
    检查 Dalang 条件，返回 ∫μ(dξ)/(1+|ξ|²)。

    RieszDensity 在 β ≥ 2 时高频发散，结果为 inf 并附原因。
    """
    if mu.kind is SpectralKind.RIESZ_DENSITY:
        if mu.beta >= 2:
            logger.warning(f"⚠️ Riesz 谱测度 β={mu.beta} ≥ 2，Dalang 积分在无穷远处发散")
            return DalangResult(math.inf, f"β = {mu.beta} ≥ 2 时 ∫|ξ|^(β-d)/(1+|ξ|²) 在无穷远处发散")
        # ∫_0^∞ r^{β-1}/(1+r²)dr = (π/2)/sin(πβ/2)
        value = mu.lambda_beta * sphere_area(mu.d) * (math.pi / 2) / math.sin(math.pi * mu.beta / 2)
        return DalangResult(value)
    if mu.kind is SpectralKind.LEBESGUE_1D:
        return DalangResult(math.pi)
    value = radial_integral(mu, lambda r: 1.0 / (1.0 + r**2))
    return DalangResult(value)


def heat_ball_integral(
    t: float,
    M: float,
    x_norm: float,
    d: int,
    profile: Optional[Callable] = None,
) -> float:
    """
    ∫_{|y|≤M} p_t(y-x) u(|y|) dy。

    ``profile`` 为 None 时 u 为球的示性函数，使用 Gaussian 分布函数
    (d=1) 或非中心 χ² 分布 (d≥2) 的闭式；否则对半径做一维自适应积分，
    角度部分用修正Bessel函数的闭式。

    参数:
        t: 时间，t > 0
        M: 球半径
        x_norm: |x|
        d: 维数
        profile: 径向权重函数 u(r)，可选

    返回:
        积分值
    """
    if not t > 0:
        raise DomainError("热核积分要求 t > 0", t=t)
    if M <= 0:
        return 0.0
    x_norm = abs(float(x_norm))

    if profile is None:
        if d == 1:
            s = math.sqrt(t)
            return float(special.ndtr((M - x_norm) / s) - special.ndtr((-M - x_norm) / s))
        if x_norm == 0.0:
            return float(stats.chi2.cdf(M**2 / t, d))
        return float(stats.ncx2.cdf(M**2 / t, d, x_norm**2 / t))

    nu = d / 2 - 1
    # z^{1-d/2} I_ν(z) 在 z → 0 时的极限
    limit0 = 1.0 / (2**nu * gamma_fn(nu + 1))

    def integrand(r: float) -> float:
        z = r * x_norm / t
        if z < 1e-12:
            angular = limit0 * math.exp(-z)
        else:
            angular = z ** (1 - d / 2) * float(special.ive(nu, z))
        gauss = math.exp(-((r - x_norm) ** 2) / (2 * t))
        return float(profile(r)) * r ** (d - 1) * t ** (-d / 2) * gauss * angular

    points = [x_norm] if 0 < x_norm < M else None
    value, abserr = integrate.quad(integrand, 0.0, M, epsabs=1e-13, epsrel=1e-12, limit=400, points=points)
    if abserr > QUAD_ABS_TOL:
        raise QuadratureFailure("热核球积分未达到 1e-9 绝对精度", abserr=abserr, t=t, M=M, x_norm=x_norm)
    return float(value)
