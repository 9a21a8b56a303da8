"""
前沿实验。

在 (ρ, t) 网格上计算归一化对数矩，给出经验前沿的区间，计算混沌级数
的逐项界，并与闭式界限比较。
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy import integrate, special

from .bounds import PRINTED_SYMMETRIZATION_FACTOR, FrontBounds, ModelParams, riesz_series_constant
from .errors import AllZeroMass, DomainError, IdentityMismatch, NoBracket, NotApplicable, ScaleUndefined
from .feynman_kac import MomentEstimate, QuadratureSpec, moment_estimate
from .kernels import (
    SpaceCovariance,
    SpectralKind,
    SpectralMeasure,
    TimeCovariance,
    TimeFamily,
    big_gamma,
    gamma_eval,
    scaling_exponent,
    spectral_measure,
)
from .spectral import c_n, eta_scale, n_threshold, scale_functions, vartheta_scale
from .special_fn import mittag_leffler_detail

CI_Z = 1.96
IDENTITY_RTOL = 1e-8

FRONT_CSV_HEADER = ["rho", "t", "scale_kind", "scale", "S_value", "ci_low", "ci_high", "value", "stderr", "n_rep", "clip_events"]


class ScaleKind(str, Enum):
    THETA = "theta"
    ETA = "eta"
    VARTHETA = "vartheta"


class Classification(str, Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"
    UNDECIDED = "UNDECIDED"


class Verdict(str, Enum):
    CONSISTENT = "CONSISTENT"
    INCONSISTENT = "INCONSISTENT"
    NOT_COMPARED = "NOT_COMPARED"


@dataclass(frozen=True)
class MonteCarloParams:
    """
    蒙特卡罗设置。

    ``tilt`` 为 True 时前沿扫描使用指向 -x 的漂移路径（见 moment_estimate）。
    """

    n_rep: int = 1000
    n_steps: int = 64
    seed: int = 0
    clip_scale: Optional[float] = 1.0
    workers: int = 1
    tilt: bool = True

    @property
    def quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(clip_scale=self.clip_scale)


@dataclass(frozen=True)
class FrontFunctional:
    """(1/(t·scale²))·log Ê u^p 在 |x| = ρ·t·scale 处的值及置信区间。"""

    rho: float
    t: float
    scale_kind: ScaleKind
    scale: float
    S_value: float
    ci_low: float
    ci_high: float
    estimate: Optional[MomentEstimate] = None

    def csv_row(self) -> list:
        est = self.estimate
        return [
            self.rho,
            self.t,
            self.scale_kind.value,
            self.scale,
            self.S_value,
            self.ci_low,
            self.ci_high,
            est.value if est else 0.0,
            est.stderr if est else 0.0,
            est.n_rep if est else 0,
            est.clip_events if est else 0,
        ]


@dataclass(frozen=True)
class ScanVerdict:
    rho: float
    classification: Classification
    trend: str


@dataclass(frozen=True)
class FrontScan:
    """一次网格扫描的全部结果。"""

    rho_grid: tuple
    t_grid: tuple
    scale_kind: ScaleKind
    rows: List[FrontFunctional]
    verdicts: List[ScanVerdict]

    def classification_of(self, rho: float) -> Classification:
        for verdict in self.verdicts:
            if verdict.rho == rho:
                return verdict.classification
        raise KeyError(rho)


@dataclass(frozen=True)
class FrontBracket:
    rho_minus: float
    rho_plus: float
    bisections: int = 0


@dataclass(frozen=True)
class ChaosTermBound:
    """混沌级数第 n 项的界；sharp_term 为对数凸性放缩之前的 Riesz 项。"""

    n: int
    term: float
    ratio: float
    sharp_term: Optional[float] = None


@dataclass(frozen=True)
class ChaosSeries:
    form: str
    terms: List[ChaosTermBound]
    total: float
    log_total: float
    asymptotic: Optional[float] = None
    regime: str = "series"


@dataclass(frozen=True)
class BoundVerdict:
    name: str
    bound: Optional[float]
    scale_kind: ScaleKind
    verdict: Verdict


# 每个闭式界限所在的尺度与方向
BOUND_SCALES = {
    "nu_bar_cap": (ScaleKind.THETA, "upper"),
    "riesz_upper": (ScaleKind.VARTHETA, "upper"),
    "white_upper": (ScaleKind.VARTHETA, "upper"),
    "lower_front": (ScaleKind.ETA, "lower"),
    "white_lower": (ScaleKind.ETA, "lower"),
}


def time_double_integral(gamma: TimeCovariance, t: float) -> float:
    """
    ∫_0^t∫_0^t γ(s-r)dsdr，分别用二重积分和对称化的一维形式
    2∫_0^t γ(u)(t-u)du 计算，两者相对误差须在1e-8以内。

    参数:
        gamma: 局部可积的时间协方差（Dirac 不接受）
        t: 时间

    返回:
        积分值（对称化形式）
    """
    if gamma.family is TimeFamily.DIRAC:
        raise DomainError("Dirac 时间核不是局部可积函数")
    if t < 0:
        raise DomainError("要求 t ≥ 0", t=t)
    if t == 0:
        return 0.0

    if gamma.family is TimeFamily.POWER_LAW:
        a = gamma.alpha

        def inner(s: float) -> float:
            # 对角线两侧分别用代数权重 (s-r)^{-α}、(r-s)^{-α}
            left = integrate.quad(lambda r: 1.0, 0.0, s, weight="alg", wvar=(0.0, -a))[0] if s > 0 else 0.0
            right = integrate.quad(lambda r: 1.0, s, t, weight="alg", wvar=(-a, 0.0))[0] if s < t else 0.0
            return left + right

        symmetrized = 2 * integrate.quad(lambda u: 1.0, 0.0, t, weight="alg", wvar=(-a, 1.0))[0]
    else:

        def inner(s: float) -> float:
            return integrate.quad(lambda r: gamma_eval(gamma, s - r), 0.0, t, epsabs=0.0, epsrel=1e-13)[0]

        symmetrized = 2 * integrate.quad(lambda u: gamma_eval(gamma, u) * (t - u), 0.0, t, epsabs=0.0, epsrel=1e-13)[0]

    brute, abserr = integrate.quad(inner, 0.0, t, epsabs=0.0, epsrel=1e-12, limit=200)
    if abs(brute - symmetrized) > IDENTITY_RTOL * abs(symmetrized):
        raise IdentityMismatch("二重积分与对称化形式不一致", brute=brute, symmetrized=symmetrized, t=t)

    printed = symmetrized * PRINTED_SYMMETRIZATION_FACTOR / 2
    logger.warning(
        f"⚠️ 对称化系数: 印刷的 {PRINTED_SYMMETRIZATION_FACTOR}∫γ(u)(t-u)du = {printed:.10g}，"
        f"数值验证的系数为 2，积分值 {symmetrized:.10g}"
    )
    return float(symmetrized)


def front_scale(
    model: ModelParams,
    gamma: TimeCovariance,
    lam: SpaceCovariance,
    t: float,
    scale_kind: ScaleKind,
    delta: float = 0.5,
    mu: Optional[SpectralMeasure] = None,
) -> float:
    """t 时刻的尺度函数 θ_t、η_t 或 ϑ_t。"""
    scale_kind = ScaleKind(scale_kind)
    if scale_kind is ScaleKind.THETA:
        mu = mu if mu is not None else spectral_measure(lam)
        return scale_functions(mu, model, gamma, t).theta
    beta = scaling_exponent(lam)
    if scale_kind is ScaleKind.ETA:
        return eta_scale(gamma, beta, t, delta)
    return vartheta_scale(gamma, beta, t)


def confidence_band(log_value: float, relative_stderr: float, denominator: float):
    """(log Ê + log1p(±z·stderr/Ê))/denominator；z·r ≥ 1 时下界为 -inf。"""
    spread = CI_Z * relative_stderr
    low = log_value + math.log1p(-spread) if spread < 1 else -math.inf
    high = log_value + math.log1p(spread)
    return low / denominator, high / denominator


def jensen_lower_bound(estimate: MomentEstimate) -> float:
    """
    log E u^p 的 Jensen 型置信下界（对数域）。

    log E[W] ≥ log P(命中) + E[log W | 命中]，两项分别取 z 倍标准误的
    下限。重尾权重使 stderr/Ê ≥ 1/z 时 confidence_band 的下界为 -inf，
    这个下界仍然有限。
    """
    if estimate.log_weight_mean is None:
        return -math.inf
    q = estimate.replica_hit_fraction
    q_low = q - CI_Z * math.sqrt(q * (1 - q) / estimate.n_rep)
    if q_low <= 0:
        return -math.inf
    return math.log(q_low) + estimate.log_weight_mean - CI_Z * estimate.log_weight_stderr


def normalized_log_moment(
    model: ModelParams,
    gamma: TimeCovariance,
    lam: SpaceCovariance,
    t: float,
    rho: float,
    scale_kind: ScaleKind,
    mc: MonteCarloParams,
    delta: float = 0.5,
    replica_offset: int = 0,
) -> FrontFunctional:
    """
    在第一坐标轴上 |x| = ρ·t·scale 处估计 log E u^p 并除以 t·scale²。

    置信下界取 confidence_band 与 jensen_lower_bound 中较大者。
    所有副本都落在支撑外时返回 S_value = -inf；λ = 0 时这是精确结论，
    上界也为 -inf，否则上界未知，记为 +inf。
    """
    if rho < 0:
        raise DomainError("前沿速度必须满足 ρ ≥ 0", rho=rho)
    scale_kind = ScaleKind(scale_kind)
    scale = front_scale(model, gamma, lam, t, scale_kind, delta)
    if not (scale > 0 and math.isfinite(scale)):
        raise ScaleUndefined("尺度函数为0或无穷，无法归一化", scale=scale, scale_kind=scale_kind.value)
    denominator = t * scale**2
    radius = rho * t * scale
    try:
        estimate = moment_estimate(
            model,
            gamma,
            lam,
            t,
            radius,
            mc.n_rep,
            mc.n_steps,
            mc.seed,
            spec=mc.quadrature,
            workers=mc.workers,
            replica_offset=replica_offset,
            tilt=mc.tilt,
        )
    except AllZeroMass as exc:
        logger.warning(f"⚠️ ρ={rho}, t={t}: {exc}")
        upper = -math.inf if model.lam == 0 else math.inf
        return FrontFunctional(rho, t, scale_kind, scale, -math.inf, -math.inf, upper)

    S_value = estimate.log_value / denominator
    ci_low, ci_high = confidence_band(estimate.log_value, estimate.relative_stderr, denominator)
    ci_low = min(max(ci_low, jensen_lower_bound(estimate) / denominator), S_value)
    return FrontFunctional(rho, t, scale_kind, scale, S_value, ci_low, ci_high, estimate)


def classify(rows: Sequence[FrontFunctional]) -> Classification:
    """按最大的两个 t 判定符号。"""
    latest = sorted(rows, key=lambda row: row.t)[-2:]
    if all(row.ci_low > 0 for row in latest):
        return Classification.POSITIVE
    if all(row.ci_high < 0 for row in latest):
        return Classification.NEGATIVE
    return Classification.UNDECIDED


def trend(rows: Sequence[FrontFunctional]) -> str:
    """S_value 随 t 的单调趋势。"""
    values = np.array([row.S_value for row in sorted(rows, key=lambda row: row.t)])
    values = values[np.isfinite(values)]
    if values.size < 2:
        return "insufficient"
    steps = np.diff(values)
    if np.all(steps > 0):
        return "increasing"
    if np.all(steps < 0):
        return "decreasing"
    if np.all(steps == 0):
        return "flat"
    return "mixed"


def _check_grid(grid: Sequence[float], name: str) -> tuple:
    grid = tuple(float(value) for value in grid)
    if not grid:
        raise DomainError("网格不能为空", grid=name)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("网格必须严格递增", grid=name, values=grid)
    return grid


def front_scan(
    model: ModelParams,
    gamma: TimeCovariance,
    lam: SpaceCovariance,
    rho_grid: Sequence[float],
    t_grid: Sequence[float],
    scale_kind: ScaleKind,
    mc: MonteCarloParams,
    delta: float = 0.5,
) -> FrontScan:
    """
    在 (ρ, t) 网格上计算归一化对数矩并对每个 ρ 判定符号。

    网格点按 (ρ, t) 顺序编号，第 k 个点使用副本编号 [k·n_rep, (k+1)·n_rep)。
    """
    rho_grid = _check_grid(rho_grid, "rho")
    t_grid = _check_grid(t_grid, "t")
    scale_kind = ScaleKind(scale_kind)
    rows: List[FrontFunctional] = []
    verdicts: List[ScanVerdict] = []
    for i, rho in enumerate(rho_grid):
        per_rho = []
        for j, t in enumerate(t_grid):
            offset = (i * len(t_grid) + j) * mc.n_rep
            per_rho.append(normalized_log_moment(model, gamma, lam, t, rho, scale_kind, mc, delta, replica_offset=offset))
        verdict = ScanVerdict(rho=rho, classification=classify(per_rho), trend=trend(per_rho))
        logger.info(f"📊 ρ={rho:.6g}: {verdict.classification.value}（{verdict.trend}）")
        rows.extend(per_rho)
        verdicts.append(verdict)
    return FrontScan(rho_grid=rho_grid, t_grid=t_grid, scale_kind=scale_kind, rows=rows, verdicts=verdicts)


def rho_classifier(
    model: ModelParams,
    gamma: TimeCovariance,
    lam: SpaceCovariance,
    t_grid: Sequence[float],
    scale_kind: ScaleKind,
    mc: MonteCarloParams,
    delta: float = 0.5,
    replica_base: int = 0,
) -> Callable[[float], Classification]:
    """二分细化用的单点判定函数，每次调用使用新的副本编号区间。"""
    t_grid = _check_grid(t_grid, "t")
    calls = {"count": 0}

    def classify_rho(rho: float) -> Classification:
        base = replica_base + calls["count"] * len(t_grid) * mc.n_rep
        calls["count"] += 1
        rows = [
            normalized_log_moment(model, gamma, lam, t, rho, scale_kind, mc, delta, replica_offset=base + j * mc.n_rep)
            for j, t in enumerate(t_grid)
        ]
        return classify(rows)

    return classify_rho


def estimate_front_bracket(
    scan: FrontScan,
    classifier: Optional[Callable[[float], Classification]] = None,
    max_bisections: int = 0,
) -> FrontBracket:
    """
    经验前沿区间 [ρ_-, ρ_+]: ρ_+ 为最小的 NEGATIVE，ρ_- 为其下方最大的
    POSITIVE。给出 classifier 时在区间内二分，遇到 UNDECIDED 即停止。
    """
    negatives = [v.rho for v in scan.verdicts if v.classification is Classification.NEGATIVE]
    if not negatives:
        raise NoBracket("扫描中没有 NEGATIVE 判定")
    rho_plus = min(negatives)
    positives = [v.rho for v in scan.verdicts if v.classification is Classification.POSITIVE and v.rho < rho_plus]
    if not positives:
        raise NoBracket("最小的 NEGATIVE 以下没有 POSITIVE 判定", rho_plus=rho_plus)
    rho_minus = max(positives)

    steps = 0
    if classifier is not None:
        while steps < max_bisections:
            mid = 0.5 * (rho_minus + rho_plus)
            outcome = classifier(mid)
            steps += 1
            logger.debug(f"🔍 二分 ρ={mid:.6g}: {outcome.value}")
            if outcome is Classification.POSITIVE:
                rho_minus = mid
            elif outcome is Classification.NEGATIVE:
                rho_plus = mid
            else:
                break
    return FrontBracket(rho_minus=rho_minus, rho_plus=rho_plus, bisections=steps)


def chaos_tail_bound(
    model: ModelParams,
    mu: SpectralMeasure,
    gamma: TimeCovariance,
    t: float,
    n_terms: int = 20,
    form: str = "general",
) -> ChaosSeries:
    """
    混沌级数的逐项界。

    general: term_n = ((p-1)·8λ²Γ_t C_{N_t}/(2π)^d)^{n/2}，N_t 的定义保证
    公比 ≤ 1/2，总和 ≤ 2。
    riesz: term_n = (B(p-1)λ²Γ_t)^{n/2} t^{n(2-β)/4}/Γ(n(2-β)/4+1)，总和为
    Mittag-Leffler 函数 E_{(2-β)/4}(z)；sharp_term 为放缩前的
    Γ(n(2-β)/2+1)^{-1/2} 形式。
    """
    if n_terms < 1:
        raise DomainError("至少需要一项", n_terms=n_terms)
    p, lam, d = model.p, model.lam, model.d
    gamma_t = big_gamma(gamma, t)

    if form == "general":
        if lam == 0 or gamma_t == 0:
            q = 0.0
        else:
            N_t = n_threshold(mu, p, lam, gamma_t)
            q = (p - 1) * 8 * lam**2 * gamma_t * c_n(mu, N_t) / (2 * math.pi) ** d
        ratio = math.sqrt(q)
        terms = [ChaosTermBound(n=n, term=ratio**n, ratio=ratio) for n in range(n_terms)]
        total = 1.0 / (1.0 - ratio)
        return ChaosSeries(form=form, terms=terms, total=total, log_total=math.log(total))

    if form != "riesz":
        raise DomainError("未知的级数形式", form=form)
    if mu.kind is not SpectralKind.RIESZ_DENSITY:
        raise NotApplicable("Riesz 形式只适用于 Riesz 谱测度", kind=mu.kind.value)
    beta = mu.beta
    a = (2 - beta) / 4
    base = riesz_series_constant(d, beta) * (p - 1) * lam**2 * gamma_t
    if base == 0:
        terms = [ChaosTermBound(n=n, term=float(n == 0), ratio=0.0, sharp_term=float(n == 0)) for n in range(n_terms)]
        return ChaosSeries(form=form, terms=terms, total=1.0, log_total=0.0, asymptotic=1.0 / a)

    log_z = 0.5 * math.log(base) + a * math.log(t)
    log_terms = [n * log_z - special.gammaln(a * n + 1) for n in range(n_terms + 1)]
    terms = [
        ChaosTermBound(
            n=n,
            term=math.exp(log_terms[n]),
            ratio=math.exp(log_terms[n + 1] - log_terms[n]),
            sharp_term=math.exp(n * log_z - 0.5 * special.gammaln(2 * a * n + 1)),
        )
        for n in range(n_terms)
    ]
    ml = mittag_leffler_detail(a, math.exp(log_z))
    # 大自变量下 E_a(z) ~ (1/a)exp(z^{1/a}) = (4/(2-β))exp((B(p-1)λ²Γ_t)^{2/(2-β)} t)
    log_asymptotic = math.exp(log_z / a) - math.log(a)
    return ChaosSeries(
        form=form,
        terms=terms,
        total=ml.value,
        log_total=ml.log_value,
        asymptotic=math.exp(log_asymptotic) if log_asymptotic < 700 else math.inf,
        regime=ml.regime,
    )


def compare_bounds(
    bracket: Optional[FrontBracket],
    bounds: FrontBounds,
    scale_kind: ScaleKind,
    slack: float = 0.1,
) -> Dict[str, BoundVerdict]:
    """
    把经验区间与同一尺度下的闭式界限对照（单侧、仅作参考）。

    上界: ρ_- ≤ bound·(1+slack)；下界: ρ_+ ≥ bound·(1-slack)。
    bracket 为 None（扫描中没有增长区域）时视为与所有界限一致。
    """
    scale_kind = ScaleKind(scale_kind)
    verdicts: Dict[str, BoundVerdict] = {}
    for name, (native, direction) in BOUND_SCALES.items():
        bound = getattr(bounds, name)
        if bound is None or native is not scale_kind:
            verdicts[name] = BoundVerdict(name, bound, native, Verdict.NOT_COMPARED)
            continue
        if bracket is None:
            ok = True
        elif direction == "upper":
            ok = bracket.rho_minus <= bound * (1 + slack)
        else:
            ok = bracket.rho_plus >= bound * (1 - slack)
        verdicts[name] = BoundVerdict(name, bound, native, Verdict.CONSISTENT if ok else Verdict.INCONSISTENT)
    return verdicts
