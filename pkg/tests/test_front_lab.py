#!/usr/bin/env python3
"""
前沿实验模块的测试脚本。

有限时间前沿趋势的验收测试（每点10^5个副本）默认跳过，设置
IFL_SLOW_TESTS=1 运行。
"""

import math
import os
import sys
from pathlib import Path

import numpy as np
import pytest
from loguru import logger

sys.path.insert(0, str(Path(__file__).parent.parent))
from intermittency_lab.bounds import FrontBounds, InitialCondition, ModelParams, riesz_upper_front
from intermittency_lab.errors import DomainError, NoBracket, NotApplicable, ScaleUndefined
from intermittency_lab.front_lab import (
    BOUND_SCALES,
    Classification,
    FrontBracket,
    FrontScan,
    MonteCarloParams,
    ScaleKind,
    ScanVerdict,
    Verdict,
    chaos_tail_bound,
    classify,
    compare_bounds,
    confidence_band,
    estimate_front_bracket,
    front_scale,
    front_scan,
    jensen_lower_bound,
    normalized_log_moment,
    rho_classifier,
    time_double_integral,
    trend,
)
from intermittency_lab.kernels import SpaceCovariance, SpectralMeasure, TimeCovariance, spectral_measure

SLOW = os.environ.get("IFL_SLOW_TESTS") == "1"
slow = pytest.mark.skipif(not SLOW, reason="设置 IFL_SLOW_TESTS=1 运行慢速验收测试")

CONSTANT = TimeCovariance.constant(1.0)
RIESZ = SpaceCovariance.riesz(0.5, d=1)
FLAT = SpaceCovariance.constant_level(1.0, d=1)
BALL = InitialCondition(profile="indicator", M=1.0)


def make_scan(signs):
    """按给定符号构造只含判定结果的扫描。"""
    mapping = {"+": Classification.POSITIVE, "-": Classification.NEGATIVE, "?": Classification.UNDECIDED}
    rhos = tuple(float(k) for k in range(len(signs)))
    verdicts = [ScanVerdict(rho=rho, classification=mapping[sign], trend="flat") for rho, sign in zip(rhos, signs)]
    return FrontScan(rho_grid=rhos, t_grid=(1.0, 2.0), scale_kind=ScaleKind.VARTHETA, rows=[], verdicts=verdicts)


def test_time_double_integral():
    """测试时间二重积分的两种算法与印刷系数日志。"""
    print("🧪 测试time_double_integral...")

    messages = []
    sink = logger.add(lambda message: messages.append(str(message)), level="WARNING")
    try:
        value = time_double_integral(CONSTANT, 2.0)
    finally:
        logger.remove(sink)
    assert abs(value - 4.0) < 1e-12, f"γ≡1, t=2 时应为 4，实际得到: {value}"
    assert any("印刷" in message for message in messages), "印刷系数的差异应写入警告日志"

    assert abs(time_double_integral(TimeCovariance.power_law(0.5), 1.0) - 8 / 3) < 1e-8
    assert abs(time_double_integral(TimeCovariance.constant(3.0), 1.0) - 3.0) < 1e-12
    for alpha in (0.3, 0.7):
        expected = 2 / ((1 - alpha) * (2 - alpha)) * 2.0 ** (2 - alpha)
        value = time_double_integral(TimeCovariance.power_law(alpha), 2.0)
        assert abs(value / expected - 1) < 1e-8, f"α={alpha}: 期望 {expected}，实际得到: {value}"

    try:
        time_double_integral(TimeCovariance.dirac(), 1.0)
    except DomainError:
        pass
    else:
        raise AssertionError("Dirac 时间核应该抛出 DomainError")

    print("✅ time_double_integral测试通过！")


def test_front_scale():
    """测试尺度函数的选择。"""
    print("🧪 测试front_scale...")

    model = ModelParams(d=1, lam=1.0, p=2, u0=BALL)
    assert abs(front_scale(model, TimeCovariance.constant(8.0), RIESZ, 1.0, ScaleKind.VARTHETA) - 4.0) < 1e-12
    theta = front_scale(model, CONSTANT, RIESZ, 1.0, "theta")
    assert abs(theta - 11.46) < 1e-2
    eta = front_scale(model, TimeCovariance.power_law(0.5), RIESZ, 4.0, ScaleKind.ETA, delta=0.5)
    assert abs(eta - 2 ** (2 / 3)) < 1e-12

    free = ModelParams(d=1, lam=0.0, p=2, u0=BALL)
    try:
        normalized_log_moment(free, CONSTANT, RIESZ, 1.0, 0.5, ScaleKind.THETA, MonteCarloParams(n_rep=2, n_steps=2))
    except ScaleUndefined:
        pass
    else:
        raise AssertionError("λ = 0 时 θ = 0，应该抛出 ScaleUndefined")

    print("✅ front_scale测试通过！")


def test_confidence_band():
    """测试对数域置信区间。"""
    print("🧪 测试confidence_band...")

    low, high = confidence_band(2.0, 0.1, 2.0)
    assert abs(low - (2.0 + math.log1p(-0.196)) / 2) < 1e-15
    assert abs(high - (2.0 + math.log1p(0.196)) / 2) < 1e-15
    low, high = confidence_band(2.0, 0.6, 1.0)
    assert low == -math.inf and math.isfinite(high)

    print("✅ confidence_band测试通过！")


def test_zero_variance_functional():
    """测试 ρ = 0、常数核、u_0 ≡ 1 时 S 的精确值。"""
    print("🧪 测试零方差前沿泛函...")

    model = ModelParams(d=1, lam=1.0, p=2, u0=InitialCondition(profile="unit"))
    mc = MonteCarloParams(n_rep=4, n_steps=4)
    t = 2.0
    row = normalized_log_moment(model, CONSTANT, FLAT, t, 0.0, ScaleKind.VARTHETA, mc)
    # log E u^2 = λ²·level·t²
    expected = t**2 / (t * row.scale**2)
    assert abs(row.S_value - expected) < 1e-12, f"期望 {expected}，实际得到: {row.S_value}"
    assert abs(row.ci_low - row.S_value) < 1e-12 and abs(row.ci_high - row.S_value) < 1e-12, "零方差时置信区间应退化为一点"

    print("✅ 零方差前沿泛函测试通过！")


def test_lambda_zero_functional():
    """测试 λ = 0 时 S 趋于 -pρ²/2 且全部判为 NEGATIVE。"""
    print("🧪 测试λ = 0 前沿泛函...")

    model = ModelParams(d=1, lam=0.0, p=2, u0=BALL)
    mc = MonteCarloParams(n_rep=2, n_steps=2)
    limit = -model.p * 0.5**2 / 2
    early = normalized_log_moment(model, CONSTANT, FLAT, 4.0, 0.5, ScaleKind.VARTHETA, mc)
    late = normalized_log_moment(model, CONSTANT, FLAT, 16.0, 0.5, ScaleKind.VARTHETA, mc)
    assert abs(late.S_value - limit) < abs(early.S_value - limit), "S 应随 t 增大趋近 -pρ²/2"
    assert abs(late.S_value - limit) < 0.02, f"t=16 时 S 应接近 {limit}，实际得到: {late.S_value}"

    scan = front_scan(model, CONSTANT, FLAT, [0.5, 1.0], [2.0, 4.0], ScaleKind.VARTHETA, mc)
    assert all(v.classification is Classification.NEGATIVE for v in scan.verdicts)
    assert len(scan.rows) == 4
    assert all(row.ci_low <= row.S_value <= row.ci_high for row in scan.rows)

    far = normalized_log_moment(model, CONSTANT, FLAT, 1.0, 200.0, ScaleKind.VARTHETA, mc)
    assert far.S_value == far.ci_low == far.ci_high == -math.inf, "λ = 0 时支撑外的点应为精确的 -inf"

    try:
        front_scan(model, CONSTANT, FLAT, [1.0, 0.5], [2.0], ScaleKind.VARTHETA, mc)
    except DomainError:
        pass
    else:
        raise AssertionError("非递增网格应该抛出 DomainError")

    print("✅ λ = 0 前沿泛函测试通过！")


def test_functional_properties():
    """测试耦合种子下对 ρ 的单调性与两个种子的一致性。"""
    print("🧪 测试前沿泛函的性质...")

    model = ModelParams(d=1, lam=0.5, p=2, u0=BALL)
    mc = MonteCarloParams(n_rep=2000, n_steps=16, seed=5, tilt=False)
    values = [normalized_log_moment(model, CONSTANT, RIESZ, 1.0, rho, ScaleKind.VARTHETA, mc).S_value for rho in (0.0, 0.5, 1.0)]
    assert values[0] >= values[1] >= values[2], f"S 应随 ρ 不增: {values}"

    rows = [
        normalized_log_moment(model, CONSTANT, RIESZ, 1.0, 0.5, ScaleKind.VARTHETA, MonteCarloParams(n_rep=2000, n_steps=16, seed=seed))
        for seed in (1, 2)
    ]
    sigma = [row.estimate.relative_stderr / (row.t * row.scale**2) for row in rows]
    assert abs(rows[0].S_value - rows[1].S_value) < 3 * math.hypot(*sigma), "两个种子的结果应在联合3σ内一致"
    assert all(row.ci_low <= row.S_value <= row.ci_high for row in rows)
    for row in rows:
        jensen = jensen_lower_bound(row.estimate)
        assert -math.inf < jensen <= row.estimate.log_value + 1e-12, f"Jensen 下界 {jensen} 应不超过 log Ê = {row.estimate.log_value}"
        assert row.ci_low >= jensen / (row.t * row.scale**2) - 1e-12

    print("✅ 前沿泛函的性质测试通过！")


def test_classify_and_trend():
    """测试符号判定与趋势。"""
    print("🧪 测试classify与trend...")

    model = ModelParams(d=1, lam=0.0, p=2, u0=BALL)
    mc = MonteCarloParams(n_rep=2, n_steps=2)
    rows = [normalized_log_moment(model, CONSTANT, FLAT, t, 0.5, ScaleKind.VARTHETA, mc) for t in (1.0, 2.0, 4.0)]
    assert classify(rows) is Classification.NEGATIVE
    assert trend(rows) in ("increasing", "decreasing", "mixed")
    assert trend(rows[:1]) == "insufficient"

    print("✅ classify与trend测试通过！")


def test_front_bracket():
    """测试经验前沿区间与二分细化。"""
    print("🧪 测试estimate_front_bracket...")

    bracket = estimate_front_bracket(make_scan("++--"))
    assert (bracket.rho_minus, bracket.rho_plus) == (1.0, 2.0), f"区间应在第2与第3个网格点之间: {bracket}"

    for signs in ("----", "++++", "????", "-+++"):
        try:
            estimate_front_bracket(make_scan(signs))
        except NoBracket:
            pass
        else:
            raise AssertionError(f"{signs} 应该抛出 NoBracket")

    def classifier(rho):
        return Classification.POSITIVE if rho < 1.37 else Classification.NEGATIVE

    refined = estimate_front_bracket(make_scan("++--"), classifier=classifier, max_bisections=10)
    assert refined.rho_minus < 1.37 <= refined.rho_plus
    assert abs(refined.rho_plus - refined.rho_minus - 2.0**-10) < 1e-15
    assert refined.bisections == 10

    stalled = estimate_front_bracket(make_scan("++--"), classifier=lambda rho: Classification.UNDECIDED, max_bisections=5)
    assert stalled.bisections == 1 and (stalled.rho_minus, stalled.rho_plus) == (1.0, 2.0), "遇到 UNDECIDED 应停止二分"

    # 真实判定函数在 λ = 0 时总是 NEGATIVE
    model = ModelParams(d=1, lam=0.0, p=2, u0=BALL)
    real = rho_classifier(model, CONSTANT, FLAT, [1.0, 2.0], ScaleKind.VARTHETA, MonteCarloParams(n_rep=2, n_steps=2))
    assert real(0.3) is Classification.NEGATIVE

    print("✅ estimate_front_bracket测试通过！")


def test_chaos_general_form():
    """测试一般形式的混沌级数界: 公比 ≤ 1/2，总和 ≤ 2。"""
    print("🧪 测试chaos_tail_bound一般形式...")

    rng = np.random.default_rng(7)
    for _ in range(20):
        d = int(rng.integers(1, 4))
        beta = rng.uniform(0.1, min(2, d) - 0.1)
        model = ModelParams(d=d, lam=rng.uniform(0.1, 3.0), p=int(rng.integers(2, 7)))
        gamma = TimeCovariance.constant(rng.uniform(0.1, 5.0))
        series = chaos_tail_bound(model, SpectralMeasure.riesz(beta, d=d), gamma, rng.uniform(0.1, 10.0))
        assert series.terms[0].term == 1.0
        assert all(term.ratio <= 0.5 + 1e-12 for term in series.terms), f"公比超过1/2: {series.terms[0].ratio}"
        assert series.total <= 2.0 + 1e-12

    steep = chaos_tail_bound(ModelParams(d=3, lam=3.0, p=6), SpectralMeasure.riesz(1.9, d=3), TimeCovariance.constant(5.0), 1.0)
    assert abs(steep.terms[0].ratio - 0.5) < 1e-6, "β = 1.9、d = 3 时应在阈值处取等号"
    assert steep.total <= 2.0 + 1e-12

    # 连续的 C_N 在阈值处取等号
    model = ModelParams(d=1, lam=1.0, p=2)
    series = chaos_tail_bound(model, SpectralMeasure.riesz(0.5), CONSTANT, 1.0)
    assert abs(series.terms[0].ratio - 0.5) < 1e-6 and abs(series.total - 2.0) < 1e-5

    free = chaos_tail_bound(ModelParams(d=1, lam=0.0, p=2), SpectralMeasure.riesz(0.5), CONSTANT, 1.0)
    assert free.total == 1.0 and free.terms[1].term == 0.0

    white = chaos_tail_bound(model, spectral_measure(SpaceCovariance.white_1d()), TimeCovariance.constant(2.0), 3.0)
    assert white.terms[1].ratio <= 0.5 + 1e-12 and white.total <= 2.0 + 1e-12

    print("✅ chaos_tail_bound一般形式测试通过！")


def test_chaos_riesz_form():
    """测试 Riesz 形式: Mittag-Leffler 求和与对数凸性放缩。"""
    print("🧪 测试chaos_tail_bound Riesz形式...")

    model = ModelParams(d=1, lam=1.0, p=2)
    series = chaos_tail_bound(model, SpectralMeasure.riesz(0.5), CONSTANT, 1.0, n_terms=40, form="riesz")
    assert series.terms[0].term == 1.0
    assert all(term.sharp_term <= term.term * (1 + 1e-12) for term in series.terms), "对数凸性放缩后的项应不小于原项"
    assert series.regime == "series"
    assert abs(series.total / series.asymptotic - 1) < 0.05, f"总和 {series.total} 应在渐近式 {series.asymptotic} 的5%以内"

    # β → 0 时 sharp_term·√(n!) 退化为几何级数
    flat = chaos_tail_bound(model, SpectralMeasure.riesz(1e-3), CONSTANT, 1.0, n_terms=20, form="riesz")
    scaled = [term.sharp_term * math.sqrt(math.factorial(term.n)) for term in flat.terms]
    ratios = [b / a for a, b in zip(scaled, scaled[1:])]
    assert max(ratios) / min(ratios) - 1 < 0.01, f"β = 10^-3 时应近似为几何级数: {ratios[0]}..{ratios[-1]}"

    try:
        chaos_tail_bound(model, SpectralMeasure.lebesgue_1d(), CONSTANT, 1.0, form="riesz")
    except NotApplicable:
        pass
    else:
        raise AssertionError("非 Riesz 谱测度应该抛出 NotApplicable")

    print("✅ chaos_tail_bound Riesz形式测试通过！")


def test_compare_bounds():
    """测试经验区间与闭式界限的对照。"""
    print("🧪 测试compare_bounds...")

    bounds = FrontBounds(riesz_upper=5.22, lower_front=0.1)
    verdicts = compare_bounds(FrontBracket(1.0, 2.0), bounds, ScaleKind.VARTHETA)
    assert set(verdicts) == set(BOUND_SCALES)
    assert verdicts["riesz_upper"].verdict is Verdict.CONSISTENT
    assert verdicts["lower_front"].verdict is Verdict.NOT_COMPARED, "不同尺度的界限不比较"
    assert verdicts["white_upper"].verdict is Verdict.NOT_COMPARED
    assert verdicts["nu_bar_cap"].verdict is Verdict.NOT_COMPARED

    assert compare_bounds(FrontBracket(10.0, 12.0), bounds, ScaleKind.VARTHETA)["riesz_upper"].verdict is Verdict.INCONSISTENT
    assert compare_bounds(FrontBracket(5.5, 6.0), bounds, ScaleKind.VARTHETA)["riesz_upper"].verdict is Verdict.CONSISTENT

    eta = compare_bounds(FrontBracket(0.05, 0.08), bounds, ScaleKind.ETA)
    assert eta["lower_front"].verdict is Verdict.INCONSISTENT
    assert compare_bounds(FrontBracket(0.2, 0.3), bounds, ScaleKind.ETA)["lower_front"].verdict is Verdict.CONSISTENT

    free = compare_bounds(None, bounds, ScaleKind.VARTHETA)
    assert free["riesz_upper"].verdict is Verdict.CONSISTENT, "没有增长区域时与所有界限一致"

    print("✅ compare_bounds测试通过！")


@pytest.mark.slow
@slow
def test_front_trend_acceptance():
    """Riesz 核在 t ∈ {2,4,8} 上的符号结构。"""
    print("🧪 测试有限时间前沿趋势...")

    model = ModelParams(d=1, lam=1.0, p=2, u0=BALL)
    mc = MonteCarloParams(n_rep=10**5, n_steps=32, seed=11, workers=os.cpu_count() or 1)
    far = 2 * riesz_upper_front(1, 0.5, 1.0, 2).value
    for t in (2.0, 4.0, 8.0):
        row = normalized_log_moment(model, CONSTANT, RIESZ, t, far, ScaleKind.VARTHETA, mc)
        assert row.ci_high < 0, f"t={t}, ρ={far}: ci_high={row.ci_high} 应小于0"
        near = normalized_log_moment(model, CONSTANT, RIESZ, t, 0.01, ScaleKind.VARTHETA, mc)
        assert near.ci_low > 0, f"t={t}, ρ=0.01: ci_low={near.ci_low} 应大于0"

    print("✅ 有限时间前沿趋势测试通过！")


def run_all_tests():
    """运行所有测试。"""
    print("🚀 开始前沿实验测试...")
    print("=" * 50)

    try:
        test_time_double_integral()
        test_front_scale()
        test_confidence_band()
        test_zero_variance_functional()
        test_lambda_zero_functional()
        test_functional_properties()
        test_classify_and_trend()
        test_front_bracket()
        test_chaos_general_form()
        test_chaos_riesz_form()
        test_compare_bounds()
        if SLOW:
            test_front_trend_acceptance()

        print("\n🎉 所有测试都成功通过！")
        return True

    except Exception as e:
        print(f"\n❌ 测试失败，错误: {e}")
        import traceback
        traceback.print_exc()
        return False


if __name__ == "__main__":
    success = run_all_tests()
    sys.exit(0 if success else 1)
