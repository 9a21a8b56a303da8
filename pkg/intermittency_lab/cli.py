"""
间歇性前沿实验室的命令行入口。

子命令 bounds、moment、front、smallball、selftest 读取同一个 JSON 配置，
输出 CSV/JSON 文件，并在输出目录中写入运行清单。
"""

import csv
import json
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy
from loguru import logger
from scipy import special

from . import __version__
from .bounds import (
    InitialCondition,
    ModelParams,
    front_bounds,
    heat_kernel_sandwich,
    lower_front_bound,
    m_restriction,
    max_lemma,
    moment_upper_bound,
    riesz_moment_upper_bound,
    riesz_upper_front,
    simplex_bound_check,
    white1d_fronts,
)
from .config import (
    ExperimentConfig,
    apply_overrides,
    load_config,
    require_pointwise_kernel,
    resolve_workers,
    to_dict,
)
from .errors import LabError, NoBracket, SelftestFailure
from .feynman_kac import (
    MOMENT_CSV_HEADER,
    QuadratureSpec,
    mean_field,
    moment_estimate,
    pair_energy,
    pair_weight_profile,
    small_ball_mc,
)
from .front_lab import (
    FRONT_CSV_HEADER,
    chaos_tail_bound,
    compare_bounds,
    estimate_front_bracket,
    front_scan,
    rho_classifier,
    time_double_integral,
)
from .kernels import (
    SpaceCovariance,
    SpaceFamily,
    SpectralMeasure,
    TimeCovariance,
    big_gamma,
    dalang_check,
    gamma_infinity,
    riesz_fourier_constant,
    spectral_measure,
)
from .spectral import c_n, d_n, n_threshold, polar_gaussian_constant, polar_gaussian_quadrature, scale_functions
from .special_fn import (
    bessel_first_zero,
    bessel_index,
    mittag_leffler,
    mittag_leffler_series,
    small_ball_asymptotic,
    small_ball_reflection_series,
)

SCHEMA_VERSION = 1
SMALLBALL_CSV_HEADER = ["d", "eps", "p_hat", "stderr", "asymptotic", "reflection", "n_rep", "n_steps", "seed"]
SELFTEST_CSV_HEADER = ["oracle", "expected", "observed", "tolerance", "passed"]


@dataclass
class RunManifest:
    """一次运行的可复现记录。"""

    subcommand: str
    config: Dict
    seed: int
    build: str
    started_utc: str
    schema_version: int = SCHEMA_VERSION
    wall_clock_seconds: float = 0.0
    outputs: List[str] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)


class RunContext:
    """跟踪本次运行写出的文件，失败时删除。"""

    def __init__(self, directory: Path, subcommand: str, config: ExperimentConfig):
        self.directory = directory
        self.manifest = RunManifest(
            subcommand=subcommand,
            config=to_dict(config),
            seed=config.mc.seed,
            build=build_identifier(),
            started_utc=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        self._start = time.perf_counter()
        self._written: List[Path] = []

    def write_csv(self, name: str, header: List[str], rows: List[list]) -> Path:
        path = self.directory / name
        self._written.append(path)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        self.manifest.outputs.append(name)
        logger.debug(f"💾 写出 {path}（{len(rows)} 行）")
        return path

    def write_json(self, name: str, payload: Dict) -> Path:
        path = self.directory / name
        self._written.append(path)
        path.write_text(json.dumps(payload, indent=2, ensure_ascii=False, default=_json_default), encoding="utf-8")
        self.manifest.outputs.append(name)
        logger.debug(f"💾 写出 {path}")
        return path

    def count(self, name: str, value: int) -> None:
        self.manifest.counters[name] = self.manifest.counters.get(name, 0) + int(value)

    def finish(self) -> Path:
        self.manifest.wall_clock_seconds = round(time.perf_counter() - self._start, 3)
        name = f"{self.manifest.subcommand}_manifest.json"
        atomic_write_text(self.directory / name, json.dumps(asdict(self.manifest), indent=2, ensure_ascii=False))
        return self.directory / name

    def discard(self) -> None:
        for path in self._written:
            if path.exists():
                path.unlink()
                logger.debug(f"🗑️ 删除未完成的输出 {path}")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "value"):
        return value.value
    raise TypeError(f"无法序列化 {type(value).__name__}")


def atomic_write_text(path: Path, text: str) -> None:
    """先写临时文件再替换，读者不会看到写了一半的文件。"""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_identifier() -> str:
    return f"intermittency-lab {__version__}; numpy {np.__version__}; scipy {scipy.__version__}; python {platform.python_version()}"


# 子命令


def run_bounds(config: ExperimentConfig, ctx: RunContext, args) -> None:
    model = config.model
    bounds = front_bounds(model, config.gamma, config.lambda_kernel, config.front.delta)
    payload = {"inputs": to_dict(config), "bounds": bounds.to_dict()}
    try:
        dalang = dalang_check(spectral_measure(config.lambda_kernel))
        payload["dalang"] = {"value": dalang.value, "reason": dalang.reason}
    except LabError as exc:
        payload["dalang"] = {"value": None, "reason": str(exc)}

    # 原点处的对数矩上界
    kappa = config.front.kappa
    curve = []
    for t in config.front.t_grid:
        entry = {"t": t, "kappa": kappa}
        try:
            entry["log_moment_upper"] = moment_upper_bound(model, spectral_measure(config.lambda_kernel), config.gamma, t, 0.0, kappa)
            if config.lambda_kernel.family is SpaceFamily.RIESZ:
                entry["log_riesz_upper"] = riesz_moment_upper_bound(model, config.lambda_kernel.beta, config.gamma, t, 0.0, kappa)
        except LabError as exc:
            entry.setdefault("log_moment_upper", None)
            entry["reason"] = str(exc)
        curve.append(entry)
    payload["moment_upper"] = curve
    ctx.write_json("bounds.json", payload)
    print(f"前沿界限已写入 {ctx.directory / 'bounds.json'}", file=sys.stderr)


def run_moment(config: ExperimentConfig, ctx: RunContext, args) -> None:
    require_pointwise_kernel(config)
    mc = config.mc
    rows = []
    for k, (t, x) in enumerate((t, x) for t in args.t for x in args.x):
        estimate = moment_estimate(
            config.model,
            config.gamma,
            config.lambda_kernel,
            t,
            x,
            mc.n_rep,
            mc.n_steps,
            mc.seed,
            spec=mc.quadrature,
            workers=mc.workers,
            replica_offset=k * mc.n_rep,
            tilt=mc.tilt,
        )
        ctx.count("clip_events", estimate.clip_events)
        rows.append(estimate.csv_row())
        logger.info(f"📈 t={t}, |x|={x}: E u^p ≈ {estimate.value:.6g} ± {estimate.stderr:.2g}")
    ctx.write_csv("moment.csv", MOMENT_CSV_HEADER, rows)


def run_front(config: ExperimentConfig, ctx: RunContext, args) -> None:
    require_pointwise_kernel(config)
    model = config.front_model
    front = config.front
    scan = front_scan(model, config.gamma, config.lambda_kernel, front.rho_grid, front.t_grid, front.scale, config.mc, front.delta)
    for row in scan.rows:
        if row.estimate is not None:
            ctx.count("clip_events", row.estimate.clip_events)
    ctx.write_csv("front.csv", FRONT_CSV_HEADER, [row.csv_row() for row in scan.rows])

    classifier = None
    if args.bisections > 0:
        # 细化使用扫描之后的副本编号区间
        base = len(scan.rows) * config.mc.n_rep
        classifier = rho_classifier(model, config.gamma, config.lambda_kernel, front.t_grid, front.scale, config.mc, front.delta, base)
    try:
        bracket = estimate_front_bracket(scan, classifier, args.bisections)
        bracket_payload = asdict(bracket)
    except NoBracket as exc:
        logger.warning(f"⚠️ {exc}")
        bracket = None
        bracket_payload = {"error": str(exc)}

    bounds = front_bounds(model, config.gamma, config.lambda_kernel, front.delta)
    verdicts = compare_bounds(bracket, bounds, front.scale)
    summary = {
        "bracket": bracket_payload,
        "classifications": [asdict(v) for v in scan.verdicts],
        "verdicts": {name: asdict(v) for name, v in verdicts.items()},
        "bounds": bounds.to_dict(),
    }
    ctx.write_json("front_summary.json", summary)


def run_smallball(config: ExperimentConfig, ctx: RunContext, args) -> None:
    mc = config.mc
    rows = []
    for eps in args.eps:
        p_hat, stderr = small_ball_mc(args.d, eps, mc.n_steps, mc.n_rep, mc.seed, workers=mc.workers)
        asymptotic = small_ball_asymptotic(bessel_index(args.d), eps)
        reflection = small_ball_reflection_series(eps) if args.d == 1 else ""
        rows.append([args.d, eps, p_hat, stderr, asymptotic, reflection, mc.n_rep, mc.n_steps, mc.seed])
        logger.info(f"🎯 d={args.d}, ε={eps}: P̂ = {p_hat:.6g} ± {stderr:.2g}")
    ctx.write_csv("smallball.csv", SMALLBALL_CSV_HEADER, rows)


def oracle_suite() -> List[tuple]:
    """自检用的确定性预言: (名称, 期望值, 计算函数, 容差, 比较方式 abs/rel/upper)。"""
    sqrt2pi = math.sqrt(2 * math.pi)
    unit = InitialCondition(profile="unit")
    riesz_half = SpectralMeasure.riesz(0.5, 1)
    n_closed = (riesz_half.lambda_beta * 2 / (1.5 * (2 * math.pi) / 32)) ** (1 / 1.5)

    def zero_variance():
        model = ModelParams(d=1, lam=1.0, p=2, u0=unit)
        est = moment_estimate(model, TimeCovariance.constant(), SpaceCovariance.constant_level(1.0), 1.0, 0.0, 8, 16, 0)
        return est.value if est.stderr == 0 else math.nan

    def lambda_zero(x):
        model = ModelParams(d=1, lam=0.0, p=2)
        return moment_estimate(model, TimeCovariance.constant(), SpaceCovariance.riesz(0.5), 1.0, x, 2, 2, 0).value

    def power_law_cells():
        n = 2**12
        profile = pair_weight_profile(TimeCovariance.power_law(0.5), 1.0, n)
        multiplicity = np.where(np.arange(n) == 0, n, 2 * (n - np.arange(n)))
        return float(np.sum(profile * multiplicity))

    def prescribed_riesz():
        s = np.linspace(0.0, 1.0, 2**12 + 1)
        energy, _ = pair_energy(s, -s, TimeCovariance.constant(), SpaceCovariance.riesz(0.5), 1.0, QuadratureSpec(clip_scale=None))
        return energy

    def theta_identity():
        model = ModelParams(d=1, lam=1.0, p=2)
        q = scale_functions(riesz_half, model, TimeCovariance.constant(), 1.0)
        return q.theta / (q.N_t * math.sqrt(3))

    def chaos_ratio():
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(2024)))
        worst = 0.0
        for _ in range(20):
            beta = rng.uniform(0.1, 0.9)
            model = ModelParams(d=1, lam=rng.uniform(0.1, 3.0), p=int(rng.integers(2, 8)))
            series = chaos_tail_bound(model, SpectralMeasure.riesz(beta, 1), TimeCovariance.constant(), rng.uniform(0.1, 10.0))
            if series.total > 2 + 1e-12:
                return math.inf
            worst = max(worst, series.terms[1].ratio)
        return worst

    def simplex_holds():
        mu = SpectralMeasure.atomic([((1.0,), 1.0), ((2.0,), 4.0), ((0.5,), 0.3)])
        return float(all(simplex_bound_check(mu, N, 1.0, n)[2] for N in (0.7, 1.5, 3.0) for n in (1, 2, 3)))

    def sandwich_d2():
        lower, integral, upper = heat_kernel_sandwich(2.0, 1.0, [3.0, 0.0], 0.5, 2)
        return float(lower <= integral <= upper)

    white_restriction = math.sqrt(2) * math.pi**2.5 * math.e**2
    envelope = SpaceCovariance.envelope(1.0, 10.0, 1.0, 2)

    return [
        ("zero_variance_moment", math.e, zero_variance, 1e-12, "abs"),
        ("lambda_zero_origin", special.erf(1 / math.sqrt(2)) ** 2, lambda: lambda_zero(0.0), 1e-10, "abs"),
        ("lambda_zero_x2", (special.ndtr(3) - special.ndtr(1)) ** 2, lambda: lambda_zero(2.0), 1e-10, "abs"),
        ("pair_energy_power_law", 8 / 3, power_law_cells, 1e-6, "abs"),
        ("pair_energy_prescribed_riesz", (4 / 3) * (2 * math.sqrt(2) - 2), prescribed_riesz, 1e-5, "abs"),
        ("bessel_zero_minus_half", math.pi / 2, lambda: bessel_first_zero(-0.5), 1e-8, "abs"),
        ("bessel_zero_0", 2.40482556, lambda: bessel_first_zero(0.0), 1e-8, "abs"),
        ("bessel_zero_half", math.pi, lambda: bessel_first_zero(0.5), 1e-8, "abs"),
        ("mittag_leffler_exp_max_relerr", 0.0, lambda: max(abs(mittag_leffler(1.0, z) / math.exp(z) - 1) for z in np.linspace(0, 5, 51)), 1e-10, "abs"),
        ("riesz_C1", (4 / 3) * sqrt2pi, lambda: c_n(riesz_half, 1.0), 1e-8, "abs"),
        ("riesz_D1", 4 * sqrt2pi, lambda: d_n(riesz_half, 1.0), 1e-8, "abs"),
        ("riesz_N_t", n_closed, lambda: n_threshold(riesz_half, 2, 1.0, 1.0), 1e-8, "rel"),
        ("theta_identity", 1.0, theta_identity, 1e-10, "abs"),
        ("chaos_ratio_half", 0.5, chaos_ratio, 1e-12, "upper"),
        ("riesz_upper_front", 5.220, lambda: riesz_upper_front(1, 0.5, 1.0, 2).value, 1e-3, "abs"),
        ("white_upper", 2 * math.sqrt(2), lambda: white1d_fronts(1.0, 2, 0.5)[0], 1e-4, "abs"),
        ("white_lower", 0.017186, lambda: white1d_fronts(1.0, 2, 0.5)[1], 1e-4, "abs"),
        (
            "lower_front_d2",
            0.10396,
            lambda: lower_front_bound(ModelParams(d=2, lam=1.0, p=2), SpaceCovariance.envelope(1.0, math.inf, 1.0, 2), 0.5),
            1e-4,
            "abs",
        ),
        ("max_lemma", 0.25, lambda: max_lemma(1.0, 1.0, 1.0)[1], 1e-12, "abs"),
        ("heat_sandwich_d1", special.erf(1 / math.sqrt(2)), lambda: heat_kernel_sandwich(1.0, 1.0, 0.0, 1.0, 1)[1], 1e-9, "abs"),
        ("simplex_lemma", 1.0, simplex_holds, 0.0, "abs"),
        ("time_double_integral_const", 4.0, lambda: time_double_integral(TimeCovariance.constant(), 2.0), 1e-12, "abs"),
        ("time_double_integral_power", 8 / 3, lambda: time_double_integral(TimeCovariance.power_law(0.5), 1.0), 1e-8, "rel"),
        ("polar_constant", polar_gaussian_constant(2, 1.0), lambda: polar_gaussian_quadrature(2, 1.0), 1e-8, "rel"),
        ("riesz_fourier_d1", sqrt2pi, lambda: riesz_fourier_constant(1, 0.5), 1e-12, "rel"),
        ("riesz_fourier_d2", 2 * math.pi, lambda: riesz_fourier_constant(2, 1.0), 1e-12, "rel"),
        ("dalang_riesz_d1", sqrt2pi * math.pi * math.sqrt(2), lambda: dalang_check(riesz_half).value, 1e-8, "rel"),
        ("big_gamma_power_law", 4.0, lambda: big_gamma(TimeCovariance.power_law(0.5), 4.0), 1e-10, "abs"),
        ("big_gamma_dirac", 0.5, lambda: big_gamma(TimeCovariance.dirac(), 3.0), 0.0, "abs"),
        ("gamma_infinity_dirac", 0.5, lambda: gamma_infinity(TimeCovariance.dirac()), 0.0, "abs"),
        ("mittag_leffler_half_ratio", 1.0, lambda: mittag_leffler_series(0.5, 3.0) / (2 * math.exp(9.0)), 0.02, "abs"),
        ("riesz_N_t_gamma8", 26.47, lambda: n_threshold(riesz_half, 2, 1.0, 8.0), 1e-2, "abs"),
        ("theta_riesz_half", 11.46, lambda: scale_functions(riesz_half, ModelParams(d=1, lam=1.0, p=2), TimeCovariance.constant(), 1.0).theta, 1e-2, "abs"),
        ("mean_field_x2", special.ndtr(3) - special.ndtr(1), lambda: mean_field(InitialCondition(profile="indicator", M=1.0), 1.0, 2.0, 1), 1e-10, "abs"),
        ("m_restriction_white", white_restriction, lambda: m_restriction(ModelParams(d=1, lam=1.0, p=2), None, 0.5, 0.5), 1e-12, "rel"),
        (
            "m_restriction_envelope",
            8 * bessel_first_zero(0.0) ** 2,
            lambda: m_restriction(ModelParams(d=2, lam=1.0, p=2), envelope, 0.5, 0.5),
            1e-8,
            "rel",
        ),
        ("heat_sandwich_d2", 1.0, sandwich_d2, 0.0, "abs"),
        ("small_ball_reflection_leading", 4 / math.pi, lambda: small_ball_reflection_series(0.3) / small_ball_asymptotic(-0.5, 0.3), 1e-6, "rel"),
        ("small_ball_reflection_wide", 1.0, lambda: small_ball_reflection_series(20.0), 1e-12, "abs"),
    ]


def run_selftest(config: ExperimentConfig, ctx: RunContext, args) -> None:
    rows = []
    failures = []
    for name, expected, compute, tolerance, mode in oracle_suite():
        try:
            observed = float(compute())
        except (LabError, ArithmeticError, ValueError) as exc:
            logger.error(f"❌ {name}: {exc}")
            observed = math.nan
        if mode == "upper":
            passed = observed <= expected + tolerance
        elif mode == "rel":
            passed = abs(observed - expected) <= tolerance * abs(expected)
        else:
            passed = abs(observed - expected) <= tolerance
        rows.append([name, expected, observed, tolerance, passed])
        if passed:
            logger.info(f"✅ {name}: 期望 {expected:.12g}，得到 {observed:.12g}")
        else:
            logger.error(f"❌ {name}: 期望 {expected:.12g}，得到 {observed:.12g}")
            failures.append(name)
    ctx.write_csv("selftest.csv", SELFTEST_CSV_HEADER, rows)
    ctx.count("oracles", len(rows))
    ctx.count("failures", len(failures))
    if failures:
        raise SelftestFailure("自检失败", failed=failures)
    print(f"自检通过: {len(rows)} 项预言全部满足", file=sys.stderr)


SUBCOMMANDS: Dict[str, Callable] = {
    "bounds": run_bounds,
    "moment": run_moment,
    "front": run_front,
    "smallball": run_smallball,
    "selftest": run_selftest,
}


def configure_logging(debug: bool, log_file: Optional[str] = None) -> None:
    logger.remove()
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level="DEBUG" if debug else "INFO",
        colorize=True,
        backtrace=debug,
        diagnose=debug,
    )
    if log_file:
        logger.add(log_file, level="DEBUG", encoding="utf-8", enqueue=True)
    if debug:
        logger.info("🔧 调试模式已启用")


def build_parser():
    import argparse

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON 实验配置文件")
    common.add_argument("--output", help="输出目录 (覆盖 output.directory)")
    common.add_argument("--seed", type=int, help="主随机种子")
    common.add_argument("--workers", type=int, help="线程数，不影响任何输出 (也可用环境变量 IFL_WORKERS)")
    common.add_argument("--debug", action="store_true", help="启用调试日志")
    common.add_argument("--log-file", help="额外写入的日志文件")

    parser = argparse.ArgumentParser(
        prog="intermittency-lab",
        description="随机热方程间歇性前沿的数值实验室",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  %(prog)s bounds --config riesz.json             # 计算全部闭式前沿界限
  %(prog)s moment --t 1 2 --x 0 --reps 10000      # 估计 E u^p(t,x)
  %(prog)s front --rho-min 0 --rho-max 10 --rho-steps 11 --t-grid 2 4 8
  %(prog)s smallball --d 1 --eps 0.4 2            # 小球概率
  %(prog)s selftest                               # 运行全部预言检查
        """,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    bounds = sub.add_parser("bounds", parents=[common], help="闭式前沿界限")
    bounds.add_argument("--p", type=int, help="矩的阶数")

    moment = sub.add_parser("moment", parents=[common], help="蒙特卡罗矩估计")
    moment.add_argument("--p", type=int, help="矩的阶数")
    moment.add_argument("--t", type=float, nargs="+", default=[1.0], help="时间 (可多个)")
    moment.add_argument("--x", type=float, nargs="+", default=[0.0], help="第一坐标轴上的 |x| (可多个)")
    moment.add_argument("--reps", type=int, help="副本数")
    moment.add_argument("--steps", type=int, help="时间网格数")

    front = sub.add_parser("front", parents=[common], help="前沿扫描")
    front.add_argument("--p", type=int, help="矩的阶数")
    front.add_argument("--rho-min", type=float)
    front.add_argument("--rho-max", type=float)
    front.add_argument("--rho-steps", type=int)
    front.add_argument("--t-grid", type=float, nargs="+")
    front.add_argument("--scale", choices=["theta", "eta", "vartheta"])
    front.add_argument("--reps", type=int, help="每个网格点的副本数")
    front.add_argument("--steps", type=int, help="时间网格数")
    front.add_argument("--bisections", type=int, default=0, help="区间二分细化次数 (默认: 0)")

    smallball = sub.add_parser("smallball", parents=[common], help="小球概率估计")
    smallball.add_argument("--d", type=int, default=1, help="维数 (默认: 1)")
    smallball.add_argument("--eps", type=float, nargs="+", default=[0.4], help="球半径 (可多个)")
    smallball.add_argument("--reps", type=int, help="副本数")
    smallball.add_argument("--steps", type=int, help="时间网格数")

    sub.add_parser("selftest", parents=[common], help="运行预言检查")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "seed": args.seed,
        "output": args.output,
        "p": getattr(args, "p", None),
        "reps": getattr(args, "reps", None),
        "steps": getattr(args, "steps", None),
        "rho_min": getattr(args, "rho_min", None),
        "rho_max": getattr(args, "rho_max", None),
        "rho_steps": getattr(args, "rho_steps", None),
        "t_grid": getattr(args, "t_grid", None),
        "scale": getattr(args, "scale", None),
    }
    config = apply_overrides(config, **overrides)
    return apply_overrides(config, workers=resolve_workers(args.workers, config.mc.workers))


def main(argv: Optional[List[str]] = None) -> int:
    """间歇性前沿实验室的主入口点。"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.debug, args.log_file)

    ctx = None
    try:
        config = _resolve_config(args)
        directory = Path(config.output.directory)
        directory.mkdir(parents=True, exist_ok=True)
        ctx = RunContext(directory, args.subcommand, config)
        logger.debug(f"🚀 子命令 {args.subcommand}，输出目录 {directory}，线程数 {config.mc.workers}")
        SUBCOMMANDS[args.subcommand](config, ctx, args)
        manifest = ctx.finish()
        print(f"运行清单已写入 {manifest}", file=sys.stderr)
        return 0
    except KeyboardInterrupt:
        print("\n运行被用户停止", file=sys.stderr)
        if ctx is not None:
            ctx.discard()
        return 130
    except LabError as exc:
        if isinstance(exc, SelftestFailure) and ctx is not None:
            # 自检报告本身就是结果，保留
            ctx.finish()
        elif ctx is not None:
            ctx.discard()
        print(f"运行出错: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"💥 子命令 {args.subcommand} 意外失败: {exc}")
        if ctx is not None:
            ctx.discard()
        print(f"运行出错: {exc}", file=sys.stderr)
        return LabError.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
