"""
实验配置。

每个实验对应一个 JSON 文档，加载时校验全部取值范围，违反时抛出
ConfigError 并给出带点号的键名。
"""

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .bounds import PROFILES, InitialCondition, ModelParams
from .errors import ConfigError, DomainError
from .front_lab import MonteCarloParams, ScaleKind
from .kernels import SpaceCovariance, SpaceFamily, TimeCovariance, TimeFamily

WORKERS_ENV = "IFL_WORKERS"


@dataclass(frozen=True)
class FrontSettings:
    """前沿扫描设置；p 为 None 时使用 model.p。"""

    delta: float = 0.5
    p: Optional[int] = None
    rho_min: float = 0.0
    rho_max: float = 1.0
    rho_steps: int = 5
    t_grid: Tuple[float, ...] = (2.0, 4.0, 8.0)
    scale: ScaleKind = ScaleKind.VARTHETA
    kappa: float = 1.0

    @property
    def rho_grid(self) -> List[float]:
        if self.rho_steps == 1:
            return [self.rho_min]
        return np.linspace(self.rho_min, self.rho_max, self.rho_steps).tolist()


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "runs"
    formats: Tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    """一次实验的全部输入。"""

    model: ModelParams = field(default_factory=ModelParams)
    gamma: TimeCovariance = field(default_factory=TimeCovariance.constant)
    lambda_kernel: SpaceCovariance = field(default_factory=lambda: SpaceCovariance.riesz(0.5, 1))
    mc: MonteCarloParams = field(default_factory=MonteCarloParams)
    front: FrontSettings = field(default_factory=FrontSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    @property
    def front_model(self) -> ModelParams:
        if self.front.p is None or self.front.p == self.model.p:
            return self.model
        return replace(self.model, p=self.front.p)


def _require(condition: bool, key: str, constraint: str, value: Any = None):
    if not condition:
        raise ConfigError(key, constraint, value)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _number(section: Dict[str, Any], name: str, key: str, default: Any = None) -> Any:
    value = section.get(name, default)
    if value is None:
        return None
    _require(isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value), key, "必须是有限实数", value)
    return float(value)


def _model_from_dict(data: Dict[str, Any]) -> ModelParams:
    d = data.get("d", 1)
    _require(_is_int(d) and d >= 1, "model.d", "必须是正整数", d)
    lam = _number(data, "lambda", "model.lambda", 1.0)
    _require(lam >= 0, "model.lambda", "必须满足 λ ≥ 0", lam)
    p = data.get("p", 2)
    _require(_is_int(p) and p >= 2, "model.p", "必须是 ≥ 2 的整数", p)

    u0 = data.get("u0", {})
    profile = u0.get("profile", "indicator")
    _require(profile in PROFILES, "model.u0.profile", f"必须是 {'/'.join(PROFILES)} 之一", profile)
    M = _number(u0, "M", "model.u0.M", 1.0)
    _require(M > 0, "model.u0.M", "必须满足 M > 0", M)
    r = _number(u0, "r", "model.u0.r", 1.0)
    _require(r >= 1, "model.u0.r", "必须满足 r ≥ 1", r)
    level = _number(u0, "level", "model.u0.level", 1.0)
    _require(level > 0, "model.u0.level", "必须满足 C_u0 > 0", level)
    sup_norm = _number(u0, "sup_norm", "model.u0.sup_norm")
    width = _number(u0, "width", "model.u0.width", 1.0)
    _require(width > 0, "model.u0.width", "必须为正", width)
    try:
        initial = InitialCondition(profile=profile, M=M, r=r, level=level, sup_norm=sup_norm, width=width)
    except DomainError as exc:
        raise ConfigError("model.u0.sup_norm", "必须满足 C_u0 ≤ ‖u_0‖∞", sup_norm) from exc
    return ModelParams(d=d, lam=lam, p=p, u0=initial)


def _gamma_from_dict(data: Dict[str, Any]) -> TimeCovariance:
    family = data.get("family", TimeFamily.CONSTANT.value)
    _require(family in [f.value for f in TimeFamily], "gamma.family", "未知的时间核", family)
    family = TimeFamily(family)
    if family is TimeFamily.POWER_LAW:
        alpha = _number(data, "alpha", "gamma.alpha")
        _require(alpha is not None and 0 < alpha < 1, "gamma.alpha", "必须满足 0 < α < 1", alpha)
        return TimeCovariance.power_law(alpha)
    if family is TimeFamily.CONSTANT:
        level = _number(data, "level", "gamma.level", 1.0)
        _require(level > 0, "gamma.level", "必须满足 c > 0", level)
        return TimeCovariance.constant(level)
    return TimeCovariance.dirac()


def _lambda_from_dict(data: Dict[str, Any], d: int) -> SpaceCovariance:
    family = data.get("family", SpaceFamily.RIESZ.value)
    _require(family in [f.value for f in SpaceFamily], "lambda.family", "未知的空间核", family)
    family = SpaceFamily(family)
    if family is SpaceFamily.RIESZ:
        beta = _number(data, "beta", "lambda.beta", 0.5)
        _require(beta is not None and 0 < beta < min(2, d), "lambda.beta", f"必须满足 0 < β < min(2,{d})", beta)
        return SpaceCovariance.riesz(beta, d)
    if family is SpaceFamily.FRACTIONAL:
        hurst = tuple(data.get("hurst", ()))
        _require(len(hurst) == d and all(0.5 < h < 1 for h in hurst), "lambda.hurst", f"需要 {d} 个 (1/2,1) 内的 Hurst 指数", hurst)
        _require(0 < 2 * d - 2 * sum(hurst) < 2, "lambda.hurst", "β = 2d-2ΣH 必须在 (0,2) 内", hurst)
        return SpaceCovariance.fractional(hurst)
    if family is SpaceFamily.CONSTANT_LEVEL:
        level = _number(data, "level", "lambda.level", 1.0)
        _require(level > 0, "lambda.level", "必须满足 Λ0 > 0", level)
        return SpaceCovariance.constant_level(level, d)
    if family is SpaceFamily.MOLLIFIED_WHITE:
        eps = _number(data, "eps", "lambda.eps")
        _require(eps is not None and eps > 0, "lambda.eps", "必须满足 ε > 0", eps)
        return SpaceCovariance.mollified_white(eps, d)
    if family is SpaceFamily.WHITE_1D:
        _require(d == 1, "lambda.family", "White1D 只在 d = 1 时有定义", d)
        return SpaceCovariance.white_1d()

    envelope = data.get("envelope", {})
    beta = _number(data, "beta", "lambda.beta")
    _require(beta is not None and 0 <= beta < min(2, d), "lambda.beta", f"必须满足 0 ≤ β < min(2,{d})", beta)
    c = _number(envelope, "c", "lambda.envelope.c")
    _require(c is not None and c > 0, "lambda.envelope.c", "必须满足 C_Λ > 0", c)
    r = _number(envelope, "r", "lambda.envelope.r")
    _require(r is not None and r > 0, "lambda.envelope.r", "必须满足 R > 0", r)
    return SpaceCovariance.envelope(c, r, beta, d)


def _mc_from_dict(data: Dict[str, Any]) -> MonteCarloParams:
    n_rep = data.get("n_rep", 1000)
    _require(_is_int(n_rep) and n_rep >= 2, "mc.n_rep", "必须是 ≥ 2 的整数", n_rep)
    n_steps = data.get("n_steps", 64)
    _require(_is_int(n_steps) and n_steps >= 2, "mc.n_steps", "必须是 ≥ 2 的整数", n_steps)
    seed = data.get("seed", 0)
    _require(_is_int(seed) and seed >= 0, "mc.seed", "必须是非负整数", seed)
    clip_scale = None
    if data.get("clip_scale", 1.0) is not None:
        clip_scale = _number(data, "clip_scale", "mc.clip_scale", 1.0)
    _require(clip_scale is None or clip_scale > 0, "mc.clip_scale", "必须为正或 null", clip_scale)
    workers = data.get("workers", 1)
    _require(_is_int(workers) and workers >= 1, "mc.workers", "必须是正整数", workers)
    tilt = data.get("tilt", True)
    _require(isinstance(tilt, bool), "mc.tilt", "必须是布尔值", tilt)
    return MonteCarloParams(n_rep=n_rep, n_steps=n_steps, seed=seed, clip_scale=clip_scale, workers=workers, tilt=tilt)


def _front_from_dict(data: Dict[str, Any]) -> FrontSettings:
    delta = _number(data, "delta", "front.delta", 0.5)
    _require(0 < delta < 1, "front.delta", "必须满足 0 < δ < 1", delta)
    p = data.get("p")
    _require(p is None or (_is_int(p) and p >= 2), "front.p", "必须是 ≥ 2 的整数", p)
    rho_min = _number(data, "rho_min", "front.rho_min", 0.0)
    _require(rho_min >= 0, "front.rho_min", "必须非负", rho_min)
    rho_max = _number(data, "rho_max", "front.rho_max", 1.0)
    _require(rho_max >= rho_min, "front.rho_max", "必须不小于 rho_min", rho_max)
    rho_steps = data.get("rho_steps", 5)
    _require(_is_int(rho_steps) and rho_steps >= 1, "front.rho_steps", "必须是正整数", rho_steps)
    _require(rho_steps == 1 or rho_max > rho_min, "front.rho_max", "多个网格点时必须大于 rho_min", rho_max)
    t_grid = data.get("t_grid", [2.0, 4.0, 8.0])
    _require(
        isinstance(t_grid, (list, tuple)) and len(t_grid) > 0 and all(isinstance(t, (int, float)) and t > 0 for t in t_grid),
        "front.t_grid",
        "必须是非空的正数列表",
        t_grid,
    )
    _require(all(b > a for a, b in zip(t_grid, t_grid[1:])), "front.t_grid", "必须严格递增", t_grid)
    scale = data.get("scale", ScaleKind.VARTHETA.value)
    _require(scale in [s.value for s in ScaleKind], "front.scale", "必须是 theta/eta/vartheta 之一", scale)
    kappa = _number(data, "kappa", "front.kappa", 1.0)
    _require(kappa > 0, "front.kappa", "必须满足 ϰ > 0", kappa)
    return FrontSettings(
        delta=delta,
        p=p,
        rho_min=rho_min,
        rho_max=rho_max,
        rho_steps=rho_steps,
        t_grid=tuple(float(t) for t in t_grid),
        scale=ScaleKind(scale),
        kappa=kappa,
    )


def _output_from_dict(data: Dict[str, Any]) -> OutputSettings:
    directory = data.get("directory", "runs")
    _require(isinstance(directory, str) and directory != "", "output.directory", "必须是非空字符串", directory)
    formats = tuple(data.get("formats", ("csv", "json")))
    _require(all(fmt in ("csv", "json") for fmt in formats), "output.formats", "只支持 csv 与 json", formats)
    return OutputSettings(directory=directory, formats=formats)


def from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """从 JSON 字典构造并校验配置。"""
    _require(isinstance(data, dict), "<root>", "配置必须是 JSON 对象", type(data).__name__)
    model = _model_from_dict(data.get("model", {}))
    return ExperimentConfig(
        model=model,
        gamma=_gamma_from_dict(data.get("gamma", {})),
        lambda_kernel=_lambda_from_dict(data.get("lambda", {}), model.d),
        mc=_mc_from_dict(data.get("mc", {})),
        front=_front_from_dict(data.get("front", {})),
        output=_output_from_dict(data.get("output", {})),
    )


def to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    """序列化为与 from_dict 对应的 JSON 字典。"""
    model, gamma, lam = config.model, config.gamma, config.lambda_kernel
    u0 = model.u0
    gamma_dict: Dict[str, Any] = {"family": gamma.family.value}
    if gamma.family is TimeFamily.POWER_LAW:
        gamma_dict["alpha"] = gamma.alpha
    elif gamma.family is TimeFamily.CONSTANT:
        gamma_dict["level"] = gamma.level

    lam_dict: Dict[str, Any] = {"family": lam.family.value}
    if lam.family is SpaceFamily.RIESZ:
        lam_dict["beta"] = lam.beta
    elif lam.family is SpaceFamily.FRACTIONAL:
        lam_dict["hurst"] = list(lam.hurst)
    elif lam.family is SpaceFamily.CONSTANT_LEVEL:
        lam_dict["level"] = lam.level
    elif lam.family is SpaceFamily.MOLLIFIED_WHITE:
        lam_dict["eps"] = lam.eps
    elif lam.family is SpaceFamily.LOWER_RIESZ_ENVELOPE:
        lam_dict["beta"] = lam.beta
        lam_dict["envelope"] = {"c": lam.envelope_c, "r": lam.envelope_r}

    return {
        "model": {
            "d": model.d,
            "lambda": model.lam,
            "p": model.p,
            "u0": {"profile": u0.profile, "M": u0.M, "r": u0.r, "level": u0.level, "sup_norm": u0.sup_norm, "width": u0.width},
        },
        "gamma": gamma_dict,
        "lambda": lam_dict,
        "mc": {
            "n_rep": config.mc.n_rep,
            "n_steps": config.mc.n_steps,
            "seed": config.mc.seed,
            "clip_scale": config.mc.clip_scale,
            "workers": config.mc.workers,
            "tilt": config.mc.tilt,
        },
        "front": {
            "delta": config.front.delta,
            "p": config.front.p,
            "rho_min": config.front.rho_min,
            "rho_max": config.front.rho_max,
            "rho_steps": config.front.rho_steps,
            "t_grid": list(config.front.t_grid),
            "scale": config.front.scale.value,
            "kappa": config.front.kappa,
        },
        "output": {"directory": config.output.directory, "formats": list(config.output.formats)},
    }


def load_config(path) -> ExperimentConfig:
    """读取并校验 JSON 配置文件。"""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError("<file>", "配置文件不存在", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"不是合法的 JSON: {exc.msg} (第{exc.lineno}行)", str(path)) from exc
    return from_dict(data)


def dump_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(to_dict(config), indent=2, ensure_ascii=False), encoding="utf-8")


def require_pointwise_kernel(config: ExperimentConfig) -> None:
    """矩估计需要可逐点求值的空间核。"""
    _require(
        config.lambda_kernel.family is not SpaceFamily.WHITE_1D,
        "lambda.family",
        "矩估计不接受 White1D，请改用 MollifiedWhite",
        config.lambda_kernel.family.value,
    )


def resolve_workers(flag: Optional[int] = None, configured: int = 1) -> int:
    """线程数: 命令行参数优先，其次是环境变量 IFL_WORKERS，最后是配置值。"""
    if flag is not None:
        _require(flag >= 1, "--workers", "必须是正整数", flag)
        return flag
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        _require(raw.isdigit() and int(raw) >= 1, WORKERS_ENV, "必须是正整数", raw)
        return int(raw)
    return configured


def apply_overrides(config: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """
    把命令行参数覆盖到配置上，值为 None 的参数忽略。

    支持的键: p, lam, reps, steps, seed, workers, rho_min, rho_max,
    rho_steps, t_grid, scale, output。
    """
    data = to_dict(config)
    mapping = {
        "p": ("model", "p"),
        "lam": ("model", "lambda"),
        "reps": ("mc", "n_rep"),
        "steps": ("mc", "n_steps"),
        "seed": ("mc", "seed"),
        "workers": ("mc", "workers"),
        "rho_min": ("front", "rho_min"),
        "rho_max": ("front", "rho_max"),
        "rho_steps": ("front", "rho_steps"),
        "t_grid": ("front", "t_grid"),
        "scale": ("front", "scale"),
        "output": ("output", "directory"),
    }
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in mapping:
            raise ConfigError(name, "不支持的覆盖参数", value)
        section, key = mapping[name]
        data[section][key] = list(value) if isinstance(value, tuple) else value
    return from_dict(data)
