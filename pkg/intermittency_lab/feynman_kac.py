"""
Feynman-Kac 矩公式的蒙特卡罗估计。

E u^p(t,x) = E[∏u_0(B_t^i + x)·exp(λ² Σ_{i<j} ∫∫γ(s-r)Λ(B_s^i - B_r^j)dsdr)]

每个副本的随机流由 (master_seed, replica_index) 通过 SeedSequence 派生并
交给计数器型 Philox 生成器，结果与线程数和调度顺序无关。
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy import special

from .bounds import InitialCondition, ModelParams
from .errors import AllZeroMass, DomainError, WhitePointwiseEval
from .kernels import (
    SpaceCovariance,
    SpaceFamily,
    TimeCovariance,
    TimeFamily,
    heat_ball_integral,
    lambda_eval,
)

# 每个任务块的副本数，固定不变以保证结果与线程数无关
REPLICA_CHUNK = 256
ROW_BLOCK = 256
SMALL_BALL_BLOCK = 4096
STEP_BLOCK = 256


@dataclass(frozen=True)
class QuadratureSpec:
    """
    配对能量的求积设置。

    ``clip_scale`` 为奇异核的截断尺度（单位为 √h），None 表示不截断。
    """

    clip_scale: Optional[float] = 1.0

    def __post_init__(self):
        if self.clip_scale is not None and not self.clip_scale > 0:
            raise DomainError("截断尺度必须为正", clip_scale=self.clip_scale)


@dataclass(frozen=True)
class BrownianEnsemble:
    """p 条独立的 d 维离散布朗路径，从原点出发。"""

    p: int
    d: int
    t: float
    n_steps: int
    increments: np.ndarray
    seed_lineage: Tuple[int, int]

    @property
    def step(self) -> float:
        return self.t / self.n_steps

    @property
    def paths(self) -> np.ndarray:
        """形如 (p, n_steps+1, d) 的路径，第0个节点为0。"""
        start = np.zeros((self.p, 1, self.d))
        return np.concatenate([start, np.cumsum(self.increments, axis=1)], axis=1)

    @property
    def endpoints(self) -> np.ndarray:
        return np.sum(self.increments, axis=1)


@dataclass(frozen=True)
class MomentEstimate:
    """
    E u^p(t,x) 的估计值及其标准误。

    ``replica_hit_fraction`` 为 p 条路径全部命中支撑的副本比例，
    ``log_weight_mean`` 与 ``log_weight_stderr`` 为这些副本对数权重的
    均值及其标准误，用于 Jensen 型的置信下界。
    """

    p: int
    t: float
    x: Tuple[float, ...]
    lam: float
    value: float
    stderr: float
    log_value: float
    log_stderr: float
    n_rep: int
    n_steps: int
    seed: int
    clip_events: int = 0
    hit_fraction: float = 1.0
    replica_hit_fraction: float = 1.0
    log_weight_mean: Optional[float] = None
    log_weight_stderr: float = 0.0

    @property
    def x_radius(self) -> float:
        return math.hypot(*self.x)

    @property
    def relative_stderr(self) -> float:
        """stderr/value，在对数域中计算以免溢出。"""
        if self.log_stderr == -math.inf:
            return 0.0
        return math.exp(self.log_stderr - self.log_value)

    def csv_row(self) -> list:
        return [
            self.t,
            self.x_radius,
            self.p,
            self.lam,
            self.value,
            self.stderr,
            self.log_value,
            self.n_rep,
            self.n_steps,
            self.seed,
            self.clip_events,
        ]


MOMENT_CSV_HEADER = ["t", "x_radius", "p", "lambda", "value", "stderr", "log_value", "n_rep", "n_steps", "seed", "clip_events"]


def _exp(value: float) -> float:
    try:
        return math.exp(value)
    except OverflowError:
        return math.inf


def _as_point(x, d: int) -> np.ndarray:
    """标量 x 放在第一个坐标轴上。"""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        point = np.zeros(d)
        point[0] = float(x)
        return point
    if x.shape != (d,):
        raise DomainError("空间点的维数与 d 不一致", shape=x.shape, d=d)
    return x


def replica_generator(master_seed: int, replica_index: int) -> np.random.Generator:
    """副本 replica_index 的独立随机流。"""
    sequence = np.random.SeedSequence(master_seed, spawn_key=(replica_index,))
    return np.random.Generator(np.random.Philox(sequence))


def sample_paths(p: int, d: int, t: float, n_steps: int, master_seed: int, replica_index: int) -> BrownianEnsemble:
    """
    生成 p 条 d 维布朗路径的增量。

    参数:
        p: 路径条数，p ≥ 1
        d: 维数
        t: 时间长度
        n_steps: 时间网格数，n_steps ≥ 2
        master_seed: 主种子
        replica_index: 副本编号

    返回:
        BrownianEnsemble
    """
    if p < 1 or n_steps < 2:
        raise DomainError("要求 p ≥ 1 且 n_steps ≥ 2", p=p, n_steps=n_steps)
    if not t > 0:
        raise DomainError("路径时间长度必须为正", t=t)
    rng = replica_generator(master_seed, replica_index)
    increments = rng.standard_normal((p, n_steps, d)) * math.sqrt(t / n_steps)
    return BrownianEnsemble(p=p, d=d, t=t, n_steps=n_steps, increments=increments, seed_lineage=(master_seed, replica_index))


def pair_weight_profile(gamma: TimeCovariance, t: float, n_steps: int) -> np.ndarray:
    """
    格子权重 W_m = ∫∫_{cell k × cell l} γ(s-r)dsdr，只依赖 m = |k-l|。

    PowerLaw 使用闭式 G(D+h) + G(D-h) - 2G(D)，G(x) = |x|^{2-α}/((1-α)(2-α))。
    """
    h = t / n_steps
    if gamma.family is TimeFamily.DIRAC:
        raise DomainError("Dirac 时间核没有格子权重，配对能量退化为单重积分")
    if gamma.family is TimeFamily.CONSTANT:
        return np.full(n_steps, gamma.level * h * h)
    a = gamma.alpha
    offsets = np.arange(n_steps, dtype=float) * h

    def antiderivative(u):
        return np.abs(u) ** (2 - a) / ((1 - a) * (2 - a))

    return antiderivative(offsets + h) + antiderivative(offsets - h) - 2 * antiderivative(offsets)


def pair_weights(gamma: TimeCovariance, t: float, n_steps: int) -> np.ndarray:
    """完整的 n_steps × n_steps 权重矩阵（Toeplitz）。"""
    profile = pair_weight_profile(gamma, t, n_steps)
    index = np.arange(n_steps)
    return profile[np.abs(index[:, None] - index[None, :])]


def pair_time_mass(gamma: TimeCovariance, t: float) -> float:
    """∫_0^t∫_0^t γ(s-r)dsdr 的闭式；Dirac 按 1/2 权重取 t/2。"""
    if gamma.family is TimeFamily.DIRAC:
        return 0.5 * t
    if gamma.family is TimeFamily.CONSTANT:
        return gamma.level * t * t
    a = gamma.alpha
    return 2 * t ** (2 - a) / ((1 - a) * (2 - a))


def _clip_ceiling(lam: SpaceCovariance, h: float, spec: QuadratureSpec) -> Optional[float]:
    if spec.clip_scale is None:
        return None
    radius = spec.clip_scale * math.sqrt(h)
    if lam.family is SpaceFamily.RIESZ:
        return radius ** (-lam.beta)
    if lam.family is SpaceFamily.LOWER_RIESZ_ENVELOPE:
        return lam.envelope_c * radius ** (-lam.beta)
    if lam.family is SpaceFamily.FRACTIONAL:
        return float(np.prod(radius ** (2 * np.asarray(lam.hurst) - 2)))
    return None


def _midpoints(path) -> np.ndarray:
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    return 0.5 * (path[:-1] + path[1:])


def pair_energy(
    path_i,
    path_j,
    gamma: TimeCovariance,
    lam: SpaceCovariance,
    t: float,
    spec: QuadratureSpec = QuadratureSpec(),
) -> Tuple[float, int]:
    """
    配对能量 ∫_0^t∫_0^t γ(s-r)Λ(B_s^i - B_r^j)dsdr 的乘积求积。

    Λ 在格子中点（节点平均）处取值，γ 的格子权重精确积分。Dirac 时间核
    退化为 (1/2)∫_0^t Λ(B_s^i - B_s^j)ds。奇异空间核的取值截断在
    Λ(clip_scale·√h)，截断次数一并返回。

    参数:
        path_i, path_j: 形如 (n_steps+1, d) 的路径节点
        gamma: 时间协方差
        lam: 空间协方差
        t: 时间长度
        spec: 求积设置

    返回:
        (能量, 截断次数)
    """
    if lam.family is SpaceFamily.WHITE_1D:
        raise WhitePointwiseEval("White1D 不能用于配对能量，请使用 MollifiedWhite")
    mid_i = _midpoints(path_i)
    mid_j = _midpoints(path_j)
    n_steps = mid_i.shape[0]
    h = t / n_steps

    if lam.family is SpaceFamily.CONSTANT_LEVEL:
        return lam.level * pair_time_mass(gamma, t), 0

    ceiling = _clip_ceiling(lam, h, spec)
    clips = 0

    if gamma.family is TimeFamily.DIRAC:
        values = np.asarray(lambda_eval(lam, mid_i - mid_j), dtype=float)
        if ceiling is not None:
            clips = int(np.count_nonzero(values > ceiling))
            values = np.minimum(values, ceiling)
        return 0.5 * h * float(np.sum(values)), clips

    profile = pair_weight_profile(gamma, t, n_steps)
    index = np.arange(n_steps)
    total = 0.0
    for start in range(0, n_steps, ROW_BLOCK):
        rows = slice(start, min(n_steps, start + ROW_BLOCK))
        values = np.asarray(lambda_eval(lam, mid_i[rows, None, :] - mid_j[None, :, :]), dtype=float)
        if ceiling is not None:
            clips += int(np.count_nonzero(values > ceiling))
            values = np.minimum(values, ceiling)
        weights = profile[np.abs(index[rows, None] - index[None, :])]
        total += float(np.sum(weights * values))
    return total, clips


def mean_field(u0: InitialCondition, t: float, x, d: int) -> float:
    """
    平均场 p_t u_0(x) = ∫_{|y|≤M} p_t(y-x)u_0(y)dy。

    示性函数初值使用 Gaussian 分布函数的闭式，高斯初值做径向积分。
    """
    if not t > 0:
        raise DomainError("平均场要求 t > 0", t=t)
    if u0.is_test_mode:
        return 1.0
    x_norm = float(np.linalg.norm(_as_point(x, d)))
    if u0.profile == "indicator":
        return u0.level * heat_ball_integral(t, u0.M, x_norm, d)
    return heat_ball_integral(t, u0.M, x_norm, d, profile=u0.radial)


def _replica_chunk(
    model: ModelParams,
    gamma: TimeCovariance,
    lam: SpaceCovariance,
    t: float,
    x: np.ndarray,
    n_steps: int,
    seed: int,
    spec: QuadratureSpec,
    replicas: range,
    drift: np.ndarray,
) -> Tuple[np.ndarray, int, int]:
    """一个副本块的对数权重、截断次数与命中支撑的路径数。"""
    log_weights = np.full(len(replicas), -math.inf)
    clips = 0
    hits = 0
    coupling = model.lam**2
    tilted = bool(np.any(drift))
    ramp = np.arange(n_steps + 1)[:, None] * (t / n_steps) * drift
    for slot, replica in enumerate(replicas):
        ensemble = sample_paths(model.p, model.d, t, n_steps, seed, replica)
        ends = ensemble.endpoints + drift * t + x
        u_values = np.asarray(model.u0.radial(np.linalg.norm(ends, axis=1)), dtype=float)
        hits += int(np.count_nonzero(u_values > 0))
        if np.any(u_values <= 0):
            continue
        log_w = float(np.sum(np.log(u_values)))
        if tilted:
            # Cameron-Martin 似然比 exp(-c·B_t - |c|²t/2)，逐条路径相乘
            log_w -= float(np.sum(ensemble.endpoints @ drift)) + model.p * float(drift @ drift) * t / 2
        if coupling > 0:
            paths = ensemble.paths + ramp if tilted else ensemble.paths
            energy = 0.0
            for i in range(model.p):
                for j in range(i + 1, model.p):
                    value, count = pair_energy(paths[i], paths[j], gamma, lam, t, spec)
                    energy += value
                    clips += count
            log_w += coupling * energy
        log_weights[slot] = log_w
    return log_weights, clips, hits


def moment_estimate(
    model: ModelParams,
    gamma: TimeCovariance,
    lam: SpaceCovariance,
    t: float,
    x,
    n_rep: int,
    n_steps: int,
    seed: int,
    spec: QuadratureSpec = QuadratureSpec(),
    workers: int = 1,
    replica_offset: int = 0,
    tilt: bool = False,
) -> MomentEstimate:
    """
    估计 E u^p(t,x)。

    λ = 0 时矩分解为 (p_t u_0(x))^p，直接返回精确值且 stderr = 0。
    否则按副本编号分块并行计算对数权重，用 log-sum-exp 平移后按编号
    顺序两两求和。

    ``tilt`` 为 True 时每条路径加上漂移 c = -x/t，使终点落在 u_0 的支撑
    附近，权重乘以 Cameron-Martin 似然比；估计量仍然无偏，远离原点时
    不会出现全部副本落空。

    参数:
        model: 模型参数
        gamma: 时间协方差
        lam: 空间协方差（White1D 需先换成 MollifiedWhite）
        t: 时间
        x: 空间点，标量表示第一坐标轴上的点
        n_rep: 副本数，n_rep ≥ 2
        n_steps: 时间网格数
        seed: 主种子
        spec: 配对能量求积设置
        workers: 线程数，不影响任何输出
        replica_offset: 副本编号起点，网格扫描时各点使用不相交的编号区间
        tilt: 是否使用漂移路径做重要性抽样

    返回:
        MomentEstimate
    """
    if lam.family is SpaceFamily.WHITE_1D:
        raise WhitePointwiseEval("矩估计不接受 White1D，请使用 MollifiedWhite")
    if n_rep < 2:
        raise DomainError("副本数必须满足 n_rep ≥ 2", n_rep=n_rep)
    if not t > 0:
        raise DomainError("矩估计要求 t > 0", t=t)
    point = _as_point(x, model.d)
    echo = dict(p=model.p, t=t, x=tuple(point.tolist()), lam=model.lam, n_rep=n_rep, n_steps=n_steps, seed=seed)

    if model.lam == 0:
        field_value = mean_field(model.u0, t, point, model.d)
        if field_value <= 0:
            raise AllZeroMass("平均场在该点下溢为0", hit_fraction=0.0, t=t, x=echo["x"])
        log_value = model.p * math.log(field_value)
        return MomentEstimate(
            value=_exp(log_value), stderr=0.0, log_value=log_value, log_stderr=-math.inf, log_weight_mean=log_value, **echo
        )

    chunks = [
        range(start, min(start + REPLICA_CHUNK, replica_offset + n_rep))
        for start in range(replica_offset, replica_offset + n_rep, REPLICA_CHUNK)
    ]
    logger.debug(f"🎲 {n_rep} 个副本分为 {len(chunks)} 块，线程数 {workers}")

    drift = -point / t if tilt else np.zeros(model.d)

    def run(replicas: range):
        return _replica_chunk(model, gamma, lam, t, point, n_steps, seed, spec, replicas, drift)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results: List = list(pool.map(run, chunks))
    else:
        results = [run(chunk) for chunk in chunks]

    log_weights = np.concatenate([result[0] for result in results])
    clip_events = sum(result[1] for result in results)
    path_hits = sum(result[2] for result in results)
    hit_fraction = path_hits / (n_rep * model.p)

    finite = np.isfinite(log_weights)
    if not np.any(finite):
        logger.warning(f"⚠️ 所有副本都落在初值支撑之外，单路径命中率 {hit_fraction:.3g}")
        raise AllZeroMass("所有副本都落在初值支撑之外", hit_fraction=hit_fraction, t=t, x=echo["x"])
    if clip_events:
        logger.warning(f"✂️ 奇异核截断 {clip_events} 次")

    shift = float(np.max(log_weights[finite]))
    weights = np.exp(log_weights - shift)
    spread = float(np.std(weights, ddof=1)) / math.sqrt(n_rep)
    log_value = float(special.logsumexp(log_weights[finite])) - math.log(n_rep)
    log_stderr = shift + math.log(spread) if spread > 0 else -math.inf
    hit_logs = log_weights[finite]
    weight_stderr = float(np.std(hit_logs, ddof=1)) / math.sqrt(hit_logs.size) if hit_logs.size > 1 else math.inf
    return MomentEstimate(
        value=_exp(log_value),
        stderr=_exp(log_stderr) if spread > 0 else 0.0,
        log_value=log_value,
        log_stderr=log_stderr,
        clip_events=clip_events,
        hit_fraction=hit_fraction,
        replica_hit_fraction=hit_logs.size / n_rep,
        log_weight_mean=float(np.mean(hit_logs)),
        log_weight_stderr=weight_stderr,
        **echo,
    )


def _small_ball_block(d: int, eps: float, n_steps: int, seed: int, block: int, size: int) -> int:
    rng = replica_generator(seed, block)
    scale = math.sqrt(1.0 / n_steps)
    position = np.zeros((size, d))
    inside = np.ones(size, dtype=bool)
    for start in range(0, n_steps, STEP_BLOCK):
        steps = min(STEP_BLOCK, n_steps - start)
        walk = position[:, None, :] + np.cumsum(rng.standard_normal((size, steps, d)) * scale, axis=1)
        inside &= np.max(np.linalg.norm(walk, axis=2), axis=1) <= eps
        position = walk[:, -1, :]
    return int(np.count_nonzero(inside))


def small_ball_mc(d: int, eps: float, n_steps: int, n_rep: int, seed: int, workers: int = 1) -> Tuple[float, float]:
    """
    P{sup_{0≤s≤1}|B_s| ≤ ε} 的离散网格估计。

    路径按 4096 条一块生成，每块的随机流由 (seed, 块编号) 决定。离散
    网格只检查节点，因此偏差是单侧的（高估）。

    返回:
        (P̂, stderr)
    """
    if not eps > 0:
        raise DomainError("小球半径必须为正", eps=eps)
    if n_rep < 1 or n_steps < 1:
        raise DomainError("要求 n_rep ≥ 1 且 n_steps ≥ 1", n_rep=n_rep, n_steps=n_steps)
    blocks = [(b, min(SMALL_BALL_BLOCK, n_rep - b * SMALL_BALL_BLOCK)) for b in range(math.ceil(n_rep / SMALL_BALL_BLOCK))]

    def run(block):
        return _small_ball_block(d, eps, n_steps, seed, *block)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(run, blocks))
    else:
        counts = [run(block) for block in blocks]
    p_hat = sum(counts) / n_rep
    stderr = math.sqrt(p_hat * (1 - p_hat) / n_rep)
    logger.debug(f"🎯 小球概率 d={d}, ε={eps}: {p_hat:.6g} ± {stderr:.2g}")
    return p_hat, stderr
