# saddle_core.py
"""
鞍点问题的基础抽象：投影域 (欧氏球)、步长序列、以及带加权平均的投影随机梯度循环。

约定: x 做下降 (x - α G_x)，y 做上升 (y + α G_y)，与 min_x max_y 的形式一致。
"""
import math
import logging
from enum import Enum
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import special

from utils import NumericError, DimensionError, ConfigError
from markov_data import SampleStream

# 投影后允许的浮点越界量
DOMAIN_TOLERANCE = 1e-9


# --- 投影域 ---
@dataclass(frozen=True, eq=False)
class BallDomain:
    dimension: int
    radius: float
    center: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.dimension <= 0:
            raise DimensionError(f"dimension 必须为正整数: {self.dimension}")
        if not self.radius > 0:
            raise ValueError(f"radius 必须为正: {self.radius}")
        center = np.zeros(self.dimension) if self.center is None else np.asarray(self.center, dtype=float)
        if center.shape != (self.dimension,):
            raise DimensionError(f"center 长度 {center.shape} 与 dimension={self.dimension} 不符")
        center.setflags(write=False)
        object.__setattr__(self, 'center', center)

    @property
    def is_centered(self) -> bool:
        return not np.any(self.center)

    def diameter(self) -> float:
        return 2.0 * self.radius

    def contains(self, v: np.ndarray, tol: float = DOMAIN_TOLERANCE) -> bool:
        return float(np.linalg.norm(np.asarray(v) - self.center)) <= self.radius + tol


def project(domain: BallDomain, v) -> np.ndarray:
    """欧氏投影到球 domain 上；球内的点原样返回。"""
    v = np.asarray(v, dtype=float)
    if v.shape != (domain.dimension,):
        raise DimensionError(f"向量长度 {v.shape} 与投影域维度 {domain.dimension} 不符")
    offset = v - domain.center
    norm = math.sqrt(float(np.dot(offset, offset)))
    if norm <= domain.radius:
        return v
    return domain.center + (domain.radius / norm) * offset


def product_diameter(domain_x: BallDomain, domain_y: BallDomain) -> float:
    """𝒳_x × 𝒳_y 的直径 D。"""
    return 2.0 * math.hypot(domain_x.radius, domain_y.radius)


@dataclass(frozen=True, eq=False)
class SaddlePoint:
    x: np.ndarray
    y: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])


# --- 步长 ---
class ScheduleKind(str, Enum):
    CONSTANT = 'constant'
    INV_SQRT = 'inv_sqrt'
    INV = 'inv'


_SUM_CHUNK = 1_000_000


@dataclass(frozen=True)
class StepSchedule:
    """α_t (t 从 1 开始): constant → c, inv_sqrt → c/√t, inv → c/t。"""
    kind: ScheduleKind
    coefficient: float

    def __post_init__(self):
        object.__setattr__(self, 'kind', ScheduleKind(self.kind))
        if not self.coefficient > 0:
            raise ValueError(f"步长系数必须为正: {self.coefficient}")

    @classmethod
    def parse(cls, text: str) -> 'StepSchedule':
        """'constant:0.001' / 'inv_sqrt:0.015' / 'inv:0.03'"""
        try:
            kind, coefficient = text.strip().split(':')
            return cls(ScheduleKind(kind.strip()), float(coefficient))
        except ValueError as e:
            raise ConfigError(f"无法解析步长配置 '{text}' (格式 kind:c): {e}") from e

    @property
    def label(self) -> str:
        return f"{self.kind.value}:{self.coefficient:g}"

    @property
    def alpha0(self) -> float:
        # 序列非增，最大值就是 α_1
        return self.coefficient

    def alpha(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 1):
            raise ValueError("步长序列从 t=1 开始")
        if self.kind is ScheduleKind.CONSTANT:
            out = np.full_like(t, self.coefficient)
        elif self.kind is ScheduleKind.INV_SQRT:
            out = self.coefficient / np.sqrt(t)
        else:
            out = self.coefficient / t
        return float(out) if out.ndim == 0 else out

    def sums(self, T: int) -> tuple[float, float]:
        """(Σ_{t=1}^T α_t, Σ_{t=1}^T α_t²)。"""
        if T < 1:
            raise ValueError(f"T 必须 ≥ 1: {T}")
        c = self.coefficient
        harmonic = float(special.digamma(T + 1) + np.euler_gamma)
        if self.kind is ScheduleKind.CONSTANT:
            return c * T, c * c * T
        if self.kind is ScheduleKind.INV:
            squares = float(np.pi ** 2 / 6 - special.polygamma(1, T + 1))
            return c * harmonic, c * c * squares
        # Σ 1/√t 没有简单闭式，分块求和
        partial = []
        for start in range(1, T + 1, _SUM_CHUNK):
            stop = min(start + _SUM_CHUNK, T + 1)
            partial.append(float(np.sum(1.0 / np.sqrt(np.arange(start, stop, dtype=float)))))
        return c * math.fsum(partial), c * c * harmonic


# --- 问题与轨迹 ---
GradientOracle = Callable[[np.ndarray, np.ndarray, Any], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class StochasticSaddleProblem:
    """
    min_{x∈𝒳_x} max_{y∈𝒳_y} E_ξ[Φ(x, y, ξ)]

    oracle(x, y, ξ) 返回 (G_x, G_y)：G_x 是 Φ 关于 x 的偏梯度 (下降方向取负)，
    G_y 是关于 y 的偏梯度 (上升方向)。exact_gradient(x, y) 可选，只用于测试。
    """
    domain_x: BallDomain
    domain_y: BallDomain
    oracle: GradientOracle
    exact_gradient: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    name: str = 'saddle'

    def origin(self) -> SaddlePoint:
        return SaddlePoint(self.domain_x.center.copy(), self.domain_y.center.copy())

    @property
    def diameter(self) -> float:
        return product_diameter(self.domain_x, self.domain_y)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    t: int
    x: np.ndarray
    y: np.ndarray
    weight_sum: float

    @property
    def point(self) -> SaddlePoint:
        return SaddlePoint(self.x, self.y)


@dataclass
class AveragedTrajectory:
    checkpoints: list[Checkpoint]
    final_average: SaddlePoint
    final_iterate: SaddlePoint
    weight_sum: float
    # keep_iterates=True 时保存 (α_t, z_t)，用于核对加权平均
    weights: np.ndarray | None = None
    iterates: np.ndarray | None = None


def default_checkpoints(T: int, count: int = 30, start: int = 10) -> list[int]:
    """[start, T] 内对数均匀的整数检查点 (去重后升序)。"""
    if T < 1:
        raise ValueError(f"T 必须 ≥ 1: {T}")
    start = min(start, T)
    grid = np.unique(np.round(np.logspace(np.log10(start), np.log10(T), count)).astype(int))
    return [int(t) for t in grid]


def _step_arrays(problem: StochasticSaddleProblem, x, y, sample, alpha: float, t: int | None):
    g_x, g_y = problem.oracle(x, y, sample)
    if not (np.all(np.isfinite(g_x)) and np.all(np.isfinite(g_y))):
        raise NumericError("梯度出现非有限值", t=t, sample=repr(sample))
    x_next = project(problem.domain_x, x - alpha * g_x)
    y_next = project(problem.domain_y, y + alpha * g_y)
    assert problem.domain_x.contains(x_next) and problem.domain_y.contains(y_next), \
        f"t={t}: 迭代点越出投影域"
    return x_next, y_next


def sgd_step(problem: StochasticSaddleProblem, z: SaddlePoint, sample, alpha: float, t: int | None = None) -> SaddlePoint:
    """单步投影随机梯度：x ← P(x − αG_x), y ← P(y + αG_y)，每步只调用一次 oracle。"""
    if not alpha > 0:
        raise ValueError(f"步长必须为正: {alpha}")
    x_next, y_next = _step_arrays(problem, np.asarray(z.x, float), np.asarray(z.y, float), sample, alpha, t)
    return SaddlePoint(x_next, y_next)


def run_sgd(
    problem: StochasticSaddleProblem,
    stream: SampleStream,
    schedule: StepSchedule,
    T: int,
    z1: SaddlePoint | None = None,
    checkpoint_grid: Sequence[int] | None = None,
    keep_iterates: bool = False,
) -> AveragedTrajectory:
    """
    运行 T 步投影 SGD，按顺序从 stream 取样本，并在检查点记录
    z̃_1^t = Σ α_s z_s / Σ α_s (s = 1..t)。

    平均用稳定的递推形式 z̃ ← z̃ + (α_t/Γ_t)(z_t − z̃)，Γ_t 以 longdouble 累加。
    """
    if T < 1:
        raise ValueError(f"T 必须 ≥ 1: {T}")
    grid = list(checkpoint_grid) if checkpoint_grid is not None else default_checkpoints(T)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("checkpoint_grid 必须严格升序")
    if grid and (grid[0] < 1 or grid[-1] > T):
        raise ValueError(f"checkpoint_grid 必须位于 [1, {T}] 内")

    z1 = problem.origin() if z1 is None else z1
    x = np.array(z1.x, dtype=float)
    y = np.array(z1.y, dtype=float)
    if not (problem.domain_x.contains(x) and problem.domain_y.contains(y)):
        raise ValueError("初始点 z_1 不在投影域内")

    alphas = schedule.alpha(np.arange(1, T + 1))
    avg_x, avg_y = x.copy(), y.copy()
    gamma = np.longdouble(0.0)
    checkpoints: list[Checkpoint] = []
    next_cp = 0
    stored_w = np.empty(T) if keep_iterates else None
    stored_z = np.empty((T, x.size + y.size)) if keep_iterates else None

    logging.debug(f"run_sgd: problem={problem.name}, schedule={schedule.label}, T={T}, 检查点 {len(grid)} 个")
    for t in range(1, T + 1):
        alpha = float(alphas[t - 1])
        gamma += alpha
        ratio = float(alpha / gamma)
        avg_x += ratio * (x - avg_x)
        avg_y += ratio * (y - avg_y)
        if keep_iterates:
            stored_w[t - 1] = alpha
            stored_z[t - 1, :x.size] = x
            stored_z[t - 1, x.size:] = y
        if next_cp < len(grid) and grid[next_cp] == t:
            checkpoints.append(Checkpoint(t, avg_x.copy(), avg_y.copy(), float(gamma)))
            next_cp += 1

        sample = stream.next_sample()
        x, y = _step_arrays(problem, x, y, sample, alpha, t)

    return AveragedTrajectory(
        checkpoints=checkpoints,
        final_average=SaddlePoint(avg_x, avg_y),
        final_iterate=SaddlePoint(x, y),
        weight_sum=float(gamma),
        weights=stored_w,
        iterates=stored_z,
    )


def batch_average(weights: np.ndarray, iterates: np.ndarray) -> np.ndarray:
    """Σ α_t z_t / Σ α_t 的直接计算。"""
    weights = np.asarray(weights, dtype=float)
    return (weights[:, None] * iterates).sum(axis=0) / weights.sum()
