# markov_data.py
"""
有限状态马尔可夫链：Metropolis-Hastings 构造、谱隙调节、混合时间测量，
以及三种样本流 (马尔可夫路径 / 平稳分布 i.i.d. / 经验回放)。

混合时间按 L1 距离 (= 2·TV) 定义，并对起始状态取最大：
    τ(η) = min{Δ : max_s ‖P^Δ(s,·) − π‖₁ ≤ η}
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from utils import ConfigError, NumericError, AssumptionViolation, SaddleLabError, DimensionError

ROW_SUM_TOL = 1e-12
STATIONARITY_TOL = 1e-10
DETAILED_BALANCE_TOL = 1e-12
MAX_POWER_ITERATIONS = 100_000
MAX_MIXING_LAG = 1_000_000
_UNIFORM_BLOCK = 4096


# --- 异常 ---
class DistributionError(ConfigError):
    pass


class InvalidProposalError(ConfigError):
    pass


class UnreachableSpectralTarget(ConfigError):
    def __init__(self, target, reachable):
        self.target = target
        self.reachable = reachable
        super().__init__(
            f"λ₂ 目标 {target} 无法达到；当前提议分布可达范围 [{reachable[0]:.6f}, {reachable[1]:.6f})")


class ChainValidationError(AssumptionViolation):
    pass


class MixingTooSlowError(NumericError):
    def __init__(self, message, tv_curve=None, **context):
        self.tv_curve = tv_curve or []
        super().__init__(message, **context)


class StreamExhaustedError(SaddleLabError):
    pass


# --- 分布与链 ---
def validate_distribution(pi, strictly_positive: bool = False, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """检查概率向量；出错时指出具体下标。"""
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or pi.size == 0:
        raise DistributionError(f"分布必须是非空一维向量，得到形状 {pi.shape}")
    bad = np.flatnonzero(~np.isfinite(pi))
    if bad.size:
        raise DistributionError(f"分布第 {int(bad[0])} 个元素不是有限数: {pi[bad[0]]}")
    negative = np.flatnonzero(pi < 0)
    if negative.size:
        raise DistributionError(f"分布第 {int(negative[0])} 个元素为负: {pi[negative[0]]}")
    if strictly_positive:
        zero = np.flatnonzero(pi == 0)
        if zero.size:
            raise DistributionError(f"分布第 {int(zero[0])} 个元素为 0，要求严格为正")
    if abs(pi.sum() - 1.0) > tol:
        raise DistributionError(f"分布之和为 {pi.sum():.17g}，应为 1")
    return pi


def stationary_distribution(P) -> np.ndarray:
    """解 πP = π, Σπ = 1 (最小二乘)。"""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    system = np.vstack((P.T - np.eye(n), np.ones((1, n))))
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True, eq=False)
class FiniteChain:
    P: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ChainValidationError(f"转移矩阵必须是方阵，得到形状 {P.shape}")
        if np.any(P < 0):
            i, j = np.argwhere(P < 0)[0]
            raise ChainValidationError(f"转移矩阵 P[{i}][{j}] = {P[i, j]} 为负")
        row_err = np.abs(P.sum(axis=1) - 1.0)
        if row_err.max() > ROW_SUM_TOL:
            raise ChainValidationError(f"第 {int(row_err.argmax())} 行之和偏离 1: {row_err.max():.3e}")
        try:
            pi = validate_distribution(self.pi)
        except DistributionError as e:
            raise ChainValidationError(f"平稳分布无效: {e}") from e
        if pi.size != P.shape[0]:
            raise ChainValidationError(f"平稳分布长度 {pi.size} 与状态数 {P.shape[0]} 不符")
        residual = float(np.abs(pi @ P - pi).max())
        if residual > STATIONARITY_TOL:
            raise ChainValidationError(f"‖πP − π‖∞ = {residual:.3e} 超过 {STATIONARITY_TOL}")
        P.setflags(write=False)
        pi = pi.copy()
        pi.setflags(write=False)
        object.__setattr__(self, 'P', P)
        object.__setattr__(self, 'pi', pi)

    @classmethod
    def from_matrix(cls, P) -> 'FiniteChain':
        return cls(P, stationary_distribution(P))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    def stationarity_residual(self) -> float:
        return float(np.abs(self.pi @ self.P - self.pi).max())

    def detailed_balance_residual(self) -> float:
        flow = self.pi[:, None] * self.P
        return float(np.abs(flow - flow.T).max())

    def is_reversible(self, tol: float = DETAILED_BALANCE_TOL) -> bool:
        return self.detailed_balance_residual() <= tol


# --- 提议分布 ---
def uniform_proposal(n_states: int) -> np.ndarray:
    """在全部状态 (含自身) 上均匀提议；对应的 MH 链 λ₂ = 0。"""
    return np.full((n_states, n_states), 1.0 / n_states)


def random_walk_proposal(n_states: int, k: int = 1) -> np.ndarray:
    """±k 窗口随机游走；越界的提议留在原地，因此矩阵对称。"""
    if k < 1:
        raise ValueError(f"k 必须 ≥ 1: {k}")
    idx = np.arange(n_states)
    offset = np.abs(idx[:, None] - idx[None, :])
    Q = np.where((offset > 0) & (offset <= k), 1.0 / (2 * k), 0.0)
    np.fill_diagonal(Q, 1.0 - Q.sum(axis=1))
    return Q


def mixed_proposal(n_states: int, k: int = 1, locality: float = 0.0) -> np.ndarray:
    """locality·RW_k + (1 − locality)·U。"""
    if not 0.0 <= locality <= 1.0:
        raise ValueError(f"locality 必须在 [0, 1] 内: {locality}")
    if locality == 0.0:
        return uniform_proposal(n_states)
    return locality * random_walk_proposal(n_states, k) + (1.0 - locality) * uniform_proposal(n_states)


def metropolis_hastings(pi, Q, laziness: float = 0.0) -> FiniteChain:
    """
    P[i][j] = (1−laziness)·Q[i][j]·min(1, π_j Q[j][i] / (π_i Q[i][j]))  (j ≠ i)
    对角元吸收剩余概率。用 min(π_i Q_ij, π_j Q_ji)/π_i 计算，使细致平衡逐元成立。
    """
    pi = validate_distribution(pi, strictly_positive=True)
    Q = np.asarray(Q, dtype=float)
    n = pi.size
    if Q.shape != (n, n):
        raise InvalidProposalError(f"提议矩阵形状 {Q.shape} 与目标分布长度 {n} 不符")
    if np.any(Q < 0) or np.abs(Q.sum(axis=1) - 1.0).max() > ROW_SUM_TOL:
        raise InvalidProposalError("提议矩阵必须非负且行和为 1")
    support = Q > 0
    asymmetric = np.argwhere(support != support.T)
    if asymmetric.size:
        i, j = asymmetric[0]
        raise InvalidProposalError(f"提议支撑不对称: Q[{i}][{j}] = {Q[i, j]}, Q[{j}][{i}] = {Q[j, i]}")
    if not 0.0 <= laziness < 1.0:
        raise ValueError(f"laziness 必须在 [0, 1) 内: {laziness}")

    flow = pi[:, None] * Q
    P = (1.0 - laziness) * np.minimum(flow, flow.T) / pi[:, None]
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, np.clip(1.0 - P.sum(axis=1), 0.0, None))
    return FiniteChain(P, pi)


# --- 谱 ---
def second_eigenvalue_modulus(chain: FiniteChain, method: str = 'power',
                              tol: float = 1e-12, max_iter: int = MAX_POWER_ITERATIONS) -> float:
    """
    第二大模特征值。可逆链：对称化 D^{1/2} P D^{-1/2} 后减去已知的 (1, √π) 特征对，
    再对 B² 做幂迭代；不可逆或 π 有零元时退回稠密特征值分解。
    """
    reversible = chain.is_reversible() and np.all(chain.pi > 0)
    if method == 'dense' or not reversible:
        if not reversible:
            logging.debug("链不可逆或 π 含零元，使用稠密特征值分解。")
        value = _dense_second_eigenvalue(chain, reversible)
    elif method == 'power':
        value = _power_second_eigenvalue(chain, tol, max_iter)
    else:
        raise ValueError(f"未知方法: {method}")
    if value >= 1.0 - 1e-12:
        logging.warning(f"λ₂ 模 = {value:.12f}：链可约或周期，不满足一致混合。")
    return value


def _symmetrized(chain: FiniteChain) -> tuple[np.ndarray, np.ndarray]:
    root = np.sqrt(chain.pi)
    sym = root[:, None] * chain.P / root[None, :]
    return 0.5 * (sym + sym.T), root


def _dense_second_eigenvalue(chain: FiniteChain, reversible: bool) -> float:
    if reversible:
        sym, _ = _symmetrized(chain)
        values = linalg.eigvalsh(sym).astype(complex)
    else:
        values = linalg.eigvals(chain.P)
    if values.size < 2:
        return 0.0
    # 去掉最接近 1 的那个特征值
    top = int(np.argmin(np.abs(values - 1.0)))
    rest = np.delete(values, top)
    return float(np.abs(rest).max())


def _power_second_eigenvalue(chain: FiniteChain, tol: float, max_iter: int) -> float:
    sym, root = _symmetrized(chain)
    deflated = sym - np.outer(root, root)
    n = chain.n_states
    if n < 2:
        return 0.0
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v -= root * (root @ v)
    v /= np.linalg.norm(v)
    mu = 0.0
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        w = deflated @ (deflated @ v)
        mu = float(v @ w)
        norm_w = float(np.linalg.norm(w))
        if norm_w <= 1e-300 or mu <= 1e-28:
            return 0.0
        residual = float(np.linalg.norm(w - mu * v))
        if residual <= tol * max(mu, 1e-3):
            logging.debug(f"幂迭代在第 {iteration} 步收敛, 残差 {residual:.3e}")
            return float(np.sqrt(mu))
        v = w / norm_w
    raise NumericError("幂迭代未收敛", iterations=max_iter, residual=f"{residual:.3e}")


@dataclass(frozen=True, eq=False)
class TunedChain:
    chain: FiniteChain
    laziness: float
    second_eigenvalue: float
    target: float


def tune_spectral_gap(pi, target: float, tolerance: float = 0.02, proposal=None,
                      method: str = 'power') -> TunedChain:
    """
    在给定提议分布上二分 laziness，使 MH 链的 λ₂ 落在 target ± tolerance 内。
    懒惰化后 λ₂(ℓ) = ℓ + (1−ℓ)λ₂(0)，故只能向上调节。
    """
    if not 0.0 < target < 1.0:
        raise ConfigError(f"λ₂ 目标必须在 (0, 1) 内: {target}")
    if not tolerance > 0:
        raise ConfigError(f"tolerance 必须为正: {tolerance}")
    pi = validate_distribution(pi, strictly_positive=True)
    Q = uniform_proposal(pi.size) if proposal is None else np.asarray(proposal, dtype=float)

    def gap_error(laziness):
        return second_eigenvalue_modulus(metropolis_hastings(pi, Q, laziness), method=method) - target

    base = gap_error(0.0) + target
    if base > target + tolerance:
        raise UnreachableSpectralTarget(target, (base, 1.0))
    if abs(base - target) <= tolerance:
        laziness = 0.0
    else:
        laziness = optimize.brentq(gap_error, 0.0, 1.0 - 1e-9, xtol=1e-12, maxiter=200)
    chain = metropolis_hastings(pi, Q, laziness)
    achieved = second_eigenvalue_modulus(chain, method=method)
    if abs(achieved - target) > tolerance:
        raise NumericError("谱隙调节未达到容差", target=target, achieved=f"{achieved:.6f}")
    logging.info(f"调节完成: S={pi.size}, λ₂ 目标 {target}, 实际 {achieved:.6f}, laziness={laziness:.6f}")
    return TunedChain(chain, float(laziness), achieved, target)


# --- 混合时间 ---
@dataclass(frozen=True)
class MixingReport:
    second_eigenvalue_modulus: float
    tv_curve: list[tuple[int, float]]
    tau: dict[float, int]

    def tau_of(self, eta: float) -> int:
        return self.tau[eta]


def mixing_time(chain: FiniteChain, etas, max_lag: int = MAX_MIXING_LAG, method: str = 'power') -> MixingReport:
    """逐步计算 P^Δ 的每一行，记录对起点取最大的 L1 距离，返回每个 η 的最小 Δ。"""
    etas = sorted({float(e) for e in etas}, reverse=True)
    if not etas or etas[-1] <= 0:
        raise ValueError("η 必须为正")
    lam2 = second_eigenvalue_modulus(chain, method=method)
    if lam2 >= 1.0 - 1e-12:
        raise MixingTooSlowError("链不是不可约非周期的 (λ₂ 模 = 1)", second_eigenvalue=lam2)

    P = chain.P
    pi = chain.pi
    rows = np.eye(chain.n_states)
    curve: list[tuple[int, float]] = []
    tau: dict[float, int] = {}
    pending = list(etas)
    for lag in range(max_lag + 1):
        distance = float(np.abs(rows - pi[None, :]).sum(axis=1).max())
        curve.append((lag, distance))
        while pending and distance <= pending[0]:
            tau[pending.pop(0)] = lag
        if not pending:
            break
        rows = rows @ P
    else:
        raise MixingTooSlowError("达到最大滞后仍未混合", tv_curve=curve, max_lag=max_lag)

    distances = np.array([d for _, d in curve])
    if np.any(np.diff(distances) > 1e-12):
        logging.warning("TV 曲线不是单调非增的 (可能是周期性或数值误差)。")
    return MixingReport(lam2, curve, tau)


# --- 样本流 ---
class SampleStream(ABC):
    """有状态的样本源；单一所有者使用，不支持并发抽样。"""

    @abstractmethod
    def next_sample(self):
        ...

    def take(self, n: int) -> list:
        return [self.next_sample() for _ in range(n)]

    def __iter__(self):
        while True:
            yield self.next_sample()


class _UniformSource:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._block = np.empty(0)
        self._pos = 0

    def next(self) -> float:
        if self._pos >= self._block.size:
            self._block = self.rng.random(_UNIFORM_BLOCK)
            self._pos = 0
        u = self._block[self._pos]
        self._pos += 1
        return float(u)


def _cumulative(rows: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(rows, axis=-1)
    return cdf / cdf[..., -1:]


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


class MarkovPathStream(SampleStream):
    """按转移矩阵逐行抽样；第一个样本是 s0 (缺省时从 π 抽取)。"""

    def __init__(self, chain: FiniteChain, seed=0, s0: int | None = None):
        self.chain = chain
        self._uniform = _UniformSource(np.random.default_rng(_as_seed_sequence(seed)))
        self._cdf = _cumulative(chain.P)
        if s0 is None:
            s0 = int(np.searchsorted(_cumulative(chain.pi), self._uniform.next(), side='right'))
        if not 0 <= s0 < chain.n_states:
            raise DimensionError(f"初始状态 {s0} 越界")
        self._state = s0
        self._started = False

    def next_sample(self) -> int:
        if self._started:
            u = self._uniform.next()
            self._state = int(np.searchsorted(self._cdf[self._state], u, side='right'))
        self._started = True
        return self._state


class IidStationaryStream(SampleStream):
    def __init__(self, chain: FiniteChain, seed=0):
        self.chain = chain
        self._uniform = _UniformSource(np.random.default_rng(_as_seed_sequence(seed)))
        self._cdf = _cumulative(chain.pi)

    def next_sample(self) -> int:
        return int(np.searchsorted(self._cdf, self._uniform.next(), side='right'))


class ReplayStream(SampleStream):
    """
    经验回放：每次先把底层样本存入缓冲区，再从缓冲区均匀抽一个输出。
    capacity=None 表示保存全部历史；否则为 FIFO 环形缓冲。
    前 warmup 步只存不抽，直接输出底层样本。
    """

    def __init__(self, base: SampleStream, seed=0, capacity: int | None = None, warmup: int = 0):
        if capacity is not None and capacity < 1:
            raise ValueError(f"回放缓冲容量必须 ≥ 1: {capacity}")
        if warmup < 0:
            raise ValueError(f"回放预热步数必须非负: {warmup}")
        self.base = base
        self.capacity = capacity
        self.warmup = warmup
        self._steps = 0
        self._uniform = _UniformSource(np.random.default_rng(_as_seed_sequence(seed)))
        self._buffer: list = []
        self._head = 0

    def __len__(self) -> int:
        return len(self._buffer)

    def next_sample(self):
        sample = self.base.next_sample()
        if self.capacity is None or len(self._buffer) < self.capacity:
            self._buffer.append(sample)
        else:
            self._buffer[self._head] = sample
            self._head = (self._head + 1) % self.capacity
        self._steps += 1
        if self._steps <= self.warmup:
            return sample
        size = len(self._buffer)
        return self._buffer[min(int(self._uniform.next() * size), size - 1)]


class ArrayStream(SampleStream):
    """按顺序回放一段已存储的样本，取完后抛出 StreamExhaustedError。"""

    def __init__(self, samples):
        self._samples = list(samples)
        self._pos = 0

    def next_sample(self):
        if self._pos >= len(self._samples):
            raise StreamExhaustedError(f"样本流已耗尽 (共 {len(self._samples)} 个样本)")
        sample = self._samples[self._pos]
        self._pos += 1
        return sample


def make_stream(mode: str, chain: FiniteChain, seed=0, replay: bool = False,
                replay_capacity: int | None = None, s0: int | None = None,
                replay_warmup: int = 0) -> SampleStream:
    """mode ∈ {'markov', 'iid'}；同一 seed 给出完全相同的样本序列。"""
    base_seed, replay_seed = _as_seed_sequence(seed).spawn(2)
    if mode == 'markov':
        stream = MarkovPathStream(chain, base_seed, s0=s0)
    elif mode == 'iid':
        stream = IidStationaryStream(chain, base_seed)
    else:
        raise ConfigError(f"未知的样本流模式: {mode}")
    if replay:
        stream = ReplayStream(stream, replay_seed, capacity=replay_capacity, warmup=replay_warmup)
    return stream


# --- 经验分布 ---
def empirical_occupancy(samples, n_states: int) -> np.ndarray:
    samples = np.asarray(samples, dtype=int)
    return np.bincount(samples, minlength=n_states) / max(samples.size, 1)


def occupancy_deviation(samples, pi, times=None) -> list[tuple[int, float]]:
    """max_i |N_t(i)/t − π(i)| 在给定时刻上的取值。"""
    samples = np.asarray(samples, dtype=int)
    pi = np.asarray(pi, dtype=float)
    if times is None:
        times = np.unique(np.round(np.logspace(0, np.log10(max(samples.size, 1)), 50)).astype(int))
    return [(int(t), float(np.abs(empirical_occupancy(samples[:t], pi.size) - pi).max())) for t in times]


def replay_settling_time(samples, pi, eta: float, times=None) -> int | None:
    """此后偏差一直 ≤ η 的第一个时刻 t₀；从未稳定则返回 None。"""
    deviations = occupancy_deviation(samples, pi, times)
    settled = None
    for t, dev in deviations:
        if dev <= eta:
            settled = t if settled is None else settled
        else:
            settled = None
    return settled


# --- 链文件 ---
def save_chain(chain: FiniteChain, path: Path):
    """第一行 S，随后 S 行转移矩阵，最后一行 π；17 位有效数字。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"{chain.n_states}\n")
        np.savetxt(f, chain.P, fmt='%.17g')
        np.savetxt(f, chain.pi[None, :], fmt='%.17g')
    logging.info(f"链已保存: {path}")


def load_chain(path: Path) -> FiniteChain:
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as f:
            n = int(f.readline().strip())
            data = np.loadtxt(f, ndmin=2)
    except (OSError, ValueError) as e:
        raise ConfigError(f"无法读取链文件 {path}: {e}") from e
    if data.shape != (n + 1, n):
        raise ConfigError(f"链文件 {path} 形状 {data.shape} 与 S={n} 不符")
    return FiniteChain(data[:n], data[n])


# --- 命令行测试 ---
if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    uniform_pi = np.full(1001, 1.0 / 1001)
    for target in (0.634, 0.31):
        tuned = tune_spectral_gap(uniform_pi, target)
        report = mixing_time(tuned.chain, [0.1, 0.05, 0.01])
        print(f"λ₂ 目标 {target}: 实际 {tuned.second_eigenvalue:.4f}, τ(η) = {report.tau}")
