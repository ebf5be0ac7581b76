# gtd_eval.py
"""
有限 MDP 上的 GTD / GTD2 策略评估。

统一目标 J(θ) = ‖b − Aθ‖²_{M⁻¹}，M = I (GTD) 或 M = C (GTD2)，
等价的鞍点形式 min_θ max_y ⟨b − Aθ, y⟩ − ½‖y‖²_M。

A = E[ρ φ(s)(φ(s) − γφ(s′))ᵀ], b = E[ρ φ(s) r], C = E[φ(s)φ(s)ᵀ]，
期望按 d(s)·μ_b(a|s)·P(s, a, s′) 精确求和，d 是行为策略下的状态平稳分布。
"""
import json
import logging
from enum import Enum
from pathlib import Path
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from utils import ConfigError, NumericError, AssumptionViolation, DimensionError
from saddle_core import BallDomain, StochasticSaddleProblem
from gap_metrics import BilinearQuadraticProblem
from markov_data import FiniteChain, stationary_distribution
from bounds import GtdConstants

STOCHASTIC_TOL = 1e-10
SINGULAR_TOL = 1e-12


class GtdMode(str, Enum):
    GTD = 'gtd'
    GTD2 = 'gtd2'


class PolicyMode(str, Enum):
    ON = 'on'
    OFF = 'off'


# --- MDP 与特征 ---
def _stochastic_rows(array, name: str) -> np.ndarray:
    array = np.array(array, dtype=float)
    if not np.all(np.isfinite(array)) or np.any(array < 0):
        raise AssumptionViolation(f"{name} 含负数或非有限值")
    sums = array.sum(axis=-1)
    if np.abs(sums - 1.0).max() > STOCHASTIC_TOL:
        raise AssumptionViolation(f"{name} 的行和偏离 1 (最大偏差 {np.abs(sums - 1.0).max():.3e})")
    return array / sums[..., None]


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """P[s, a, s′], R[s, a], 目标策略 target[s, a]，行为策略 behavior[s, a] (None 表示均匀随机)。"""
    P: np.ndarray
    R: np.ndarray
    gamma: float
    target: np.ndarray
    behavior: np.ndarray | None = None
    name: str = 'mdp'

    def __post_init__(self):
        P = _stochastic_rows(self.P, 'P')
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionError(f"P 的形状应为 (S, A, S)，得到 {P.shape}")
        S, A, _ = P.shape
        R = np.array(self.R, dtype=float)
        if R.shape != (S, A):
            raise DimensionError(f"R 的形状应为 {(S, A)}，得到 {R.shape}")
        if not np.all(np.isfinite(R)):
            raise AssumptionViolation("R 含非有限值")
        if not 0.0 < self.gamma < 1.0:
            raise AssumptionViolation(f"γ 必须严格位于 (0, 1) 内: {self.gamma}")
        target = _stochastic_rows(self.target, 'target')
        behavior = np.full((S, A), 1.0 / A) if self.behavior is None else _stochastic_rows(self.behavior, 'behavior')
        for name, policy in (('target', target), ('behavior', behavior)):
            if policy.shape != (S, A):
                raise DimensionError(f"{name} 策略形状应为 {(S, A)}，得到 {policy.shape}")
        uncovered = np.argwhere((target > 0) & (behavior == 0))
        if uncovered.size:
            s, a = uncovered[0]
            raise AssumptionViolation(f"行为策略未覆盖目标策略: μ({a}|{s}) > 0 但 μ_b({a}|{s}) = 0")
        for arr in (P, R, target, behavior):
            arr.setflags(write=False)
        object.__setattr__(self, 'P', P)
        object.__setattr__(self, 'R', R)
        object.__setattr__(self, 'target', target)
        object.__setattr__(self, 'behavior', behavior)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def r_max(self) -> float:
        return float(np.abs(self.R).max())


@dataclass(frozen=True, eq=False)
class FeatureMap:
    Phi: np.ndarray

    def __post_init__(self):
        Phi = np.array(self.Phi, dtype=float, ndmin=2)
        if not np.all(np.isfinite(Phi)):
            raise AssumptionViolation("特征含非有限值")
        Phi.setflags(write=False)
        object.__setattr__(self, 'Phi', Phi)

    @classmethod
    def tabular(cls, n_states: int) -> 'FeatureMap':
        return cls(np.eye(n_states))

    @classmethod
    def random(cls, n_states: int, d: int, seed: int = 0) -> 'FeatureMap':
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        return cls(rng.uniform(-1.0, 1.0, size=(n_states, d)))

    @property
    def d(self) -> int:
        return self.Phi.shape[1]

    @property
    def L(self) -> float:
        """max_s ‖φ(s)‖_∞"""
        return float(np.abs(self.Phi).max())

    @property
    def L2(self) -> float:
        """max_s ‖φ(s)‖₂ (≤ L√d)"""
        return float(np.linalg.norm(self.Phi, axis=1).max())


@dataclass(frozen=True)
class TransitionSample:
    s: int
    a: int
    r: float
    s_next: int


# --- 精确量 ---
def policy_kernel(mdp: MdpSpec, policy=None) -> tuple[np.ndarray, np.ndarray]:
    """(P^μ, R^μ)：按策略对动作求平均后的转移矩阵和奖励。"""
    policy = mdp.target if policy is None else np.asarray(policy, dtype=float)
    return np.einsum('sa,sat->st', policy, mdp.P), np.einsum('sa,sa->s', policy, mdp.R)


def exact_value(mdp: MdpSpec, policy=None) -> np.ndarray:
    """解 (I − γP^μ)V = R^μ。"""
    P_mu, R_mu = policy_kernel(mdp, policy)
    try:
        return linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_mu, R_mu)
    except linalg.LinAlgError as e:
        raise NumericError(f"Bellman 方程组奇异: {e}") from e


def _extreme_singular_values(matrix: np.ndarray) -> tuple[float, float]:
    values = linalg.svdvals(matrix)
    return float(values.max()), float(values.min())


@dataclass(frozen=True, eq=False)
class GtdInstance:
    mdp: MdpSpec
    features: FeatureMap
    mode: GtdMode
    policy_mode: PolicyMode
    behavior: np.ndarray
    rho: np.ndarray
    state_distribution: np.ndarray
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    M: np.ndarray
    value: np.ndarray
    lambda_M: float
    lambda_C: float
    nu_C: float
    nu_AMA: float
    pi_max: float
    rho_max: float
    cond_A: float
    cond_C: float

    @property
    def d(self) -> int:
        return self.features.d

    def solution(self) -> np.ndarray:
        return linalg.solve(self.A, self.b)


def exact_instance_matrices(mdp: MdpSpec, features: FeatureMap, mode='gtd', policy_mode='on') -> GtdInstance:
    """按 d(s)μ_b(a|s)P(s,a,s′) 精确求和得到 A, b, C, M，并附上求界所需的奇异值。"""
    mode = GtdMode(mode)
    policy_mode = PolicyMode(policy_mode)
    if features.Phi.shape[0] != mdp.n_states:
        raise DimensionError(f"特征行数 {features.Phi.shape[0]} 与状态数 {mdp.n_states} 不符")

    behavior = mdp.target if policy_mode is PolicyMode.ON else mdp.behavior
    rho = np.divide(mdp.target, behavior, out=np.zeros_like(mdp.target), where=behavior > 0)
    P_b, _ = policy_kernel(mdp, behavior)
    dist = stationary_distribution(P_b)

    Phi = features.Phi
    # K[s, s′] = Σ_a d(s) μ_b(a|s) ρ(s,a) P(s,a,s′)
    K = np.einsum('s,sa,sat->st', dist, behavior * rho, mdp.P)
    A = Phi.T @ (K.sum(axis=1)[:, None] * Phi) - mdp.gamma * Phi.T @ K @ Phi
    b = Phi.T @ (dist * np.einsum('sa,sa->s', behavior * rho, mdp.R))
    C = Phi.T @ (dist[:, None] * Phi)
    M = np.eye(features.d) if mode is GtdMode.GTD else C

    sigma_A = _extreme_singular_values(A)
    sigma_C = _extreme_singular_values(C)
    for name, (top, bottom) in (('A', sigma_A), ('C', sigma_C)):
        if bottom <= SINGULAR_TOL * max(top, 1.0):
            raise AssumptionViolation(f"矩阵 {name} 奇异 (最小奇异值 {bottom:.3e})")
    AMA = A.T @ linalg.solve(M, A, assume_a='pos')
    nu_AMA = float(linalg.eigvalsh(0.5 * (AMA + AMA.T)).min())
    if nu_AMA <= 0:
        raise AssumptionViolation(f"AᵀM⁻¹A 不是正定的 (最小特征值 {nu_AMA:.3e})")

    instance = GtdInstance(
        mdp=mdp, features=features, mode=mode, policy_mode=policy_mode,
        behavior=behavior, rho=rho, state_distribution=dist,
        A=A, b=b, C=C, M=M, value=exact_value(mdp),
        lambda_M=_extreme_singular_values(M)[0],
        lambda_C=sigma_C[0],
        nu_C=float(linalg.eigvalsh(C).min()),
        nu_AMA=nu_AMA,
        pi_max=float(dist.max()),
        rho_max=float(rho.max()),
        cond_A=sigma_A[0] / sigma_A[1],
        cond_C=sigma_C[0] / sigma_C[1],
    )
    logging.debug(f"GTD 实例 {mdp.name}/{mode.value}/{policy_mode.value}: cond(A)={instance.cond_A:.3g}, "
                  f"cond(C)={instance.cond_C:.3g}, ρ_max={instance.rho_max:.3g}")
    return instance


def objective(instance: GtdInstance, theta) -> float:
    """‖b − Aθ‖²_{M⁻¹}：GTD 为 NEU，GTD2 为 MSPBE。"""
    residual = instance.b - instance.A @ np.asarray(theta, dtype=float)
    return float(residual @ linalg.solve(instance.M, residual, assume_a='pos'))


def value_error(instance: GtdInstance, theta) -> float:
    """‖V − Φθ‖_d。"""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (instance.d,):
        raise DimensionError(f"θ 长度 {theta.shape} 与特征维度 {instance.d} 不符")
    diff = instance.value - instance.features.Phi @ theta
    return float(np.sqrt(instance.state_distribution @ diff ** 2))


# --- 转移链与采样 ---
def transition_index(instance: GtdInstance, s: int, a: int, s_next: int) -> int:
    return (s * instance.mdp.n_actions + a) * instance.mdp.n_states + s_next


def decode_transition(instance: GtdInstance, k: int) -> TransitionSample:
    S, A = instance.mdp.n_states, instance.mdp.n_actions
    sa, s_next = divmod(int(k), S)
    s, a = divmod(sa, A)
    return TransitionSample(s, a, float(instance.mdp.R[s, a]), s_next)


def transition_chain(instance: GtdInstance) -> FiniteChain:
    """
    (s, a, s′) 上的马尔可夫链: (s, a, s′) → (s′, a′, s″) 的概率为 μ_b(a′|s′)P(s′, a′, s″)，
    平稳分布为 d(s)μ_b(a|s)P(s, a, s′)。
    """
    mdp = instance.mdp
    S, A = mdp.n_states, mdp.n_actions
    block = A * S
    # 以 s′ 为起点的一步转移，展平为长度 A·S 的行
    outgoing = (instance.behavior[:, :, None] * mdp.P).reshape(S, block)
    K = S * block
    P_T = np.zeros((K, K))
    next_state = np.arange(K) % S
    for s_next in range(S):
        rows = next_state == s_next
        P_T[np.ix_(rows, np.arange(s_next * block, (s_next + 1) * block))] = outgoing[s_next]
    pi_T = (instance.state_distribution[:, None, None] * instance.behavior[:, :, None] * mdp.P).ravel()
    pi_T = np.clip(pi_T, 0.0, None)
    return FiniteChain(P_T, pi_T / pi_T.sum())


@dataclass(frozen=True, eq=False)
class TransitionGradients:
    """每个转移下标 k 对应的 (Â_k, b̂_k, Ĉ_k)。"""
    A_hat: np.ndarray
    b_hat: np.ndarray
    C_hat: np.ndarray


def _all_transition_gradients(instance: GtdInstance) -> TransitionGradients:
    mdp = instance.mdp
    Phi = instance.features.Phi
    S, A = mdp.n_states, mdp.n_actions
    s, a, s_next = np.unravel_index(np.arange(S * A * S), (S, A, S))
    rho = instance.rho[s, a]
    td = Phi[s] - mdp.gamma * Phi[s_next]
    A_hat = rho[:, None, None] * Phi[s][:, :, None] * td[:, None, :]
    b_hat = (rho * mdp.R[s, a])[:, None] * Phi[s]
    C_hat = Phi[s][:, :, None] * Phi[s][:, None, :]
    return TransitionGradients(A_hat, b_hat, C_hat)


def sample_norm_bounds(instance: GtdInstance) -> tuple[float, float]:
    """((1+γ)ρ_max L²d, ρ_max L₂ R_max)，依次界定 ‖Â_t‖₂ 与 ‖b̂_t‖₂。"""
    f = instance.features
    return ((1.0 + instance.mdp.gamma) * instance.rho_max * f.L ** 2 * f.d,
            instance.rho_max * f.L2 * instance.mdp.r_max)


def sample_gradients(instance: GtdInstance, sample) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Â = ρ φ(s)(φ(s) − γφ(s′))ᵀ, b̂ = ρ φ(s) r, Ĉ = φ(s)φ(s)ᵀ。
    sample 可以是 TransitionSample，也可以是转移链的状态下标。
    """
    if not isinstance(sample, TransitionSample):
        sample = decode_transition(instance, sample)
    Phi = instance.features.Phi
    phi_s = Phi[sample.s]
    rho = instance.rho[sample.s, sample.a]
    A_hat = rho * np.outer(phi_s, phi_s - instance.mdp.gamma * Phi[sample.s_next])
    b_hat = rho * sample.r * phi_s
    C_hat = np.outer(phi_s, phi_s)
    a_bound, b_bound = sample_norm_bounds(instance)
    assert np.linalg.norm(A_hat, 2) <= a_bound * (1 + 1e-12) + 1e-12, "‖Â_t‖₂ 超过理论上界"
    assert np.linalg.norm(b_hat) <= b_bound * (1 + 1e-12) + 1e-12, "‖b̂_t‖₂ 超过理论上界"
    return A_hat, b_hat, C_hat


class GtdOracle:
    """
    样本为转移下标 k：
        G_x = −Â_kᵀ y,  G_y = b̂_k − Â_k x − M̂_k y  (M̂ = I 或 Ĉ_k)
    这样通用的下降步 x − αG_x 就是 x + αÂᵀy。
    """

    def __init__(self, instance: GtdInstance):
        grads = _all_transition_gradients(instance)
        self.A_hat = grads.A_hat
        self.b_hat = grads.b_hat
        self.C_hat = grads.C_hat if instance.mode is GtdMode.GTD2 else None

    def __call__(self, x, y, k):
        A_k = self.A_hat[k]
        m_y = y if self.C_hat is None else self.C_hat[k] @ y
        return -A_k.T @ y, self.b_hat[k] - A_k @ x - m_y


class GtdExactGradient:
    def __init__(self, instance: GtdInstance):
        self.A, self.b, self.M = instance.A, instance.b, instance.M

    def __call__(self, x, y):
        return -self.A.T @ y, self.b - self.A @ x - self.M @ y


def gtd_saddle_problem(instance: GtdInstance, radius_x: float = 10.0, radius_y: float = 10.0) -> StochasticSaddleProblem:
    d = instance.d
    return StochasticSaddleProblem(
        domain_x=BallDomain(d, radius_x),
        domain_y=BallDomain(d, radius_y),
        oracle=GtdOracle(instance),
        exact_gradient=GtdExactGradient(instance),
        name=f"{instance.mdp.name}-{instance.mode.value}-{instance.policy_mode.value}",
    )


def gtd_bilinear_problem(instance: GtdInstance, radius_x: float = 10.0, radius_y: float = 10.0) -> BilinearQuadraticProblem:
    """同一鞍点问题的确定性形式 (μ_x = 0, M_y = M)，用于计算间隙。"""
    d = instance.d
    return BilinearQuadraticProblem(instance.A, instance.b, 0.0, instance.M,
                                    BallDomain(d, radius_x), BallDomain(d, radius_y))


def gtd_constants(instance: GtdInstance) -> GtdConstants:
    f = instance.features
    return GtdConstants(
        gamma=instance.mdp.gamma,
        rho_max=instance.rho_max,
        L=f.L,
        d=f.d,
        R_max=instance.mdp.r_max,
        lambda_M=instance.lambda_M,
        lambda_C=instance.lambda_C,
        nu_C=instance.nu_C,
        nu_AMA=instance.nu_AMA,
        pi_max=instance.pi_max,
    )


# --- MDP 库 ---
def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def softmax_policy(logits, temperature: float = 1.0) -> np.ndarray:
    logits = np.asarray(logits, dtype=float) / temperature
    weights = np.exp(logits - logits.max(axis=1, keepdims=True))
    return weights / weights.sum(axis=1, keepdims=True)


def swap2_mdp() -> MdpSpec:
    """两状态确定性交换，r = (1, 0)，γ = 0.5；V = (4/3, 2/3)。"""
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 0] = 1.0
    return MdpSpec(P, np.array([[1.0], [0.0]]), 0.5, np.ones((2, 1)), name='swap2')


def walk5_mdp(gamma: float = 0.5) -> MdpSpec:
    """
    5 状态随机游走，动作 0 向左、1 向右，两端越界时留在原地。
    最左端状态奖励 −1，最右端 +1。目标策略均匀，行为策略偏左 (0.6, 0.4)，ρ_max = 1.25。

    目标策略下价值向量关于中点反对称 (γ = 0.5 时 V = (−1.45, −0.36, 0, 0.36, 1.45))，
    在 (I − γP) 最慢的常数方向上没有分量，常数步长 GTD 在 T = 10⁵ 内收敛到 10⁻² 以内。
    """
    S = 5
    P = np.zeros((S, 2, S))
    for s in range(S):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, min(s + 1, S - 1)] = 1.0
    R = np.zeros((S, 2))
    R[0, :] = -1.0
    R[S - 1, :] = 1.0
    target = uniform_policy(S, 2)
    return MdpSpec(P, R, gamma, target, np.tile([0.6, 0.4], (S, 1)), name='walk5')


def random_mdp(n_states: int = 5, n_actions: int = 2, gamma: float = 0.9, seed: int = 0) -> MdpSpec:
    """Dirichlet 转移行、[0, 1] 均匀奖励、softmax 目标策略、均匀行为策略。"""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    target = softmax_policy(rng.standard_normal((n_states, n_actions)))
    return MdpSpec(P, R, gamma, target, uniform_policy(n_states, n_actions), name=f'random{n_states}x{n_actions}')


MDP_ZOO = {
    'swap2': swap2_mdp,
    'walk5': walk5_mdp,
    'random': random_mdp,
}


def resolve_mdp(reference: str, seed: int = 0, gamma: float | None = None) -> MdpSpec:
    """库中的名字 (swap2 / walk5 / random) 或 MDP JSON 文件路径。"""
    if reference == 'swap2':
        return swap2_mdp()
    if reference == 'walk5':
        return walk5_mdp() if gamma is None else walk5_mdp(gamma)
    if reference == 'random':
        return random_mdp(seed=seed) if gamma is None else random_mdp(gamma=gamma, seed=seed)
    path = Path(reference)
    if path.suffix.lower() == '.json':
        return load_mdp(path)
    raise ConfigError(f"未知的 MDP: '{reference}' (可选 {', '.join(MDP_ZOO)} 或 .json 文件)")


# --- MDP 文件 ---
def save_mdp(mdp: MdpSpec, path: Path, features: FeatureMap | None = None):
    payload = {
        'name': mdp.name,
        'n_states': mdp.n_states,
        'n_actions': mdp.n_actions,
        'gamma': mdp.gamma,
        'transitions': mdp.P.tolist(),
        'rewards': mdp.R.tolist(),
        'target_policy': mdp.target.tolist(),
        'behavior_policy': mdp.behavior.tolist(),
        'features': None if features is None else features.Phi.tolist(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2)
    logging.info(f"MDP 已保存: {path}")


def load_mdp(path: Path) -> MdpSpec:
    mdp, _ = load_mdp_with_features(path)
    return mdp


def load_mdp_with_features(path: Path) -> tuple[MdpSpec, FeatureMap | None]:
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
        S, A = int(data['n_states']), int(data['n_actions'])
        P = np.asarray(data['transitions'], dtype=float).reshape(S, A, S)
        R = np.asarray(data['rewards'], dtype=float).reshape(S, A)
        target = np.asarray(data['target_policy'], dtype=float).reshape(S, A)
        behavior = data.get('behavior_policy')
        behavior = None if behavior is None else np.asarray(behavior, dtype=float).reshape(S, A)
        features = data.get('features')
        mdp = MdpSpec(P, R, float(data['gamma']), target, behavior, name=data.get('name', path.stem))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"无法读取 MDP 文件 {path}: {e}") from e
    return mdp, None if features is None else FeatureMap(np.asarray(features, dtype=float))


if __name__ == "__main__":
    logging.basicConfig(level=logging.DEBUG, format='%(asctime)s - %(levelname)s - %(message)s')
    swap = exact_instance_matrices(swap2_mdp(), FeatureMap.tabular(2))
    print("A =", swap.A.tolist(), "b =", swap.b.tolist())
    print("A⁻¹b =", swap.solution(), "V =", swap.value)
