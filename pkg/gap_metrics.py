# gap_metrics.py
"""
双线性-二次型鞍点问题的原始-对偶间隙。

    φ(x, y) = ⟨b − Ax, y⟩ + (μ_x/2)‖x‖² − ½ yᵀ M_y y

Err_φ(z̃) = max_y φ(x̃, y) − min_x φ(x, ỹ)，两个内层问题都在球上精确求解：
x 侧是投影 (或线性函数在球上的最小值)，y 侧在 M_y = I 时是投影，
一般 M_y ⪰ 0 时用特征分解 + 对 λ 的一维求根 (‖y(λ)‖ = radius)。
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from utils import NumericError, AssumptionViolation, DimensionError
from saddle_core import BallDomain, SaddlePoint, StochasticSaddleProblem, project

KKT_TOLERANCE = 1e-10
GAP_TOLERANCE = 1e-9
MAX_BRACKET_STEPS = 200
BRUTE_FORCE_MAX_DIM = 3


class SolverError(NumericError):
    def __init__(self, message, residual=None, **context):
        self.residual = residual
        super().__init__(message, residual=residual, **context)


# --- 问题定义 ---
@dataclass(frozen=True, eq=False)
class BilinearQuadraticProblem:
    A: np.ndarray
    b: np.ndarray
    mu_x: float
    M_y: np.ndarray
    domain_x: BallDomain
    domain_y: BallDomain

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float).ravel()
        M = np.array(self.M_y, dtype=float, ndmin=2)
        m, n = A.shape
        if b.shape != (m,):
            raise DimensionError(f"b 的长度 {b.size} 与 A 的行数 {m} 不符")
        if (self.domain_x.dimension, self.domain_y.dimension) != (n, m):
            raise DimensionError(
                f"投影域维度 ({self.domain_x.dimension}, {self.domain_y.dimension}) 与 A 的形状 {A.shape} 不符")
        if M.shape != (m, m):
            raise DimensionError(f"M_y 形状 {M.shape} 应为 {(m, m)}")
        if not np.allclose(M, M.T, atol=1e-12):
            raise AssumptionViolation("M_y 必须对称")
        if self.mu_x < 0:
            raise AssumptionViolation(f"μ_x 必须非负: {self.mu_x}")
        eigvals, eigvecs = linalg.eigh(M)
        if eigvals.size and eigvals.min() < -1e-10 * max(1.0, float(np.abs(eigvals).max())):
            raise AssumptionViolation(f"M_y 不是半正定的 (最小特征值 {eigvals.min():.3e})")
        for arr in (A, b, M):
            arr.setflags(write=False)
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'M_y', M)
        object.__setattr__(self, 'mu_x', float(self.mu_x))
        object.__setattr__(self, '_m_eig', (np.clip(eigvals, 0.0, None), eigvecs))
        object.__setattr__(self, '_m_identity', bool(np.array_equal(M, np.eye(m))))

    @property
    def dim_x(self) -> int:
        return self.A.shape[1]

    @property
    def dim_y(self) -> int:
        return self.A.shape[0]


def phi(problem: BilinearQuadraticProblem, x, y):
    """φ(x, y)，对 x 或 y 的前导维度广播 (网格求值用)。"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    residual = problem.b - x @ problem.A.T
    return (np.sum(residual * y, axis=-1)
            + 0.5 * problem.mu_x * np.sum(x * x, axis=-1)
            - 0.5 * np.sum((y @ problem.M_y) * y, axis=-1))


@dataclass(frozen=True, eq=False)
class GapReport:
    gap: float
    inner_max_y: np.ndarray
    inner_min_x: np.ndarray
    iterations: int
    max_value: float
    min_value: float


# --- 内层求解 ---
def _check_length(v, dimension: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (dimension,):
        raise DimensionError(f"{name} 长度 {v.shape} 与维度 {dimension} 不符")
    return v


def _solve_max_y(problem: BilinearQuadraticProblem, x) -> tuple[np.ndarray, int]:
    x = _check_length(x, problem.dim_x, 'x̃')
    domain = problem.domain_y
    c = problem.b - problem.A @ x
    if problem._m_identity:
        # c·y − ½‖y‖² = −½‖y − c‖² + 常数
        return project(domain, c), 0

    # 以球心为原点: u = y − y₀，线性项 c' = c − M y₀
    eigvals, eigvecs = problem._m_eig
    shifted = c - problem.M_y @ domain.center
    coeffs = eigvecs.T @ shifted
    scale = max(1.0, float(eigvals.max()) if eigvals.size else 1.0)
    null = eigvals <= 1e-12 * scale
    radius = domain.radius

    if np.all(null):
        # M_y = 0：线性函数在球上的最大点
        norm = float(np.linalg.norm(shifted))
        return (domain.center.copy() if norm == 0.0 else domain.center + (radius / norm) * shifted), 0

    if np.all(np.abs(coeffs[null]) <= 1e-12 * max(1.0, float(np.linalg.norm(shifted)))):
        interior = np.zeros_like(coeffs)
        interior[~null] = coeffs[~null] / eigvals[~null]
        if np.linalg.norm(interior) <= radius:
            return domain.center + eigvecs @ interior, 0

    def excess(lam):
        return float(np.linalg.norm(coeffs / (eigvals + lam))) - radius

    iterations = 0
    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
        iterations += 1
        if iterations > MAX_BRACKET_STEPS:
            raise SolverError("y 子问题无法在 200 次内确定上界", residual=excess(hi))
    lo = hi
    with np.errstate(divide='ignore', invalid='ignore'):
        while True:
            lo *= 0.5
            iterations += 1
            value = excess(lo)
            if value > 0 or not np.isfinite(value):
                break
            if iterations > 2 * MAX_BRACKET_STEPS:
                raise SolverError("y 子问题无法在 200 次内确定下界", residual=value)

    # λ 可能很小，容差取相对于下界的量
    lam, result = optimize.brentq(excess, lo, hi, xtol=max(lo * 1e-15, 1e-300), rtol=4 * np.finfo(float).eps,
                                  maxiter=MAX_BRACKET_STEPS, full_output=True)
    iterations += result.iterations
    u = eigvecs @ (coeffs / (eigvals + lam))
    residual = abs(float(np.linalg.norm(u)) - radius)
    if residual > KKT_TOLERANCE * max(1.0, radius):
        raise SolverError("y 子问题 KKT 残差超过容差", residual=residual, lam=lam)
    logging.debug(f"y 子问题: λ={lam:.6e}, 迭代 {iterations} 次, 残差 {residual:.2e}")
    return project(domain, domain.center + u), iterations


def inner_max_y(problem: BilinearQuadraticProblem, x) -> tuple[np.ndarray, float]:
    """max_{y∈𝒳_y} φ(x̃, y) 的精确解与最优值。"""
    y, _ = _solve_max_y(problem, x)
    return y, float(phi(problem, x, y))


def inner_min_x(problem: BilinearQuadraticProblem, y) -> tuple[np.ndarray, float]:
    """min_{x∈𝒳_x} φ(x, ỹ)：μ_x > 0 时是投影，μ_x = 0 时是线性函数在球上的最小点。"""
    y = _check_length(y, problem.dim_y, 'ỹ')
    domain = problem.domain_x
    d = problem.A.T @ y
    if problem.mu_x > 0:
        x = project(domain, d / problem.mu_x)
    else:
        norm = float(np.linalg.norm(d))
        x = domain.center.copy() if norm == 0.0 else domain.center + (domain.radius / norm) * d
    return x, float(phi(problem, x, y))


def primal_dual_gap(problem: BilinearQuadraticProblem, z: SaddlePoint) -> GapReport:
    y_star, iterations = _solve_max_y(problem, z.x)
    max_value = float(phi(problem, z.x, y_star))
    x_star, min_value = inner_min_x(problem, z.y)
    gap = max_value - min_value
    if gap < -GAP_TOLERANCE:
        raise NumericError("原始-对偶间隙为负", gap=gap)
    return GapReport(max(gap, 0.0), y_star, x_star, iterations, max_value, min_value)


# --- 网格校验 ---
def ball_grid(domain: BallDomain, resolution: int) -> np.ndarray:
    """每个坐标轴均匀取 resolution 个点，只保留球内的点。"""
    if domain.dimension > BRUTE_FORCE_MAX_DIM:
        raise DimensionError(f"网格校验最多支持 {BRUTE_FORCE_MAX_DIM} 维，得到 {domain.dimension}")
    axes = [np.linspace(c - domain.radius, c + domain.radius, resolution) for c in domain.center]
    points = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, domain.dimension)
    inside = np.linalg.norm(points - domain.center, axis=1) <= domain.radius * (1 + 1e-12)
    return points[inside]


def brute_force_gap(problem: BilinearQuadraticProblem, z: SaddlePoint, grid_resolution: int = 41) -> float:
    """网格上的 max_y φ(x̃, y) − min_x φ(x, ỹ)，只用于测试。"""
    if grid_resolution < 2:
        raise ValueError(f"grid_resolution 必须 ≥ 2: {grid_resolution}")
    ys = ball_grid(problem.domain_y, grid_resolution)
    xs = ball_grid(problem.domain_x, grid_resolution)
    return float(phi(problem, z.x, ys).max() - phi(problem, xs, z.y).min())


def grid_step(domain: BallDomain, grid_resolution: int) -> float:
    return 2.0 * domain.radius / (grid_resolution - 1)


# --- 样本族与仿真实例 ---
@dataclass(frozen=True, eq=False)
class SampleFamily:
    """每个链状态 s 对应一对 (Â(s), b̂(s))，满足 E_π[Â] = A, E_π[b̂] = b。"""
    A_hat: np.ndarray
    b_hat: np.ndarray
    pi: np.ndarray

    @property
    def n_states(self) -> int:
        return self.A_hat.shape[0]

    def mean_deviation(self, A, b) -> float:
        mean_A = np.einsum('s,sij->ij', self.pi, self.A_hat)
        mean_b = self.pi @ self.b_hat
        return max(float(np.abs(mean_A - A).max()), float(np.abs(mean_b - b).max()))

    def max_norms(self) -> tuple[float, float]:
        return (float(np.linalg.norm(self.A_hat, ord=2, axis=(1, 2)).max()),
                float(np.linalg.norm(self.b_hat, axis=1).max()))


def _centered_perturbations(rng: np.random.Generator, shape, pi: np.ndarray, scale: float, norm) -> np.ndarray:
    noise = rng.standard_normal(shape)
    noise -= np.tensordot(pi, noise, axes=1)
    largest = float(norm(noise).max())
    if largest > 0:
        noise *= scale / largest
    return noise


def make_sample_family(A, b, pi, scale: float = 0.5, rng: np.random.Generator | None = None) -> SampleFamily:
    """在 (A, b) 上叠加 π 加权均值为零、谱范数不超过 scale 的扰动。"""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    pi = np.asarray(pi, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    S = pi.size
    dA = _centered_perturbations(rng, (S,) + A.shape, pi, scale,
                                 lambda E: np.linalg.norm(E, ord=2, axis=(1, 2)))
    db = _centered_perturbations(rng, (S,) + b.shape, pi, scale,
                                 lambda E: np.linalg.norm(E, axis=1))
    family = SampleFamily(A[None] + dA, b[None] + db, pi)
    deviation = family.mean_deviation(A, b)
    if deviation > 1e-12:
        raise NumericError("样本族的 π 加权均值偏离 (A, b)", deviation=f"{deviation:.3e}")
    return family


class FamilyOracle:
    """G(z, s) = (−Â(s)ᵀy + μ_x x, b̂(s) − Â(s)x − M_y y)。可被 pickle，供进程池使用。"""

    def __init__(self, family: SampleFamily, mu_x: float, M_y: np.ndarray):
        self.A_hat = family.A_hat
        self.b_hat = family.b_hat
        self.mu_x = mu_x
        self.M_y = M_y

    def __call__(self, x, y, s):
        A_s = self.A_hat[s]
        return -A_s.T @ y + self.mu_x * x, self.b_hat[s] - A_s @ x - self.M_y @ y


class ExactGradient:
    def __init__(self, problem: BilinearQuadraticProblem):
        self.problem = problem

    def __call__(self, x, y):
        p = self.problem
        return -p.A.T @ y + p.mu_x * x, p.b - p.A @ x - p.M_y @ y


def stochastic_problem(problem: BilinearQuadraticProblem, family: SampleFamily, name: str = 'bilinear') -> StochasticSaddleProblem:
    if family.A_hat.shape[1:] != problem.A.shape:
        raise DimensionError(f"样本族矩阵形状 {family.A_hat.shape[1:]} 与 A {problem.A.shape} 不符")
    return StochasticSaddleProblem(
        domain_x=problem.domain_x,
        domain_y=problem.domain_y,
        oracle=FamilyOracle(family, problem.mu_x, problem.M_y),
        exact_gradient=ExactGradient(problem),
        name=name,
    )


@dataclass(frozen=True, eq=False)
class SimulationInstance:
    problem: BilinearQuadraticProblem
    family: SampleFamily
    seed: int


def make_simulation_problem(n: int = 10, pi=None, seed: int = 0, radius_x: float = 10.0, radius_y: float = 10.0,
                            mu_x: float = 1.0, m_y=None, noise_scale: float = 0.5) -> SimulationInstance:
    """
    min_x max_y ⟨b − Ax, y⟩ + ½‖x‖² − ½‖y‖² 的仿真实例：
    A 为标准正态矩阵再缩放到谱范数 1，b 为标准正态向量再缩放到范数 1。
    """
    if n < 1:
        raise DimensionError(f"n 必须为正: {n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    A = rng.standard_normal((n, n))
    A /= np.linalg.norm(A, ord=2)
    b = rng.standard_normal(n)
    b /= np.linalg.norm(b)
    M = np.eye(n) if m_y is None else np.asarray(m_y, dtype=float)
    problem = BilinearQuadraticProblem(A, b, mu_x, M, BallDomain(n, radius_x), BallDomain(n, radius_y))
    pi = np.full(1, 1.0) if pi is None else np.asarray(pi, dtype=float)
    family = make_sample_family(A, b, pi, noise_scale, rng)
    logging.debug(f"仿真实例: n={n}, seed={seed}, 样本族状态数 {pi.size}")
    return SimulationInstance(problem, family, seed)


def analytic_saddle(problem: BilinearQuadraticProblem, require_interior: bool = True) -> SaddlePoint:
    """
    无约束鞍点: μ_x x = Aᵀy, M_y y = b − Ax，作为一个线性方程组求解。
    require_interior=True 时要求解严格位于两个球内部。
    """
    m, n = problem.A.shape
    system = np.block([[problem.mu_x * np.eye(n), -problem.A.T],
                       [problem.A, problem.M_y]])
    rhs = np.concatenate([np.zeros(n), problem.b])
    try:
        solution = linalg.solve(system, rhs)
    except linalg.LinAlgError as e:
        raise AssumptionViolation(f"鞍点方程组奇异: {e}") from e
    z = SaddlePoint(solution[:n], solution[n:])
    if require_interior:
        inside_x = np.linalg.norm(z.x - problem.domain_x.center) < problem.domain_x.radius
        inside_y = np.linalg.norm(z.y - problem.domain_y.center) < problem.domain_y.radius
        if not (inside_x and inside_y):
            raise AssumptionViolation("无约束鞍点不在投影域内部，请增大半径")
    return z


def lipschitz_constants(problem: BilinearQuadraticProblem, family: SampleFamily | None = None) -> tuple[float, float]:
    """
    (L₁, L₂)：L₁ 界定 ‖G(z, s)‖，L₂ 界定 G 关于 z 的 Lipschitz 常数，
    都按 √2·√(L_x² + L_y²) 的形式合并两个分块。
    """
    if family is None:
        a_max, b_max = float(np.linalg.norm(problem.A, ord=2)), float(np.linalg.norm(problem.b))
    else:
        a_max, b_max = family.max_norms()
    m_norm = float(np.linalg.norm(problem.M_y, ord=2))
    reach_x = problem.domain_x.radius + float(np.linalg.norm(problem.domain_x.center))
    reach_y = problem.domain_y.radius + float(np.linalg.norm(problem.domain_y.center))
    lx = a_max * reach_y + problem.mu_x * reach_x
    ly = b_max + a_max * reach_x + m_norm * reach_y
    L1 = np.sqrt(2.0) * np.hypot(lx, ly)
    L2 = np.sqrt(2.0) * np.hypot(a_max + problem.mu_x, a_max + m_norm)
    return float(L1), float(L2)


if __name__ == "__main__":
    logging.basicConfig(level=logging.DEBUG, format='%(asctime)s - %(levelname)s - %(message)s')
    instance = make_simulation_problem(n=10, pi=np.full(5, 0.2), seed=0)
    saddle = analytic_saddle(instance.problem)
    print("鞍点处间隙:", primal_dual_gap(instance.problem, saddle).gap)
    print("原点处间隙:", primal_dual_gap(instance.problem, SaddlePoint(np.zeros(10), np.zeros(10))).gap)
    print("(L₁, L₂) =", lipschitz_constants(instance.problem, instance.family))
