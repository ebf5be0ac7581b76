import numpy as np
import pytest

from utils import AssumptionViolation, DimensionError
from saddle_core import BallDomain, SaddlePoint
from gap_metrics import (BilinearQuadraticProblem, phi, inner_max_y, inner_min_x, primal_dual_gap, brute_force_gap,
                         grid_step, ball_grid, make_sample_family, make_simulation_problem, analytic_saddle,
                         lipschitz_constants, stochastic_problem)


def _random_instance(rng, general_m: bool):
    A = rng.standard_normal((2, 2))
    b = rng.standard_normal(2)
    if general_m:
        B = rng.standard_normal((2, 2))
        M = B @ B.T
    else:
        M = np.eye(2)
    radius_x, radius_y = rng.uniform(0.5, 2.0, size=2)
    return BilinearQuadraticProblem(A, b, rng.uniform(0.0, 1.0), M, BallDomain(2, radius_x), BallDomain(2, radius_y))


def _random_point_in(rng, domain: BallDomain) -> np.ndarray:
    direction = rng.standard_normal(domain.dimension)
    return domain.center + rng.uniform(0, 1) * domain.radius * direction / np.linalg.norm(direction)


def test_closed_form_gap_agrees_with_grid_search():
    rng = np.random.default_rng(2024)
    resolution = 201
    for trial in range(100):
        problem = _random_instance(rng, general_m=trial % 2 == 1)
        z = SaddlePoint(_random_point_in(rng, problem.domain_x), _random_point_in(rng, problem.domain_y))
        exact = primal_dual_gap(problem, z).gap
        approx = brute_force_gap(problem, z, resolution)
        L1, _ = lipschitz_constants(problem)
        h = max(grid_step(problem.domain_x, resolution), grid_step(problem.domain_y, resolution))
        # 网格点都在域内，所以网格值不会超过精确值
        assert approx <= exact + 1e-9
        assert exact - approx <= 2 * L1 * h


def test_grid_search_refines_monotonically():
    rng = np.random.default_rng(77)
    # 5 → 9 → 17 → 33：每次步长减半，粗网格是细网格的子集
    resolutions = (5, 9, 17, 33)
    for trial in range(20):
        problem = _random_instance(rng, general_m=trial % 2 == 1)
        z = SaddlePoint(_random_point_in(rng, problem.domain_x), _random_point_in(rng, problem.domain_y))
        exact = primal_dual_gap(problem, z).gap
        L1, _ = lipschitz_constants(problem)
        errors = []
        for resolution in resolutions:
            h = max(grid_step(problem.domain_x, resolution), grid_step(problem.domain_y, resolution))
            error = exact - brute_force_gap(problem, z, resolution)
            assert -1e-9 <= error <= 2 * L1 * h
            errors.append(error)
        assert all(fine <= coarse + 1e-9 for coarse, fine in zip(errors, errors[1:]))


def test_inner_max_beats_random_feasible_points():
    rng = np.random.default_rng(5)
    for _ in range(20):
        problem = _random_instance(rng, general_m=True)
        x = _random_point_in(rng, problem.domain_x)
        y_star, best = inner_max_y(problem, x)
        assert problem.domain_y.contains(y_star)
        ys = np.array([_random_point_in(rng, problem.domain_y) for _ in range(200)])
        assert np.all(phi(problem, x, ys) <= best + 1e-9)

        y = _random_point_in(rng, problem.domain_y)
        x_star, worst = inner_min_x(problem, y)
        xs = np.array([_random_point_in(rng, problem.domain_x) for _ in range(200)])
        assert np.all(phi(problem, xs, y) >= worst - 1e-9)


def test_gap_is_zero_at_the_analytic_saddle(simulation_instance):
    problem = simulation_instance.problem
    saddle = analytic_saddle(problem)
    assert primal_dual_gap(problem, saddle).gap <= 1e-9
    assert primal_dual_gap(problem, SaddlePoint(np.zeros(10), np.zeros(10))).gap > 1e-3


def test_gap_is_nonnegative_anywhere(simulation_instance):
    problem = simulation_instance.problem
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = SaddlePoint(_random_point_in(rng, problem.domain_x), _random_point_in(rng, problem.domain_y))
        assert primal_dual_gap(problem, z).gap >= 0.0


def test_general_m_solver_matches_identity_shortcut():
    rng = np.random.default_rng(9)
    A, b = rng.standard_normal((3, 3)), rng.standard_normal(3)
    domain = BallDomain(3, 0.3)
    identity = BilinearQuadraticProblem(A, b, 1.0, np.eye(3), domain, domain)
    # 数值上不完全等于单位阵，因此走特征分解 + 求根的路径
    nearly = BilinearQuadraticProblem(A, b, 1.0, np.eye(3) * (1 + 1e-15), domain, domain)
    x = np.array([0.1, -0.2, 0.05])
    y_identity, _ = inner_max_y(identity, x)
    y_general, _ = inner_max_y(nearly, x)
    assert np.allclose(y_identity, y_general, atol=1e-8)


def test_zero_quadratic_term_gives_linear_maximiser():
    A = np.eye(2)
    b = np.array([3.0, 4.0])
    problem = BilinearQuadraticProblem(A, b, 0.0, np.zeros((2, 2)), BallDomain(2, 1.0), BallDomain(2, 2.0))
    y, value = inner_max_y(problem, np.zeros(2))
    assert np.allclose(y, [1.2, 1.6])
    assert value == pytest.approx(10.0)


def test_problem_validation():
    domain = BallDomain(2, 1.0)
    with pytest.raises(AssumptionViolation):
        BilinearQuadraticProblem(np.eye(2), np.ones(2), 1.0, np.array([[1.0, 0.5], [0.0, 1.0]]), domain, domain)
    with pytest.raises(AssumptionViolation):
        BilinearQuadraticProblem(np.eye(2), np.ones(2), 1.0, -np.eye(2), domain, domain)
    with pytest.raises(AssumptionViolation):
        BilinearQuadraticProblem(np.eye(2), np.ones(2), -1.0, np.eye(2), domain, domain)
    with pytest.raises(DimensionError):
        BilinearQuadraticProblem(np.eye(2), np.ones(3), 1.0, np.eye(2), domain, domain)
    problem = BilinearQuadraticProblem(np.eye(2), np.ones(2), 1.0, np.eye(2), domain, domain)
    with pytest.raises(DimensionError):
        primal_dual_gap(problem, SaddlePoint(np.zeros(3), np.zeros(2)))


def test_ball_grid_stays_inside_and_rejects_high_dimensions():
    domain = BallDomain(2, 1.0)
    points = ball_grid(domain, 21)
    assert np.all(np.linalg.norm(points, axis=1) <= 1.0 + 1e-12)
    with pytest.raises(DimensionError):
        ball_grid(BallDomain(4, 1.0), 5)


def test_sample_family_is_centered_and_bounded():
    rng = np.random.default_rng(0)
    A, b = rng.standard_normal((4, 4)), rng.standard_normal(4)
    pi = rng.dirichlet(np.ones(30))
    family = make_sample_family(A, b, pi, 0.5, rng)
    assert family.mean_deviation(A, b) <= 1e-12
    spectral = np.linalg.norm(family.A_hat - A[None], ord=2, axis=(1, 2))
    assert spectral.max() <= 0.5 + 1e-12
    assert np.linalg.norm(family.b_hat - b[None], axis=1).max() <= 0.5 + 1e-12


def test_simulation_instance_is_normalised_and_reproducible():
    first = make_simulation_problem(n=10, pi=np.full(7, 1 / 7), seed=3)
    second = make_simulation_problem(n=10, pi=np.full(7, 1 / 7), seed=3)
    assert np.linalg.norm(first.problem.A, ord=2) == pytest.approx(1.0)
    assert np.linalg.norm(first.problem.b) == pytest.approx(1.0)
    assert np.array_equal(first.family.A_hat, second.family.A_hat)


def test_oracle_norms_are_bounded_by_L1(simulation_instance):
    problem, family = simulation_instance.problem, simulation_instance.family
    oracle = stochastic_problem(problem, family).oracle
    L1, _ = lipschitz_constants(problem, family)
    rng = np.random.default_rng(1)
    for s in range(family.n_states):
        x, y = _random_point_in(rng, problem.domain_x), _random_point_in(rng, problem.domain_y)
        g_x, g_y = oracle(x, y, s)
        assert np.hypot(np.linalg.norm(g_x), np.linalg.norm(g_y)) <= L1


def test_saddle_outside_small_domain_is_reported(simulation_instance):
    p = simulation_instance.problem
    tiny = BilinearQuadraticProblem(p.A, p.b, p.mu_x, p.M_y, BallDomain(10, 1e-3), BallDomain(10, 1e-3))
    with pytest.raises(AssumptionViolation):
        analytic_saddle(tiny)
