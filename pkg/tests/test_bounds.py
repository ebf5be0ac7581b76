import math

import numpy as np
import pytest

from utils import ConfigError, AssumptionViolation
from saddle_core import StepSchedule
from bounds import (ETA_GRID, BoundInputs, theorem1_terms, theorem1_bound, lemma1_bound, minimize_over_eta,
                    GtdConstants, proposition1_constants, rate_orders, theorem2_order, value_error_from_gap)


def _inputs(T=1000, tau=7, eta=0.01, label="inv_sqrt:0.015", **kw):
    base = dict(D=1.0, L1=1.0, L2=1.0, schedule=StepSchedule.parse(label), T=T, tau=tau, eta=eta)
    base.update(kw)
    return BoundInputs(**base)


def _constants(**kw):
    base = dict(gamma=0.5, rho_max=1.0, L=1.0, d=2, R_max=1.0, lambda_M=1.0, lambda_C=0.5,
                nu_C=0.5, nu_AMA=0.1, pi_max=0.5)
    base.update(kw)
    return GtdConstants(**base)


def test_eta_grid_is_dyadic():
    assert len(ETA_GRID) == 20
    assert ETA_GRID[0] == 0.5 and ETA_GRID[-1] == 2.0 ** -20


def test_iid_bound_reduces_to_first_two_terms():
    inputs = _inputs(T=100, tau=0, eta=0.0, label="constant:0.01", D=2.0, L1=3.0)
    # Σα = 1, Σα² = 0.01
    assert lemma1_bound(inputs) == pytest.approx(4.0 + 2.5 * 9.0 * 0.01)
    assert theorem1_bound(inputs) == pytest.approx(lemma1_bound(inputs))


def test_terms_use_schedule_sums():
    inputs = _inputs()
    terms = theorem1_terms(inputs)
    sum_a, sum_a2 = inputs.schedule.sums(inputs.T)
    assert terms.weight_sum == pytest.approx(sum_a)
    assert terms.b == pytest.approx(2.5 * sum_a2)
    assert terms.c == pytest.approx((6.0 + 2.0) * 7 * sum_a2)
    assert terms.f == pytest.approx(2.0 * 0.01 * sum_a)
    assert terms.h == pytest.approx(6.0 * 0.015 * 7)
    expected_dev = 8.0 * math.sqrt(2.0 * 7 * math.log(7 / 0.05) * (sum_a2 + 7 * 0.015))
    assert terms.deviation == pytest.approx(expected_dev)
    assert set(terms.as_dict()) == {'A', 'B', 'C', 'F', 'H', 'deviation', 'sum_alpha'}


def test_high_probability_bound_dominates_expectation_bound():
    for label in ("constant:0.001", "inv_sqrt:0.015", "inv:0.03"):
        inputs = _inputs(label=label)
        assert theorem1_bound(inputs) >= lemma1_bound(inputs)


@pytest.mark.parametrize("bound", [lemma1_bound, theorem1_bound])
def test_inv_sqrt_bound_decreases_with_horizon(bound):
    values = [bound(_inputs(T=10 ** k)) for k in range(2, 8)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_slower_mixing_gives_larger_bound():
    assert theorem1_bound(_inputs(tau=3)) < theorem1_bound(_inputs(tau=7))
    assert lemma1_bound(_inputs(tau=3)) < lemma1_bound(_inputs(tau=7))


def test_inv_schedule_bound_decays_like_inverse_log():
    c, tau = 0.03, 7
    # Σ1/t² 已收敛，分子趋于常数；Σα = c(ln T + γ_E) + o(1)
    numerator = 1.0 + (2.5 + 8.0 * tau) * c * c * math.pi ** 2 / 6 + 6.0 * c * tau
    scaled = []
    for T in (10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6):
        value = lemma1_bound(_inputs(T=T, tau=tau, eta=0.0, label=f"inv:{c}"))
        assert value == pytest.approx(numerator / (c * (math.log(T) + np.euler_gamma)), rel=1e-3)
        scaled.append(value * math.log(T))
    assert max(scaled) / min(scaled) <= 1.1


@pytest.mark.parametrize("bound", [lemma1_bound, theorem1_bound])
@pytest.mark.parametrize("label", ["inv:0.03", "inv_sqrt:0.015"])
def test_decaying_schedules_drive_the_bound_down(bound, label):
    values = [bound(_inputs(T=10 ** k, eta=0.0, label=label)) for k in range(2, 8)]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] < 0.5 * values[0]


@pytest.mark.parametrize("bound", [lemma1_bound, theorem1_bound])
@pytest.mark.parametrize("name, small, large", [
    ("eta", 0.01, 0.1),
    ("D", 1.0, 2.0),
    ("L1", 1.0, 2.0),
    ("L2", 1.0, 2.0),
])
def test_bound_grows_with_each_constant(bound, name, small, large):
    assert bound(_inputs(**{name: small})) < bound(_inputs(**{name: large}))


def test_high_probability_bound_is_nonincreasing_in_delta():
    values = [theorem1_bound(_inputs(delta=d)) for d in (0.001, 0.01, 0.05, 0.1, 0.5, 0.9)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert len({lemma1_bound(_inputs(delta=d)) for d in (0.01, 0.5)}) == 1


def test_minimize_over_eta_skips_long_mixing_times():
    table = {0.5: 1, 0.1: 5, 0.01: 60}
    make = lambda eta, tau: _inputs(T=100, tau=tau, eta=eta)
    choice = minimize_over_eta(make, table, 100)
    assert choice.eta in (0.5, 0.1)
    assert choice.value == pytest.approx(min(lemma1_bound(make(0.5, 1)), lemma1_bound(make(0.1, 5))))
    assert minimize_over_eta(make, {0.1: 10}, 10) is None


@pytest.mark.parametrize("kwargs, error", [
    (dict(D=0.0), ConfigError),
    (dict(delta=1.0), ConfigError),
    (dict(eta=-0.1), ConfigError),
    (dict(T=0, tau=0), ConfigError),
    (dict(T=100, tau=60), AssumptionViolation),
])
def test_bound_input_validation(kwargs, error):
    with pytest.raises(error):
        _inputs(**kwargs)


# --- GTD 常数与阶 ---
def test_proposition_constants_for_small_example():
    L1, L2 = proposition1_constants(_constants(), D=1.0)
    assert L1 == pytest.approx(8 * math.sqrt(2))
    assert L2 == pytest.approx(7 * math.sqrt(2))


def test_gtd_constants_validation():
    with pytest.raises(ConfigError):
        _constants(gamma=1.0)
    with pytest.raises(ConfigError):
        _constants(nu_AMA=0.0)


def test_rate_orders_for_constant_schedule():
    o1, o2 = rate_orders(StepSchedule.parse("constant:0.1"), 100)
    assert o1 == pytest.approx(0.1)
    assert o2 == pytest.approx(0.1)


@pytest.mark.parametrize("mode", ["on", "off"])
def test_theorem2_dominant_term(mode):
    big = theorem2_order(_constants(), StepSchedule.parse("constant:1.0"), 10, tau=3, mode=mode, kind='highprob')
    small = theorem2_order(_constants(), StepSchedule.parse("constant:0.001"), 1000, tau=3, mode=mode,
                           kind='highprob')
    assert big.dominant == 'o1' and small.dominant == 'o2'
    assert big.value > 0 and small.value > 0
    expectation = theorem2_order(_constants(), StepSchedule.parse("inv_sqrt:0.015"), 10_000, tau=0, mode=mode)
    later = theorem2_order(_constants(), StepSchedule.parse("inv_sqrt:0.015"), 1_000_000, tau=0, mode=mode)
    assert later.value < expectation.value


def test_inv_sqrt_o1_follows_log_over_root_rate():
    schedule = StepSchedule.parse("inv_sqrt:0.015")
    ratio = rate_orders(schedule, 10 ** 4)[0] / rate_orders(schedule, 10 ** 6)[0]
    expected = (math.log(1e4) / 1e2) / (math.log(1e6) / 1e3)
    assert ratio == pytest.approx(expected, rel=0.15)
    order = theorem2_order(_constants(), schedule, 10 ** 4, tau=3)
    assert order.o1 == pytest.approx(rate_orders(schedule, 10 ** 4)[0])


def test_theorem2_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        theorem2_order(_constants(), StepSchedule.parse("constant:0.1"), 10, tau=0, mode='sideways')


def test_value_error_grows_with_gap():
    c = _constants()
    for mode in ("on", "off"):
        assert value_error_from_gap(c, 0.0, mode) == 0.0
        assert value_error_from_gap(c, 0.01, mode) < value_error_from_gap(c, 0.04, mode)
    assert value_error_from_gap(c, -1.0, "on") == 0.0
    assert value_error_from_gap(c, 0.0, "off", representation_error=0.1) > 0.0
