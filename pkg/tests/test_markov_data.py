import numpy as np
import pytest
from scipy import stats
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from utils import ConfigError, EXIT_CONFIG
from markov_data import (FiniteChain, ChainValidationError, DistributionError, InvalidProposalError,
                         UnreachableSpectralTarget, MixingTooSlowError, validate_distribution, stationary_distribution,
                         uniform_proposal, random_walk_proposal, mixed_proposal, metropolis_hastings,
                         second_eigenvalue_modulus, tune_spectral_gap, mixing_time, MarkovPathStream,
                         IidStationaryStream, ReplayStream, ArrayStream, make_stream, empirical_occupancy,
                         occupancy_deviation, replay_settling_time, save_chain, load_chain)

ETAS = (0.1, 0.05, 0.01)


def _two_state(p, q):
    P = np.array([[1 - p, p], [q, 1 - q]])
    return FiniteChain(P, np.array([q, p]) / (p + q))


def _closed_form_tau(p, q, eta):
    rate, scale = abs(1 - p - q), 2 * max(q, p) / (p + q)
    lag = 0
    while scale * rate ** lag > eta:
        lag += 1
    return lag


# --- 分布与链的校验 ---
def test_negative_entry_is_reported_by_index():
    with pytest.raises(DistributionError, match="第 1 个"):
        validate_distribution([0.5, -0.25, 0.75])
    with pytest.raises(DistributionError, match="第 2 个"):
        validate_distribution([0.5, 0.5, 0.0], strictly_positive=True)
    assert DistributionError("x").exit_code == EXIT_CONFIG


def test_chain_rejects_bad_rows_and_wrong_stationary_vector():
    with pytest.raises(ChainValidationError):
        FiniteChain(np.array([[0.5, 0.6], [0.5, 0.5]]), np.array([0.5, 0.5]))
    with pytest.raises(ChainValidationError):
        FiniteChain(np.array([[0.9, 0.1], [0.5, 0.5]]), np.array([0.5, 0.5]))


def test_stationary_distribution_of_two_state_chain():
    chain = FiniteChain.from_matrix(np.array([[0.9, 0.1], [0.3, 0.7]]))
    assert np.allclose(chain.pi, [0.75, 0.25], atol=1e-12)
    assert np.allclose(stationary_distribution(chain.P), chain.pi)


def test_proposals_are_symmetric_stochastic_matrices():
    for Q in (uniform_proposal(7), random_walk_proposal(7, 2), mixed_proposal(7, 1, 0.4)):
        assert np.allclose(Q.sum(axis=1), 1.0)
        assert np.allclose(Q, Q.T)


def test_asymmetric_proposal_support_is_rejected():
    Q = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    with pytest.raises(InvalidProposalError):
        metropolis_hastings(np.full(3, 1 / 3), Q)


@settings(max_examples=30)
@given(weights=arrays(np.float64, st.integers(2, 8), elements=st.floats(0.1, 10.0)),
       laziness=st.floats(0.0, 0.9), k=st.integers(1, 3))
def test_metropolis_hastings_keeps_detailed_balance(weights, laziness, k):
    pi = weights / weights.sum()
    chain = metropolis_hastings(pi, random_walk_proposal(pi.size, k), laziness)
    assert chain.detailed_balance_residual() <= 1e-12
    assert chain.stationarity_residual() <= 1e-10


# --- 谱与调节 ---
def test_power_method_agrees_with_dense_eigenvalues():
    n = 40
    weights = 1.0 / np.arange(1, n + 1)
    chain = metropolis_hastings(weights / weights.sum(), mixed_proposal(n, 2, 0.7), 0.1)
    dense = second_eigenvalue_modulus(chain, method='dense')
    power = second_eigenvalue_modulus(chain, method='power')
    assert power == pytest.approx(dense, abs=1e-8)


def test_lazy_uniform_chain_has_second_eigenvalue_equal_to_laziness():
    chain = metropolis_hastings(np.full(20, 0.05), uniform_proposal(20), 0.4)
    assert second_eigenvalue_modulus(chain, method='dense') == pytest.approx(0.4, abs=1e-12)


@pytest.mark.parametrize("target", [0.634, 0.31])
def test_tuned_chain_hits_target(target):
    tuned = tune_spectral_gap(np.full(101, 1 / 101), target)
    assert abs(tuned.second_eigenvalue - target) <= 0.02
    assert tuned.chain.stationarity_residual() <= 1e-10
    assert tuned.chain.detailed_balance_residual() <= 1e-12


def test_faster_chain_mixes_sooner():
    pi = np.full(101, 1 / 101)
    slow = mixing_time(tune_spectral_gap(pi, 0.634).chain, ETAS)
    fast = mixing_time(tune_spectral_gap(pi, 0.31).chain, ETAS)
    for eta in ETAS:
        assert fast.tau_of(eta) < slow.tau_of(eta)


@pytest.mark.slow
def test_full_size_chains_match_targets_and_mixing_order():
    pi = np.full(1001, 1 / 1001)
    taus = {}
    for target in (0.634, 0.31):
        tuned = tune_spectral_gap(pi, target)
        assert abs(tuned.second_eigenvalue - target) <= 0.02
        assert tuned.chain.stationarity_residual() <= 1e-10
        assert tuned.chain.detailed_balance_residual() <= 1e-12
        taus[target] = mixing_time(tuned.chain, ETAS).tau
    assert all(taus[0.31][eta] < taus[0.634][eta] for eta in ETAS)


def test_unreachable_target_reports_range():
    with pytest.raises(UnreachableSpectralTarget) as info:
        tune_spectral_gap(np.full(50, 0.02), 0.31, proposal=random_walk_proposal(50, 1))
    assert info.value.reachable[0] > 0.9
    assert isinstance(info.value, ConfigError)


def test_mixing_time_matches_two_state_closed_form():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p, q = rng.uniform(0.05, 0.95, size=2)
        report = mixing_time(_two_state(p, q), ETAS, method='dense')
        for eta in ETAS:
            assert report.tau_of(eta) == _closed_form_tau(p, q, eta)


def test_tv_curve_is_nonincreasing_and_starts_at_lag_zero():
    report = mixing_time(tune_spectral_gap(np.full(11, 1 / 11), 0.5).chain, ETAS)
    distances = [d for _, d in report.tv_curve]
    assert report.tv_curve[0][0] == 0
    assert all(b <= a + 1e-12 for a, b in zip(distances, distances[1:]))


def test_periodic_chain_never_mixes():
    chain = FiniteChain(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.5, 0.5]))
    with pytest.raises(MixingTooSlowError):
        mixing_time(chain, ETAS, method='dense')


# --- 样本流 ---
def test_markov_path_starts_at_s0_and_follows_support():
    chain = metropolis_hastings(np.full(6, 1 / 6), random_walk_proposal(6, 1), 0.2)
    samples = MarkovPathStream(chain, seed=4, s0=3).take(2000)
    assert samples[0] == 3
    steps = np.abs(np.diff(samples))
    assert steps.max() <= 1


def test_streams_are_reproducible_per_seed():
    chain = metropolis_hastings(np.full(6, 1 / 6), uniform_proposal(6), 0.5)
    for mode in ('markov', 'iid'):
        first = make_stream(mode, chain, seed=12, replay=True).take(500)
        second = make_stream(mode, chain, seed=12, replay=True).take(500)
        other = make_stream(mode, chain, seed=13, replay=True).take(500)
        assert first == second
        assert first != other


def test_iid_stream_frequencies_match_pi():
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    chain = FiniteChain(np.tile(pi, (4, 1)), pi)
    samples = IidStationaryStream(chain, seed=0).take(100_000)
    assert np.abs(empirical_occupancy(samples, 4) - pi).max() < 0.01


def test_bounded_replay_only_returns_recent_samples():
    stream = ReplayStream(ArrayStream(range(100)), seed=0, capacity=3)
    for t in range(100):
        sample = stream.next_sample()
        assert t - 2 <= sample <= t
        assert len(stream) == min(t + 1, 3)


def test_unbounded_replay_returns_past_samples():
    stream = ReplayStream(ArrayStream(range(50)), seed=1)
    outputs = stream.take(50)
    assert all(0 <= s <= t for t, s in enumerate(outputs))
    assert len(stream) == 50


def test_capacity_one_replay_reproduces_the_base_stream():
    chain = metropolis_hastings(np.full(6, 1 / 6), uniform_proposal(6), 0.5)
    for mode in ('markov', 'iid'):
        base = make_stream(mode, chain, seed=8).take(1000)
        assert make_stream(mode, chain, seed=8, replay=True, replay_capacity=1).take(1000) == base


def test_replay_warmup_passes_samples_through():
    stream = ReplayStream(ArrayStream(range(60)), seed=3, warmup=10)
    outputs = stream.take(60)
    assert outputs[:10] == list(range(10))
    assert all(0 <= s <= t for t, s in enumerate(outputs))
    assert outputs[10:] != list(range(10, 60))
    with pytest.raises(ValueError):
        ReplayStream(ArrayStream([]), warmup=-1)


def test_replay_warmup_is_threaded_through_make_stream():
    chain = metropolis_hastings(np.full(6, 1 / 6), uniform_proposal(6), 0.5)
    base = make_stream('markov', chain, seed=5).take(200)
    warm = make_stream('markov', chain, seed=5, replay=True, replay_warmup=200).take(200)
    assert warm == base


def test_permutation_chain_emits_its_cycle():
    order = [0, 3, 1, 4, 2]
    P = np.zeros((5, 5))
    for a, b in zip(order, order[1:] + order[:1]):
        P[a, b] = 1.0
    chain = FiniteChain(P, np.full(5, 0.2))
    samples = MarkovPathStream(chain, seed=0, s0=1).take(23)
    start = order.index(1)
    assert samples == [order[(start + k) % 5] for k in range(23)]
    assert make_stream('markov', chain, seed=9).take(10)[5:] == make_stream('markov', chain, seed=9).take(5)


@pytest.mark.parametrize("seed", range(20))
def test_iid_stream_passes_chi_square_goodness_of_fit(seed):
    pi = np.arange(1, 11) / 55.0
    chain = FiniteChain(np.tile(pi, (10, 1)), pi)
    stream = IidStationaryStream(chain, seed=seed)
    # 三次机会：连续三段都在 1% 水平上被拒绝才算失败
    p_values = []
    for _ in range(3):
        counts = np.bincount(stream.take(10_000), minlength=10)
        p_values.append(stats.chisquare(counts, pi * 10_000).pvalue)
        if p_values[-1] >= 0.01:
            break
    assert max(p_values) >= 0.01, p_values


def test_replay_occupancy_settles_near_pi():
    pi = np.full(10, 0.1)
    chain = tune_spectral_gap(pi, 0.634).chain
    samples = make_stream('markov', chain, seed=2, replay=True).take(20_000)
    assert replay_settling_time(samples, pi, 0.05) is not None
    assert occupancy_deviation(samples, pi, times=[20_000])[0][1] < 0.05


def test_unknown_stream_mode_is_config_error():
    chain = FiniteChain(np.eye(1), np.ones(1))
    with pytest.raises(ConfigError):
        make_stream('shuffle', chain)


def test_chain_file_round_trip(tmp_path):
    chain = tune_spectral_gap(np.array([0.2, 0.3, 0.5]), 0.5).chain
    path = tmp_path / 'chain.txt'
    save_chain(chain, path)
    loaded = load_chain(path)
    assert np.array_equal(loaded.P, chain.P)
    assert np.array_equal(loaded.pi, chain.pi)
    assert path.read_text(encoding='utf-8').splitlines()[0] == '3'


def test_malformed_chain_file_is_config_error(tmp_path):
    path = tmp_path / 'broken.txt'
    path.write_text("3\n0.5 0.5\n", encoding='utf-8')
    with pytest.raises(ConfigError):
        load_chain(path)


@pytest.mark.slow
def test_replay_over_markov_path_occupancy_is_close_to_pi():
    pi = np.full(10, 0.1)
    chain = tune_spectral_gap(pi, 0.634).chain
    distances = []
    for seed in range(20):
        samples = make_stream('markov', chain, seed=seed, replay=True, replay_capacity=10_000).take(100_000)
        distances.append(float(np.abs(empirical_occupancy(samples, 10) - pi).sum()))
    assert np.mean(distances) <= 0.05
    assert max(distances) <= 0.1
