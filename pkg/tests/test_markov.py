import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from packetized_etc import (
    GaussianVector,
    QmcOptions,
    Rectangle,
    TriggeredChain,
    TriggerParams,
    crossing_probs_scalar,
    crossing_probs_vector,
    mvn_rectangle_prob,
    rate_scalar_lossless,
    rate_scalar_lossy,
    rate_vector_lossless,
    rate_vector_lossy,
    stationary_distribution_scalar,
)
from packetized_etc.markov import (
    scalar_transition_matrix,
    stationary_from_matrix,
    vector_states,
    vector_transition_matrix,
)
from packetized_etc.model import LinearSystem, validate_deadbeat_gain

from oracles import explicit_chain_rates, finite_horizon_success, sigma_star

FAST = QmcOptions(max_points=2**12)
probs_st = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8)


def test_trigger_params_validation():
    assert TriggerParams(1, 5).epsilon == 1.0
    for bad in [(-1.0, 5, 0.0), (1.0, -1, 0.0), (1.0, 2.5, 0.0), (1.0, 5, 1.0), (1.0, 5, -0.1),
                (float("nan"), 5, 0.0)]:
        with pytest.raises(ValueError):
            TriggerParams(*bad)


def test_crossing_probs_limits():
    np.testing.assert_array_equal(crossing_probs_scalar(1.6, 1.44, TriggerParams(0.0, 5)), np.ones(5))
    np.testing.assert_allclose(crossing_probs_scalar(1.6, 1.44, TriggerParams(1e3, 5)), 0.0, atol=1e-12)
    assert crossing_probs_scalar(1.6, 1.44, TriggerParams(1.0, 0)).shape == (0,)
    p = crossing_probs_scalar(1.6, 1.44, TriggerParams(2.0, 5))
    assert abs(p[0] - 0.0955807045456294157) <= 1e-9


def test_vector_first_crossing(second_order_plant):
    sys_, ctrl, _ = second_order_plant
    p = crossing_probs_vector(sys_, ctrl, TriggerParams(1.0, 4))
    box = mvn_rectangle_prob(GaussianVector(sigma_star(sys_.A, sys_.Sigma_w, 2)), Rectangle.symmetric(1.0, 2))
    assert abs(p[0] - (1 - box.value)) <= 1e-6
    np.testing.assert_array_equal(crossing_probs_vector(sys_, ctrl, TriggerParams(0.0, 4)), np.ones(4))


def test_vector_chain_degenerates_to_scalar():
    sys_ = LinearSystem.scalar(1.6, 1.0, 1.44, 1.0)
    ctrl = validate_deadbeat_gain(sys_, [[-1.6]], 1)
    for eps in (0.5, 2.0):
        trig = TriggerParams(eps, 5)
        np.testing.assert_allclose(crossing_probs_vector(sys_, ctrl, trig),
                                   crossing_probs_scalar(1.6, 1.44, trig), rtol=1e-12, atol=1e-15)


def test_rate_examples():
    assert rate_scalar_lossless(np.ones(5), 5) == 1.0
    assert rate_scalar_lossless(np.zeros(5), 5) == pytest.approx(1 / 6)
    assert rate_vector_lossless(np.ones(4), 4, 2) == 0.5
    assert rate_vector_lossless(np.zeros(4), 4, 2) == pytest.approx(1 / 6)
    s, a, exact = rate_scalar_lossy(np.ones(5), 5, 0.2)
    assert s == pytest.approx(0.8) and a == 1.0 and exact == pytest.approx(1.0)
    s, a, exact = rate_vector_lossy(np.ones(4), 4, 2, 0.2)
    # success / (1 + 1 + 0.25) per cycle
    assert s == pytest.approx(1 / 2.25) and a == 0.5


def test_triggered_chain_container():
    chain = TriggeredChain([0.5, 0.5], nu=2)
    assert chain.T == 2
    assert chain.success_rate() == pytest.approx(rate_vector_lossless([0.5, 0.5], 2, 2))
    with pytest.raises(ValueError):
        TriggeredChain([1.5])


def test_rate_shape_checked():
    with pytest.raises(ValueError):
        rate_scalar_lossless([0.5, 0.5], 3)
    with pytest.raises(ValueError):
        rate_vector_lossless([0.5], 1, 0)


@settings(max_examples=80, deadline=None)
@given(probs=probs_st, nu=st.integers(1, 3), p_loss=st.floats(0.0, 0.8))
def test_rates_match_explicit_chain(probs, nu, p_loss):
    probs = np.array(probs)
    T = len(probs)
    success, attempt = explicit_chain_rates(probs, nu, p_loss, depth=300)
    s, _, exact = rate_vector_lossy(probs, T, nu, p_loss)
    assert abs(s - success) <= 1e-10
    assert abs(exact - attempt) <= 1e-10
    if nu == 1:
        s1, _, exact1 = rate_scalar_lossy(probs, T, p_loss)
        assert abs(s1 - s) <= 1e-12 and abs(exact1 - exact) <= 1e-12


@settings(max_examples=80, deadline=None)
@given(probs=probs_st)
def test_scalar_stationary_law(probs):
    probs = np.array(probs)
    T = len(probs)
    M = scalar_transition_matrix(probs, T)
    np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-15)
    pi = stationary_distribution_scalar(probs, T)
    np.testing.assert_allclose(pi @ M, pi, atol=1e-12)
    assert abs(pi[0] - stationary_from_matrix(M)[0]) <= 1e-12


@settings(max_examples=80, deadline=None)
@given(probs=probs_st, nu=st.integers(1, 4))
def test_vector_stationary_law(probs, nu):
    probs = np.array(probs)
    T = len(probs)
    M = vector_transition_matrix(probs, T, nu)
    np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-15)
    pi = stationary_from_matrix(M)
    tx = vector_states(T, nu).index((0, nu - 1))
    assert abs(pi[tx] - rate_vector_lossless(probs, T, nu)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(probs=probs_st, nu=st.integers(1, 3), p_loss=st.floats(0.0, 0.9))
def test_rate_bounds(probs, nu, p_loss):
    probs = np.array(probs)
    T = len(probs)
    s, a, exact = rate_vector_lossy(probs, T, nu, p_loss)
    assert 1.0 / (nu + T) - 1e-12 <= a <= 1.0 / nu + 1e-12
    assert 0.0 < s <= exact <= 1.0 + 1e-12
    assert s <= a + 1e-12


def _monotone(values, tol):
    return all(b <= a + tol for a, b in zip(values, values[1:]))


def test_rates_decrease_with_threshold(second_order_plant):
    sys_, ctrl, _ = second_order_plant
    grid = [0.0, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0]
    for p_loss in (0.0, 0.2):
        sc = [rate_scalar_lossy(crossing_probs_scalar(1.6, 1.44, TriggerParams(e, 5), FAST), 5, p_loss)[0]
              for e in grid]
        ve = [rate_vector_lossy(crossing_probs_vector(sys_, ctrl, TriggerParams(e, 4), FAST), 4, 2, p_loss)[0]
              for e in grid]
        assert _monotone(sc, 1e-6) and _monotone(ve, 1e-6)
    assert sc[0] == pytest.approx(0.8) and ve[0] == pytest.approx(1 / 2.25)


def test_finite_horizon_expectation_converges():
    probs = np.array([0.1, 0.3, 0.2, 0.5])
    stationary = rate_vector_lossy(probs, 4, 2, 0.2)[0]
    gaps = [(finite_horizon_success(probs, 2, 0.2, H) - stationary) * H for H in (200, 400, 800)]
    # the gap times H settles to a constant
    assert abs(gaps[2] - gaps[1]) <= 1e-6 and abs(gaps[1] - gaps[0]) <= 1e-6
