import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from packetized_etc import (
    CostWeights,
    DimensionMismatch,
    LinearSystem,
    MultiInputUnsupported,
    NotControllable,
    NotNilpotent,
    SingularA,
    UnstableArgument,
    control_sequence,
    controllability_index,
    lyap_solve,
    synthesize_deadbeat_gain,
    validate_deadbeat_gain,
)


def test_controllability_index_examples(scalar_plant, second_order_plant):
    assert controllability_index(scalar_plant[0]) == 1
    assert controllability_index(second_order_plant[0]) == 2
    # two inputs reach both states in one step
    wide = LinearSystem([[1.1, 0.3], [0.0, 0.9]], np.eye(2), np.eye(2), np.eye(2))
    assert controllability_index(wide) == 1


def test_controllability_index_rejects():
    stuck = LinearSystem(np.eye(2), [[1.0], [0.0]], np.eye(2), np.eye(2))
    with pytest.raises(NotControllable):
        controllability_index(stuck)
    singular = LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], np.eye(2), np.eye(2))
    with pytest.raises(SingularA):
        controllability_index(singular)


def test_synthesis_examples(scalar_plant, second_order_plant):
    ctrl = synthesize_deadbeat_gain(scalar_plant[0])
    assert ctrl.nu == 1
    np.testing.assert_allclose(ctrl.K, [[-1.6]], atol=1e-14)
    ctrl = synthesize_deadbeat_gain(second_order_plant[0])
    np.testing.assert_allclose(ctrl.K, [[-19 / 8, -3 / 4]], atol=1e-12)
    assert ctrl.nu == 2
    np.testing.assert_allclose(ctrl.Ac @ ctrl.Ac, 0.0, atol=1e-12)


def test_synthesis_rejects():
    two_inputs = LinearSystem(np.eye(2) * 1.1, np.eye(2), np.eye(2), np.eye(2))
    with pytest.raises(MultiInputUnsupported):
        synthesize_deadbeat_gain(two_inputs)
    stuck = LinearSystem(np.eye(2), [[1.0], [0.0]], np.eye(2), np.eye(2))
    with pytest.raises(NotControllable):
        synthesize_deadbeat_gain(stuck)


def test_validate_gain(second_order_plant):
    sys_ = second_order_plant[0]
    ctrl = validate_deadbeat_gain(sys_, [[-2.375, -0.75]], 2)
    assert np.linalg.norm(ctrl.Ac @ ctrl.Ac) <= 1e-10
    with pytest.raises(NotNilpotent) as info:
        validate_deadbeat_gain(sys_, [[0.0, 0.0]], 2)
    assert info.value.residual > info.value.tolerance
    # nilpotent with index 2 but not 1
    with pytest.raises(NotNilpotent):
        validate_deadbeat_gain(sys_, [[-2.375, -0.75]], 1)
    with pytest.raises(ValueError):
        validate_deadbeat_gain(sys_, [[-2.375, -0.75]], 3)
    with pytest.raises(ValueError):
        validate_deadbeat_gain(sys_, [[-2.375]], 2)


def test_lyap_examples():
    np.testing.assert_array_equal(lyap_solve(np.eye(2) * 0.5, np.zeros((2, 2))), 0.0)
    assert lyap_solve([[0.5]], [[1.0]])[0, 0] == pytest.approx(4 / 3, abs=1e-14)
    with pytest.raises(UnstableArgument):
        lyap_solve([[1.2]], [[1.0]])
    with pytest.raises(DimensionMismatch):
        lyap_solve(np.eye(2) * 0.5, np.eye(3))


def test_control_sequence(scalar_plant, second_order_plant):
    ctrl = scalar_plant[1]
    seq = control_sequence(ctrl, [2.0])
    assert len(seq) == 1 and seq[0][0] == pytest.approx(-3.2)
    ctrl = second_order_plant[1]
    # K e1 = -19/8 and K Ac e1 with Ac e1 = (0.3, 0.05)
    seq = control_sequence(ctrl, [1.0, 0.0])
    np.testing.assert_allclose(np.concatenate(seq), [-2.375, -0.75], atol=1e-12)
    assert all(np.all(u == 0) for u in control_sequence(ctrl, [0.0, 0.0]))


def test_system_validation():
    with pytest.raises(ValueError):
        LinearSystem([[1.0, 0.0], [0.0, 1.0]], [[1.0, 2.0], [1.0, 2.0]], np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        LinearSystem([[1.0]], [[1.0]], [[-1.0]], [[1.0]])
    with pytest.raises(ValueError):
        LinearSystem([[1.0]], [[1.0]], [[1.0, 0.0], [0.0, 1.0]], [[1.0]])
    sys_ = LinearSystem.scalar(1.6, 1.0, 1.44)
    assert sys_.n == 1 and sys_.m == 1 and sys_.Sigma_0[0, 0] == 0.0


def test_weights_validation():
    w = CostWeights([[2.0]], [[3.0]], 0.5)
    assert w.transmit_weight([[2.0]])[0, 0] == pytest.approx(2.0 + 0.5 * 4 * 3.0)
    with pytest.raises(ValueError):
        CostWeights([[1.0]], [[0.0]], 0.0)
    with pytest.raises(ValueError):
        CostWeights([[1.0]], [[1.0]], -1.0)
    with pytest.raises(ValueError):
        CostWeights([[-1.0]], [[1.0]], 0.0)


def _random_single_input(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, 1))
    return LinearSystem(A, B, np.eye(n), np.eye(n))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4))
def test_synthesized_gain_is_deadbeat(seed, n):
    sys_ = _random_single_input(seed, n)
    ctrl = synthesize_deadbeat_gain(sys_)
    scale = 1.0 + np.linalg.norm(sys_.A) ** n
    assert np.linalg.norm(np.linalg.matrix_power(ctrl.Ac, n)) <= 1e-8 * scale
    # the packet drives any state to the origin in nu open-loop-free steps
    x = np.random.default_rng(seed + 1).normal(size=n)
    z = x.copy()
    for u in control_sequence(ctrl, x):
        z = sys_.A @ z + sys_.B @ u
    assert np.linalg.norm(z) <= 1e-7 * scale * (1 + np.linalg.norm(x))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4), radius=st.floats(0.0, 0.95))
def test_lyap_residual_and_series(seed, n, radius):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    rho = max(abs(np.linalg.eigvals(M)))
    A = M * (radius / rho) if rho > 0 else M
    F = rng.normal(size=(n, n))
    Q = F @ F.T
    X = lyap_solve(A, Q)
    assert np.linalg.norm(A @ X @ A.T - X + Q) <= 1e-9 * (1 + np.linalg.norm(X))
    assert np.min(np.linalg.eigvalsh(X)) >= -1e-9 * np.linalg.norm(X)
    # truncated Neumann series as a second route
    S, P = np.zeros((n, n)), np.eye(n)
    for _ in range(800):
        S += P @ Q @ P.T
        P = A @ P
    np.testing.assert_allclose(X, S, rtol=1e-7, atol=1e-9 * np.linalg.norm(S))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4))
def test_index_is_minimal_and_bounded(seed, n):
    sys_ = _random_single_input(seed, n)
    nu = controllability_index(sys_)
    # single input: needs all n inverse powers
    assert nu == n
