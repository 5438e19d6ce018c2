"""Trigger chains and closed-form communication rates.

A cycle starts with a delivered packet.  With nu-step packets the
controller is silent while the buffer drains, then watches the open-loop
states z_0, z_1, ... and attempts a transmission at the first z_i with
|z_i|_inf > eps, or at z_T (time-out).  With F_i = {|z_j|_inf <= eps, j < i}
the crossing probability of level i is

    p_i = 1 - P(F_{i+1}) / P(F_i),    p_T = 1.

A dropped attempt is retried at the next step with a fresh packet; the
time-out counter is frozen during retries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import DEFAULT_OPTIONS, QmcOptions, TruncationLadder, delta_covariance, truncation_ladder, xi_covariance
from .model import DeadBeatController, LinearSystem


@dataclass(frozen=True)
class TriggerParams:
    epsilon: float
    timeout_T: int
    p_loss: float = 0.0

    def __post_init__(self):
        eps = float(self.epsilon)
        if not eps >= 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if int(self.timeout_T) != self.timeout_T or self.timeout_T < 0:
            raise ValueError(f"timeout_T must be a nonnegative integer, got {self.timeout_T}")
        if not 0.0 <= self.p_loss < 1.0:
            raise ValueError(f"p_loss must lie in [0, 1), got {self.p_loss}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "timeout_T", int(self.timeout_T))
        object.__setattr__(self, "p_loss", float(self.p_loss))


@dataclass(frozen=True, eq=False)
class TriggeredChain:
    crossing_probs: np.ndarray
    nu: int = 1
    kind: str = "scalar"
    structure: str = "lossless"

    def __post_init__(self):
        p = np.array(self.crossing_probs, dtype=float, ndmin=1)
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("crossing probabilities must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "crossing_probs", p)

    @property
    def T(self) -> int:
        return len(self.crossing_probs)

    def success_rate(self, p_loss: float = 0.0) -> float:
        return rate_vector_lossy(self.crossing_probs, self.T, self.nu, p_loss)[0]


def probs_from_ladder(ladder: TruncationLadder) -> np.ndarray:
    """Crossing probabilities p_0..p_{L-1} from nested masses P(F_0..F_L)."""
    P = ladder.P
    out = np.ones(len(P) - 1)
    pos = P[:-1] > 0
    out[pos] = 1.0 - P[1:][pos] / P[:-1][pos]
    return np.clip(out, 0.0, 1.0)


def scalar_ladder(a, sigma_w2, trig: TriggerParams, opts: QmcOptions = DEFAULT_OPTIONS) -> TruncationLadder:
    T = max(trig.timeout_T, 1)
    return truncation_ladder(xi_covariance(a, sigma_w2, T - 1), 1, trig.epsilon, T, opts)


def vector_ladder(sys: LinearSystem, ctrl: DeadBeatController, trig: TriggerParams,
                  opts: QmcOptions = DEFAULT_OPTIONS) -> TruncationLadder:
    T = max(trig.timeout_T, 1)
    return truncation_ladder(delta_covariance(sys, ctrl.nu, T - 1), sys.n, trig.epsilon, T, opts)


def crossing_probs_scalar(a, sigma_w2, trig: TriggerParams, opts: QmcOptions = DEFAULT_OPTIONS,
                          ladder: TruncationLadder | None = None) -> np.ndarray:
    if sigma_w2 <= 0:
        raise ValueError("sigma_w2 must be positive")
    if trig.timeout_T == 0:
        return np.zeros(0)
    ladder = ladder or scalar_ladder(a, sigma_w2, trig, opts)
    return probs_from_ladder(ladder)


def crossing_probs_vector(sys: LinearSystem, ctrl: DeadBeatController, trig: TriggerParams,
                          opts: QmcOptions = DEFAULT_OPTIONS,
                          ladder: TruncationLadder | None = None) -> np.ndarray:
    if trig.timeout_T == 0:
        return np.zeros(0)
    ladder = ladder or vector_ladder(sys, ctrl, trig, opts)
    return probs_from_ladder(ladder)


def _survival(probs, T):
    """Pi_i = prod_{m<i} (1 - p_m), i = 0..T."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (T,):
        raise ValueError(f"expected {T} crossing probabilities, got {probs.shape}")
    return np.concatenate([[1.0], np.cumprod(1.0 - probs)])


def _with_timeout(probs):
    return np.concatenate([np.asarray(probs, dtype=float), [1.0]])


def rate_scalar_lossless(probs, T) -> float:
    """Long-run fraction of steps carrying a transmission."""
    Pi = _survival(probs, T)
    return 1.0 / Pi.sum()


def rate_scalar_lossy(probs, T, p_loss) -> tuple[float, float, float]:
    """(success rate, attempt rate in the lossless form, exact attempt rate).

    Every exit from the trigger chain starts a geometric burst of attempts,
    so the exact attempt rate is success / (1 - p_loss).  The lossless-form
    attempt rate ignores retries and is reported for comparison.
    """
    Pi = _survival(probs, T)
    p = _with_timeout(probs)
    theta = (1.0 - p_loss * (1.0 - p)) / (1.0 - p_loss)
    success = 1.0 / (theta @ Pi)
    return success, rate_scalar_lossless(probs, T), success / (1.0 - p_loss)


def rate_vector_lossless(probs, T, nu) -> float:
    if nu < 1:
        raise ValueError("nu must be positive")
    Pi = _survival(probs, T)
    theta = 1.0 + (nu - 1) * _with_timeout(probs)
    return 1.0 / (theta @ Pi)


def rate_vector_lossy(probs, T, nu, p_loss) -> tuple[float, float, float]:
    """As ``rate_scalar_lossy`` for nu-step packets."""
    if nu < 1:
        raise ValueError("nu must be positive")
    Pi = _survival(probs, T)
    p = _with_timeout(probs)
    theta = 1.0 + (nu - 1) * p + p_loss * p / (1.0 - p_loss)
    success = 1.0 / (theta @ Pi)
    return success, rate_vector_lossless(probs, T, nu), success / (1.0 - p_loss)


def stationary_distribution_scalar(probs, T) -> np.ndarray:
    """Stationary law of the lossless scalar chain on states 0..T."""
    Pi = _survival(probs, T)
    return Pi / Pi.sum()


def scalar_transition_matrix(probs, T) -> np.ndarray:
    """Row-stochastic matrix of the lossless scalar chain.

    State 0 is a transmission step; state i >= 1 follows i quiet steps.
    From state i the chain returns to 0 with probability p_i and moves to
    i + 1 otherwise; state T always returns to 0.
    """
    p = _with_timeout(probs)
    if len(p) != T + 1:
        raise ValueError(f"expected {T} crossing probabilities")
    M = np.zeros((T + 1, T + 1))
    for i in range(T + 1):
        M[i, 0] = p[i]
        if i < T:
            M[i, i + 1] = 1.0 - p[i]
    return M


def vector_states(T, nu) -> list[tuple[int, int]]:
    """State labels (r, eta) of the lossless vector chain, in matrix order.

    (0, eta) for eta = nu-1..0 are the transmission step and the buffer
    drain that follows it; (r, 0) for r = 1..T follow r quiet steps.
    """
    return [(0, eta) for eta in range(nu - 1, -1, -1)] + [(r, 0) for r in range(1, T + 1)]


def vector_transition_matrix(probs, T, nu) -> np.ndarray:
    """Row-stochastic matrix over ``vector_states(T, nu)``.

    A transmission (triggered or forced) lands in (0, nu-1); the buffer
    then drains deterministically to (0, 0), after which the state z_0 is
    examined.
    """
    p = _with_timeout(probs)
    states = vector_states(T, nu)
    index = {s: k for k, s in enumerate(states)}
    M = np.zeros((len(states), len(states)))
    tx = index[(0, nu - 1)]
    for eta in range(nu - 1, 0, -1):
        M[index[(0, eta)], index[(0, eta - 1)]] = 1.0
    for r in range(T + 1):
        src = index[(0, 0)] if r == 0 else index[(r, 0)]
        M[src, tx] += p[r]
        if r < T:
            M[src, index[(r + 1, 0)]] += 1.0 - p[r]
    return M


def stationary_from_matrix(M) -> np.ndarray:
    """Stationary law of an irreducible chain by a dense linear solve."""
    n = M.shape[0]
    lhs = np.vstack([(M.T - np.eye(n)), np.ones((1, n))])
    rhs = np.concatenate([np.zeros(n), [1.0]])
    pi, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return pi
