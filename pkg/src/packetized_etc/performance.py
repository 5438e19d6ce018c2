"""Closed-form expected per-step loss of the triggered packetized loop.

Renewal-reward argument over cycles that start at a delivered packet.
Writing m_i = P(F_i) - P(F_{i+1}) for the probability that the cycle's
trigger chain exits at level i (m_T = P(F_T)), and

    D_i = E[z_i z_i' 1{exit at i}],     S_i = E[z_i z_i' 1{F_{i+1}}],

a cycle that exits at level i costs

    sum_j Tr(G_j W) + m_i Z          with G_j = Ac'^j Qt Ac^j

for the packet it sends (Qt = Q_x + rho K'Q_u K, Z the noise cost of the
buffered steps), plus Tr(Q_x S_{i-1}) for each quiet step.  Dropped
packets add a geometric burst of open-loop steps before delivery, which
turns G_j into lyap(sqrt(p) A', G_j) and adds a Q_x term for every drop.

The scalar functions follow the conditional-variance form (conditional
variances times chain probabilities); the vector functions use the
unnormalized moments directly.  The two agree at n = nu = 1, which the
test-suite checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnstableConfiguration
from .gaussian import DEFAULT_OPTIONS, PROB_FLOOR, QmcOptions, TruncationLadder
from .markov import (
    TriggerParams,
    probs_from_ladder,
    rate_scalar_lossless,
    rate_scalar_lossy,
    rate_vector_lossless,
    rate_vector_lossy,
    scalar_ladder,
    vector_ladder,
)
from .model import CostWeights, DeadBeatController, LinearSystem, lyap_solve, spectral_radius


@dataclass(frozen=True, eq=False)
class LossBreakdown:
    """Expected per-step loss and its split by chain state.

    ``terms`` maps "exit[i]" (the packet sent when the chain leaves level
    i, retries included) and "quiet[i]" (the quiet step before level i) to
    their share of ``J_inf``; the shares sum to ``J_inf``.
    """

    J_inf: float
    terms: dict = field(default_factory=dict)
    stability_margin: float = 1.0


@dataclass(frozen=True, eq=False)
class PerformanceReport:
    success_rate: float
    attempt_rate: float
    attempt_rate_exact: float
    loss: LossBreakdown
    crossing_probs: np.ndarray
    provenance: str = "analytic"


def _require_T(trig):
    if trig.timeout_T < 1:
        raise ValueError("loss formulas require timeout_T >= 1")


def _stability_margin(A, p_loss):
    margin = 1.0 - p_loss * spectral_radius(A) ** 2
    if margin <= 0.0:
        raise UnstableConfiguration(
            f"p_loss * rho(A)^2 = {p_loss * spectral_radius(A) ** 2:.6g} >= 1; the loss is unbounded"
        )
    return margin


def _ratio(num, den, floor=PROB_FLOOR):
    return num / den if den > floor else np.zeros_like(num)


def _scalar_inputs(a, sigma_w2, weights, K, trig, opts, ladder):
    _require_T(trig)
    if sigma_w2 <= 0:
        raise ValueError("sigma_w2 must be positive")
    ladder = ladder or scalar_ladder(a, sigma_w2, trig, opts)
    T = trig.timeout_T
    probs = probs_from_ladder(ladder)
    Pi = np.concatenate([[1.0], np.cumprod(1.0 - probs)])
    p = np.concatenate([probs, [1.0]])
    interior = ladder.interior[:, 0, 0]
    exterior = ladder.exterior[:, 0, 0]
    # Var[xi_{i-1} | F_i], i = 1..T
    sigma = np.array([_ratio(interior[i - 1], ladder.P[i]) for i in range(1, T + 1)])
    # Var[xi_i | exit at i], i = 0..T-1, then the forced step at T
    sigma_c = [_ratio(exterior[i], ladder.P[i] - ladder.P[i + 1]) for i in range(T)]
    sigma_c.append(a * a * sigma[T - 1] + sigma_w2)
    Qx = float(weights.Q_x[0, 0])
    Qt = float(weights.transmit_weight(np.atleast_2d(K))[0, 0])
    return T, probs, Pi, p, sigma, np.array(sigma_c), Qx, Qt


def loss_scalar_lossless(a, sigma_w2, weights: CostWeights, K, trig: TriggerParams,
                         opts: QmcOptions = DEFAULT_OPTIONS,
                         ladder: TruncationLadder | None = None) -> LossBreakdown:
    T, probs, Pi, p, sigma, sigma_c, Qx, Qt = _scalar_inputs(a, sigma_w2, weights, K, trig, opts, ladder)
    pi0 = rate_scalar_lossless(probs, T)
    terms = {f"exit[{i}]": pi0 * Qt * p[i] * Pi[i] * sigma_c[i] for i in range(T + 1)}
    terms.update({f"quiet[{i}]": pi0 * Qx * Pi[i] * sigma[i - 1] for i in range(1, T + 1)})
    return LossBreakdown(float(sum(terms.values())), terms, 1.0)


def loss_scalar_lossy(a, sigma_w2, weights: CostWeights, K, trig: TriggerParams,
                      opts: QmcOptions = DEFAULT_OPTIONS,
                      ladder: TruncationLadder | None = None) -> LossBreakdown:
    pl = trig.p_loss
    margin = _stability_margin(np.atleast_2d(a), pl)
    T, probs, Pi, p, sigma, sigma_c, Qx, Qt = _scalar_inputs(a, sigma_w2, weights, K, trig, opts, ladder)
    Qhat = ((1.0 - pl) * Qt + pl * Qx) / (1.0 - pl * a * a)
    pi_s = rate_scalar_lossy(probs, T, pl)[0]
    terms = {
        f"exit[{i}]": pi_s * Qhat * p[i] * Pi[i] * ((1.0 - pl) * sigma_c[i] + pl * sigma_w2) / (1.0 - pl)
        for i in range(T + 1)
    }
    terms.update({f"quiet[{i}]": pi_s * Qx * Pi[i] * sigma[i - 1] for i in range(1, T + 1)})
    return LossBreakdown(float(sum(terms.values())), terms, margin)


def _vector_inputs(sys, ctrl, weights, trig, opts, ladder):
    _require_T(trig)
    ladder = ladder or vector_ladder(sys, ctrl, trig, opts)
    T = trig.timeout_T
    probs = probs_from_ladder(ladder)
    A, Sw = sys.A, sys.Sigma_w
    mass = np.concatenate([ladder.exit_mass, [ladder.P[T]]])
    S = ladder.interior
    D = list(ladder.exterior) + [A @ S[T - 1] @ A.T + ladder.P[T] * Sw]
    Qt = weights.transmit_weight(ctrl.K)
    G, M = [], np.eye(sys.n)
    for _ in range(ctrl.nu):
        G.append(M.T @ Qt @ M)
        M = ctrl.Ac @ M
    Z = 0.0
    Al = [np.eye(sys.n)]
    for _ in range(max(ctrl.nu - 2, 0)):
        Al.append(A @ Al[-1])
    for j in range(ctrl.nu - 1):
        for l in range(j + 1):
            Z += np.trace(Al[l].T @ weights.Q_x @ Al[l] @ Sw)
    return T, probs, mass, S, D, G, Z


def loss_vector_lossless(sys: LinearSystem, ctrl: DeadBeatController, weights: CostWeights,
                         trig: TriggerParams, opts: QmcOptions = DEFAULT_OPTIONS,
                         ladder: TruncationLadder | None = None) -> LossBreakdown:
    T, probs, mass, S, D, G, Z = _vector_inputs(sys, ctrl, weights, trig, opts, ladder)
    pi = rate_vector_lossless(probs, T, ctrl.nu)
    Gsum = sum(G)
    terms = {f"exit[{i}]": pi * (np.trace(Gsum @ D[i]) + mass[i] * Z) for i in range(T + 1)}
    terms.update({f"quiet[{i}]": pi * np.trace(weights.Q_x @ S[i - 1]) for i in range(1, T + 1)})
    return LossBreakdown(float(sum(terms.values())), {k: float(v) for k, v in terms.items()}, 1.0)


def retry_weights(sys: LinearSystem, ctrl: DeadBeatController, weights: CostWeights, p_loss: float):
    """Theta_j = lyap(sqrt(p) A', G_j) for each packet step and Upsilon = lyap(sqrt(p) A', Q_x)."""
    At = np.sqrt(p_loss) * sys.A.T
    Qt = weights.transmit_weight(ctrl.K)
    thetas, M = [], np.eye(sys.n)
    for _ in range(ctrl.nu):
        thetas.append(lyap_solve(At, M.T @ Qt @ M))
        M = ctrl.Ac @ M
    return thetas, lyap_solve(At, weights.Q_x)


def loss_vector_lossy(sys: LinearSystem, ctrl: DeadBeatController, weights: CostWeights,
                      trig: TriggerParams, opts: QmcOptions = DEFAULT_OPTIONS,
                      ladder: TruncationLadder | None = None) -> LossBreakdown:
    pl = trig.p_loss
    margin = _stability_margin(sys.A, pl)
    T, probs, mass, S, D, G, Z = _vector_inputs(sys, ctrl, weights, trig, opts, ladder)
    thetas, upsilon = retry_weights(sys, ctrl, weights, pl)
    pi_s = rate_vector_lossy(probs, T, ctrl.nu, pl)[0]
    Th = sum(thetas) + (pl / (1.0 - pl)) * upsilon
    terms = {}
    for i in range(T + 1):
        W = (1.0 - pl) * D[i] + pl * mass[i] * sys.Sigma_w
        terms[f"exit[{i}]"] = float(pi_s * (np.trace(Th @ W) + mass[i] * Z))
    for i in range(1, T + 1):
        terms[f"quiet[{i}]"] = float(pi_s * np.trace(weights.Q_x @ S[i - 1]))
    return LossBreakdown(float(sum(terms.values())), terms, margin)


def is_scalar_case(sys: LinearSystem, ctrl: DeadBeatController) -> bool:
    return sys.n == 1 and ctrl.nu == 1


def analyze(sys: LinearSystem, ctrl: DeadBeatController, weights: CostWeights, trig: TriggerParams,
            opts: QmcOptions = DEFAULT_OPTIONS, ladder: TruncationLadder | None = None
            ) -> PerformanceReport:
    """Rates and loss for one operating point, choosing the scalar forms when n = nu = 1."""
    _require_T(trig)
    pl = trig.p_loss
    if pl > 0:
        _stability_margin(sys.A, pl)
    T = trig.timeout_T
    if is_scalar_case(sys, ctrl):
        a, s2, K = float(sys.A[0, 0]), float(sys.Sigma_w[0, 0]), ctrl.K
        ladder = ladder or scalar_ladder(a, s2, trig, opts)
        probs = probs_from_ladder(ladder)
        if pl > 0:
            success, attempt, exact = rate_scalar_lossy(probs, T, pl)
            loss = loss_scalar_lossy(a, s2, weights, K, trig, opts, ladder)
        else:
            success = attempt = exact = rate_scalar_lossless(probs, T)
            loss = loss_scalar_lossless(a, s2, weights, K, trig, opts, ladder)
    else:
        ladder = ladder or vector_ladder(sys, ctrl, trig, opts)
        probs = probs_from_ladder(ladder)
        if pl > 0:
            success, attempt, exact = rate_vector_lossy(probs, T, ctrl.nu, pl)
            loss = loss_vector_lossy(sys, ctrl, weights, trig, opts, ladder)
        else:
            success = attempt = exact = rate_vector_lossless(probs, T, ctrl.nu)
            loss = loss_vector_lossless(sys, ctrl, weights, trig, opts, ladder)
    return PerformanceReport(float(success), float(attempt), float(exact), loss, probs)
