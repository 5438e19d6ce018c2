"""Independent reference computations used only by the tests.

None of these share code with the package beyond plain numpy/scipy:

* ``quadrature_ladder`` integrates the open-loop Markov recursion
  z_{i+1} = A z_i + w on the box with tensor Gauss-Legendre nodes (no QMC,
  no Cholesky ordering, no set-difference identity);
* ``explicit_chain_rates`` builds the per-step chain with an explicit
  retry counter truncated at a large depth and solves it densely;
* ``series_loss`` sums the retry bursts term by term instead of through a
  Lyapunov equation.
"""
from __future__ import annotations

import itertools

import numpy as np
from numpy.polynomial.legendre import leggauss


def _gauss_density(diff, cov):
    """N(0, cov) density evaluated at the rows of ``diff``."""
    n = cov.shape[0]
    inv = np.linalg.inv(cov)
    quad = np.einsum("...i,ij,...j->...", diff, inv, diff)
    return np.exp(-0.5 * quad) / np.sqrt((2 * np.pi) ** n * np.linalg.det(cov))


def quadrature_ladder(A, Sigma_w, Sigma_star, eps, T, nodes=60):
    """(P, SB, D) with P[i] = P(F_i), SB[i] = E[z_i z_i' 1{F_{i+1}}], D[i] exit moments.

    D has T+1 entries; D[T] is the forced step after T quiet levels.
    """
    A = np.atleast_2d(np.asarray(A, float))
    Sw = np.atleast_2d(np.asarray(Sigma_w, float))
    S0 = np.atleast_2d(np.asarray(Sigma_star, float))
    n = A.shape[0]
    t, wt = leggauss(nodes)
    grid = np.array(list(itertools.product(eps * t, repeat=n)))
    w = np.prod(np.array(list(itertools.product(eps * wt, repeat=n))), axis=1)
    f = _gauss_density(grid, S0)
    kernel = _gauss_density(grid[:, None, :] - grid[None, :, :] @ A.T, Sw)
    P = [1.0]
    SB, SA = [], [S0]
    for i in range(T):
        fw = f * w
        P.append(fw.sum())
        SB.append((grid.T * fw) @ grid)
        SA.append(A @ SB[-1] @ A.T + P[-1] * Sw)
        f = kernel @ fw
    D = [SA[i] - SB[i] for i in range(T)] + [SA[T]]
    return np.array(P), np.array(SB), np.array(D)


def sigma_star(A, Sigma_w, nu):
    A = np.atleast_2d(np.asarray(A, float))
    Sw = np.atleast_2d(np.asarray(Sigma_w, float))
    out = np.zeros_like(Sw)
    M = np.eye(A.shape[0])
    for _ in range(nu):
        out += M @ Sw @ M.T
        M = A @ M
    return out


def _retry_chain(probs, nu, p_loss, depth):
    """Step-level transition matrix, per-state attempt and success probabilities, start state.

    States: hold steps after a delivery, watch levels 0..T (attempt with
    probability p_r, p_T = 1), and retry depths 1..depth.
    """
    p = list(probs) + [1.0]
    T = len(probs)
    states = [("hold", h) for h in range(1, nu)] + [("watch", r) for r in range(T + 1)] \
        + [("retry", g) for g in range(1, depth + 1)]
    idx = {s: k for k, s in enumerate(states)}
    N = len(states)
    M = np.zeros((N, N))
    att = np.zeros(N)
    suc = np.zeros(N)
    after_success = idx[("hold", 1)] if nu > 1 else idx[("watch", 0)]
    for h in range(1, nu):
        nxt = idx[("hold", h + 1)] if h + 1 < nu else idx[("watch", 0)]
        M[idx[("hold", h)], nxt] = 1.0
    for r in range(T + 1):
        s = idx[("watch", r)]
        att[s] = p[r]
        suc[s] = p[r] * (1 - p_loss)
        M[s, after_success] += p[r] * (1 - p_loss)
        M[s, idx[("retry", 1)]] += p[r] * p_loss
        if r < T:
            M[s, idx[("watch", r + 1)]] += 1 - p[r]
    for g in range(1, depth + 1):
        s = idx[("retry", g)]
        att[s] = 1.0
        suc[s] = 1 - p_loss
        M[s, after_success] += 1 - p_loss
        M[s, idx[("retry", min(g + 1, depth))]] += p_loss
    return M, att, suc, idx[("watch", 0)]


def explicit_chain_rates(probs, nu, p_loss, depth=400):
    """(success rate, attempt rate) of the stationary step-level chain with retries."""
    M, att, suc, _ = _retry_chain(probs, nu, p_loss, depth)
    N = M.shape[0]
    lhs = np.vstack([M.T - np.eye(N), np.ones((1, N))])
    rhs = np.concatenate([np.zeros(N), [1.0]])
    pi = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return float(pi @ suc), float(pi @ att)


def finite_horizon_success(probs, nu, p_loss, horizon, depth=200):
    """Expected successes per step over the first ``horizon`` steps from watch level 0.

    Exact for a run whose initial state has the level-0 law; the gap to
    the stationary rate is the O(1/horizon) start-up and truncation bias.
    """
    M, _, suc, start = _retry_chain(probs, nu, p_loss, depth)
    dist = np.zeros(M.shape[0])
    dist[start] = 1.0
    total = 0.0
    for _ in range(horizon):
        total += dist @ suc
        dist = dist @ M
    return total / horizon


def series_loss(A, B, K, Sigma_w, Qx, Qu, rho, nu, p_loss, P, SB, D, terms=600):
    """Renewal-reward loss with retry bursts summed term by term."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    K = np.atleast_2d(np.asarray(K, float))
    Sw = np.atleast_2d(np.asarray(Sigma_w, float))
    Qx = np.atleast_2d(np.asarray(Qx, float))
    Qu = np.atleast_2d(np.asarray(Qu, float))
    n = A.shape[0]
    Ac = A + B @ K
    T = len(P) - 1
    mass = np.concatenate([P[:-1] - P[1:], [P[-1]]])

    def packet_cost(X, mass_i):
        # nu buffered steps from a state with unnormalized second moment X
        cost = 0.0
        noise = np.zeros((n, n))
        M = np.eye(n)
        for j in range(nu):
            state = M @ X @ M.T + mass_i * noise
            u_cov = K @ M @ X @ M.T @ K.T
            cost += np.trace(Qx @ state) + rho * np.trace(Qu @ u_cov)
            noise = A @ noise @ A.T + Sw
            M = Ac @ M
        return cost

    total = 0.0
    for i in range(T + 1):
        X = D[i]
        # burst of g drops: cost of each dropped step, then the delivered packet
        prob_g = 1.0 - p_loss
        Xg = X.copy()
        for g in range(terms):
            total += prob_g * packet_cost(Xg, mass[i])
            # dropped step at depth g costs x'Q_x x with probability p^(g+1)
            total += p_loss ** (g + 1) * np.trace(Qx @ Xg)
            Xg = A @ Xg @ A.T + mass[i] * Sw
            prob_g *= p_loss
    for i in range(1, T + 1):
        total += np.trace(Qx @ SB[i - 1])
    length = P.sum() + (nu - 1) + p_loss / (1 - p_loss)
    return total / length
