"""Rectangle probabilities and truncated second moments of zero-mean Gaussians.

All integrals go through one engine: the Genz separation-of-variables
transform, evaluated with randomized (scrambled Sobol) quasi-Monte Carlo.
The box is processed coordinate by coordinate along the Cholesky factor;
within each block the last coordinate is integrated in closed form, and a
block left unconstrained is integrated in closed form entirely.  Several
nested quantities (P(F_1), ..., P(F_L) and the matching block moments) are
estimated from a single pass over one shared point set, which keeps them
mutually consistent: P(F_{i+1}) <= P(F_i) holds point by point.

Error estimates are 3 standard errors across independent scrambles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .errors import DimensionMismatch, NegativeMassDifference, ToleranceNotMet, VanishingMass
from .model import LinearSystem, check_psd

PROB_FLOOR = 1e-12
DEFAULT_SEED = 20240611
REJECTION_MASS = 0.05
_PIVOT_TOL = 1e-13
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class QmcOptions:
    """Accuracy and effort controls for the QMC engine.

    ``abs_tol`` bounds the reported error on probabilities, ``moment_tol``
    the error on unnormalized second moments relative to the largest
    diagonal entry of the covariance.  Points per scramble double from
    ``initial_points`` until both hold or ``max_points`` is reached.
    """

    abs_tol: float = 1e-6
    moment_tol: float = 1e-6
    replicates: int = 8
    initial_points: int = 2**10
    max_points: int = 2**16
    seed: int = DEFAULT_SEED
    strict: bool = False


DEFAULT_OPTIONS = QmcOptions()


@dataclass(frozen=True, eq=False)
class GaussianVector:
    cov: np.ndarray
    mean: np.ndarray | None = None

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float, ndmin=2)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise DimensionMismatch(f"covariance must be square, got {cov.shape}")
        check_psd(cov, "cov")
        mean = np.zeros(cov.shape[0]) if self.mean is None else np.array(self.mean, dtype=float)
        if mean.shape != (cov.shape[0],):
            raise DimensionMismatch("mean and covariance dimensions differ")
        if np.any(mean != 0):
            raise ValueError("only zero-mean Gaussians are supported")
        cov.setflags(write=False)
        mean.setflags(write=False)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]


@dataclass(frozen=True, eq=False)
class Rectangle:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float, ndmin=1)
        hi = np.array(self.upper, dtype=float, ndmin=1)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("lower and upper must be vectors of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ValueError("rectangle needs lower <= upper componentwise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, half_width, dim) -> "Rectangle":
        h = np.broadcast_to(np.asarray(half_width, dtype=float), (dim,))
        return cls(-h, h.copy())

    @classmethod
    def whole(cls, dim) -> "Rectangle":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def is_origin_symmetric(self) -> bool:
        return bool(np.array_equal(self.lower, -self.upper))


@dataclass(frozen=True)
class ProbabilityEstimate:
    value: float
    error: float

    def __float__(self):
        return self.value


@dataclass(frozen=True, eq=False)
class TruncatedMoments:
    """Mass of a region and the conditional moments of selected coordinates."""

    prob: float
    second_moment: np.ndarray
    mean: np.ndarray
    prob_error: float = 0.0
    second_moment_error: np.ndarray | None = None
    mean_error: np.ndarray | None = None
    method: str = "qmc"


@dataclass(frozen=True, eq=False)
class TruncationLadder:
    """Nested box integrals for a block-structured covariance.

    With blocks z_0, ..., z_{L-1} of size ``block`` and
    F_i = {|z_j|_inf <= eps for all j < i}:

    * ``P[i]`` = P(F_i), i = 0..L, with P[0] = 1;
    * ``interior[i]`` = E[z_i z_i' 1{F_{i+1}}];
    * ``exterior[i]`` = E[z_i z_i' 1{F_i, |z_i|_inf > eps}].

    Moments are unnormalized; divide by the matching mass for conditional
    covariances.
    """

    epsilon: float
    P: np.ndarray
    P_err: np.ndarray
    interior: np.ndarray
    interior_err: np.ndarray
    exterior: np.ndarray
    exterior_err: np.ndarray
    points: int = 0

    @property
    def levels(self) -> int:
        return len(self.P) - 1

    @property
    def exit_mass(self) -> np.ndarray:
        """P(F_i) - P(F_{i+1}) for i < L."""
        return self.P[:-1] - self.P[1:]


def psd_factor(cov):
    """Lower-triangular L with L L' = cov, tolerating zero pivots."""
    d = cov.shape[0]
    L = np.zeros_like(cov)
    scale = max(1.0, float(np.max(np.abs(np.diag(cov))))) if d else 1.0
    for j in range(d):
        v = cov[j, j] - L[j, :j] @ L[j, :j]
        if v <= _PIVOT_TOL * scale:
            # Degenerate direction: coordinate j is a function of earlier ones.
            continue
        L[j, j] = np.sqrt(v)
        L[j + 1:, j] = (cov[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _xphi(x):
    out = np.zeros_like(x)
    fin = np.isfinite(x)
    out[fin] = x[fin] * np.exp(-0.5 * x[fin] ** 2) * _INV_SQRT_2PI
    return out


def _phi(x):
    return np.exp(-0.5 * np.square(x)) * _INV_SQRT_2PI


def _standard_limits(lo, hi, c, ljj):
    if ljj > 0.0:
        return (lo - c) / ljj, (hi - c) / ljj
    inside = (c >= lo) & (c <= hi)
    a = np.where(inside, -np.inf, np.inf)
    return a, np.full_like(c, np.inf)


def _interval_mass_and_draw(a, b, u):
    """Mass of [a, b] under N(0,1) and the inverse-CDF draw at u.

    Intervals in the upper tail are reflected so the CDF differences are
    taken where they have full relative precision.
    """
    flip = a > 0.0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    plo = ndtr(lo)
    phi_ = ndtr(hi)
    q = np.maximum(phi_ - plo, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = ndtri(plo + u * q)
    z = np.where(np.isfinite(z), z, np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0)))
    z = np.clip(z, lo, hi)
    z = np.where(q > 0.0, z, 0.0)
    return q, np.where(flip, -z, z)


def _sov_pass(L, lo, hi, u, blocks):
    """Sample means of the per-block integrands over the points ``u``.

    For each (start, stop) block the result holds, with w the running
    product of interval masses (the SOV weight):

    PA, MA, SA  mass and first/second moments with the block left free;
    PB, MB, SB  the same with the block confined to the box.
    """
    N = u.shape[0]
    d = L.shape[0]
    y = np.zeros((N, d))
    w = np.ones(N)
    out = []
    for s, e in blocks:
        Lb = L[s:e, s:e]
        m = y[:, :s] @ L[s:e, :s].T
        PA = w.mean()
        MA = (w[:, None] * m).mean(axis=0)
        SA = (m.T * w) @ m / N + PA * (Lb @ Lb.T)
        if np.all(np.isneginf(lo[s:e])) and np.all(np.isposinf(hi[s:e])):
            y[:, s:e] = ndtri(u[:, s:e])
            out.append((PA, MA, SA, PA, MA.copy(), SA.copy()))
            continue
        for j in range(s, e - 1):
            c = y[:, :j] @ L[j, :j]
            a, b = _standard_limits(lo[j], hi[j], c, L[j, j])
            q, y[:, j] = _interval_mass_and_draw(a, b, u[:, j])
            w = w * q
        j = e - 1
        xb = y[:, :j] @ L[s:e, :j].T
        ljj = L[j, j]
        a, b = _standard_limits(lo[j], hi[j], xb[:, -1], ljj)
        q, y[:, j] = _interval_mass_and_draw(a, b, u[:, j])
        s1 = _phi(a) - _phi(b)
        s2 = q + _xphi(a) - _xphi(b)
        wq = w * q
        MB = (wq[:, None] * xb).mean(axis=0)
        MB[-1] += ljj * (w * s1).mean()
        SB = (xb.T * wq) @ xb / N
        cross = ljj * (xb.T @ (w * s1)) / N
        SB[:, -1] += cross
        SB[-1, :] += cross
        SB[-1, -1] += ljj * ljj * (w * s2).mean()
        w = wq
        out.append((PA, MA, SA, w.mean(), MB, SB))
    return out


class _Accumulator:
    """Running per-scramble sums for adaptive point doubling."""

    def __init__(self, R):
        self.sums = [None] * R
        self.counts = np.zeros(R)

    def add(self, r, n, values):
        flat = np.concatenate([np.ravel(v) for v in values])
        self.sums[r] = flat * n if self.sums[r] is None else self.sums[r] + flat * n
        self.counts[r] += n

    def per_scramble(self):
        return np.array([s / c for s, c in zip(self.sums, self.counts)])


def _engines(d, opts):
    children = np.random.SeedSequence(opts.seed).spawn(opts.replicates)
    return [qmc.Sobol(d, scramble=True, seed=np.random.default_rng(c)) for c in children]


def _run_adaptive(L, lo, hi, blocks, opts, converged, transform=None):
    """Drive ``_sov_pass`` with doubling point counts until ``converged``.

    ``transform`` maps one scramble's raw block sums to the flat vector of
    quantities whose spread defines the error (ratios must be formed per
    scramble, not after averaging).  Returns (values, errors, points).
    """
    d = L.shape[0]
    engines = _engines(d, opts)
    acc = _Accumulator(opts.replicates)
    n = opts.initial_points
    total = 0
    while True:
        for r, eng in enumerate(engines):
            u = eng.random(n)
            acc.add(r, n, [v for blk in _sov_pass(L, lo, hi, u, blocks) for v in blk])
        total += n
        per = acc.per_scramble()
        if transform is not None:
            per = np.array([transform(p) for p in per])
        mean = per.mean(axis=0)
        err = 3.0 * per.std(axis=0, ddof=1) / np.sqrt(per.shape[0])
        if converged(mean, err) or total >= opts.max_points:
            return mean, err, total
        n = total  # doubles the running total; keeps Sobol prefixes balanced


def _unpack(flat, sizes):
    """Split a flat block-result vector back into (PA, MA, SA, PB, MB, SB) tuples."""
    out = []
    pos = 0
    for k in sizes:
        parts = []
        for shape in ((), (k,), (k, k), (), (k,), (k, k)):
            cnt = int(np.prod(shape)) if shape else 1
            chunk = flat[pos:pos + cnt]
            parts.append(chunk.reshape(shape) if shape else chunk[0])
            pos += cnt
        out.append(tuple(parts))
    return out


def _check_inputs(g, r):
    if g.dim != r.dim:
        raise DimensionMismatch(f"Gaussian has dimension {g.dim}, rectangle {r.dim}")
    if g.dim < 1:
        raise DimensionMismatch("dimension must be at least 1")


def mvn_rectangle_prob(g: GaussianVector, r: Rectangle, opts: QmcOptions = DEFAULT_OPTIONS
                       ) -> ProbabilityEstimate:
    """P(lower <= x <= upper) for x ~ N(0, cov)."""
    _check_inputs(g, r)
    if np.all(np.isneginf(r.lower)) and np.all(np.isposinf(r.upper)):
        return ProbabilityEstimate(1.0, 0.0)
    L = psd_factor(g.cov)
    d = g.dim
    blocks = [(0, d)]
    sizes = [d]

    def pick(flat):
        return np.array([_unpack(flat, sizes)[0][3]])

    mean, err, _ = _run_adaptive(L, r.lower, r.upper, blocks, opts,
                                 lambda m, e: e[0] <= opts.abs_tol, transform=pick)
    est = ProbabilityEstimate(float(np.clip(mean[0], 0.0, 1.0)), float(err[0]))
    if opts.strict and est.error > opts.abs_tol:
        raise ToleranceNotMet(est.value, est.error, opts.abs_tol)
    return est


def _moment_scale(cov):
    return max(1.0, float(np.max(np.diag(cov)))) if cov.size else 1.0


def _reorder(g, r, which):
    d = g.dim
    which = list(range(d)) if which is None else [int(i) for i in np.atleast_1d(which)]
    if not which or len(set(which)) != len(which) or min(which) < 0 or max(which) >= d:
        raise DimensionMismatch(f"invalid coordinate selection {which}")
    rest = [i for i in range(d) if i not in which]
    perm = np.array(rest + which)
    return perm, len(rest), len(which)


def rect_truncated_moments(g: GaussianVector, r: Rectangle, which=None, method: str = "auto",
                           opts: QmcOptions = DEFAULT_OPTIONS, floor: float = PROB_FLOOR,
                           rejection_samples: int = 10**6) -> TruncatedMoments:
    """Moments of ``x[which]`` conditioned on ``x`` lying in ``r``.

    ``method`` is "qmc", "rejection" or "auto".  In auto mode a QMC result
    that misses its tolerance on a region of mass above 0.05 is compared
    with a rejection-sampling estimate and the one with the smaller
    reported error is returned.
    """
    _check_inputs(g, r)
    if method not in ("auto", "qmc", "rejection"):
        raise ValueError(f"unknown method {method!r}")
    perm, lead, k = _reorder(g, r, which)
    if method == "rejection":
        return _rejection_moments(g, r, perm[lead:], floor, rejection_samples, opts.seed)
    cov = g.cov[np.ix_(perm, perm)]
    lo, hi = r.lower[perm], r.upper[perm]
    L = psd_factor(cov)
    blocks = ([(0, lead)] if lead else []) + [(lead, lead + k)]
    sizes = [e - s for s, e in blocks]
    scale = _moment_scale(cov)

    def cond(flat):
        _, _, _, PB, MB, SB = _unpack(flat, sizes)[-1]
        if PB <= 0.0:
            return np.concatenate([[PB], np.zeros(k), np.zeros(k * k)])
        return np.concatenate([[PB], MB / PB, (SB / PB).ravel()])

    def ok(m, e):
        return e[0] <= opts.abs_tol and np.all(e[1:] * max(m[0], floor) <= opts.moment_tol * scale)

    mean, err, _ = _run_adaptive(L, lo, hi, blocks, opts, ok, transform=cond)
    prob = float(mean[0])
    if prob < floor:
        raise VanishingMass(f"region mass {prob:.3e} below floor {floor:.1e}")
    res = TruncatedMoments(
        prob=prob,
        mean=mean[1:1 + k],
        second_moment=_sym(mean[1 + k:].reshape(k, k)),
        prob_error=float(err[0]),
        mean_error=err[1:1 + k],
        second_moment_error=err[1 + k:].reshape(k, k),
    )
    if r.is_origin_symmetric():
        res = _zero_mean(res)
    if not ok(mean, err):
        if method == "auto" and prob > REJECTION_MASS:
            alt = _rejection_moments(g, r, perm[lead:], floor, rejection_samples, opts.seed)
            if np.max(alt.second_moment_error) < np.max(res.second_moment_error):
                return alt
        if opts.strict:
            raise ToleranceNotMet(res.second_moment, float(np.max(res.second_moment_error)),
                                  opts.moment_tol * scale / max(prob, floor))
    return res


def _sym(S):
    return (S + S.T) / 2


def _zero_mean(res):
    return TruncatedMoments(res.prob, res.second_moment, np.zeros_like(res.mean), res.prob_error,
                            res.second_moment_error, np.zeros_like(res.mean), res.method)


def _rejection_moments(g, r, sel, floor, n_samples, seed):
    rng = np.random.default_rng(seed)
    L = psd_factor(g.cov)
    x = rng.standard_normal((n_samples, g.dim)) @ L.T
    inside = np.all((x >= r.lower) & (x <= r.upper), axis=1)
    cnt = int(inside.sum())
    prob = cnt / n_samples
    if cnt < 2 or prob < floor:
        raise VanishingMass(f"rejection sampling accepted {cnt} of {n_samples} samples")
    z = x[inside][:, sel]
    outer = np.einsum("ni,nj->nij", z, z)
    S = outer.mean(axis=0)
    S_err = 3.0 * outer.std(axis=0, ddof=1) / np.sqrt(cnt)
    mu = z.mean(axis=0)
    mu_err = 3.0 * z.std(axis=0, ddof=1) / np.sqrt(cnt)
    p_err = 3.0 * np.sqrt(prob * (1 - prob) / n_samples)
    res = TruncatedMoments(prob, _sym(S), mu, p_err, S_err, mu_err, method="rejection")
    return _zero_mean(res) if r.is_origin_symmetric() else res


def exterior_truncated_moments(g: GaussianVector, inner_box: Rectangle, outer_box: Rectangle | None,
                               opts: QmcOptions = DEFAULT_OPTIONS, floor: float = PROB_FLOOR
                               ) -> TruncatedMoments:
    """Moments of the last block given leading coordinates in ``outer_box``
    and the last block outside ``inner_box``.

    Uses E[xx'|A-B] = (P(A)M(A) - P(B)M(B)) / (P(A) - P(B)) with
    A = {leading in outer_box} and B = A and {last block in inner_box}.
    Both boxes must be origin-symmetric so that truncated means vanish.
    """
    k = inner_box.dim
    lead = 0 if outer_box is None else outer_box.dim
    if lead + k != g.dim:
        raise DimensionMismatch(f"boxes cover {lead + k} coordinates, Gaussian has {g.dim}")
    if not inner_box.is_origin_symmetric() or (outer_box is not None and not outer_box.is_origin_symmetric()):
        raise ValueError("exterior moments require origin-symmetric boxes")
    lo = inner_box.lower if outer_box is None else np.concatenate([outer_box.lower, inner_box.lower])
    hi = inner_box.upper if outer_box is None else np.concatenate([outer_box.upper, inner_box.upper])
    L = psd_factor(g.cov)
    blocks = ([(0, lead)] if lead else []) + [(lead, lead + k)]
    sizes = [e - s for s, e in blocks]
    scale = _moment_scale(g.cov)

    def diff(flat):
        PA, _, SA, PB, _, SB = _unpack(flat, sizes)[-1]
        return np.concatenate([[PA, PB, PA - PB], (SA - SB).ravel()])

    def ok(m, e):
        return e[2] <= opts.abs_tol and np.all(e[3:] <= opts.moment_tol * scale)

    mean, err, _ = _run_adaptive(L, lo, hi, blocks, opts, ok, transform=diff)
    PA, PB, mass = mean[:3]
    if PA < floor:
        raise VanishingMass(f"outer region mass {PA:.3e} below floor {floor:.1e}")
    if mass < -err[2]:
        raise NegativeMassDifference(f"P(A)={PA:.6g} <= P(B)={PB:.6g}")
    if mass < floor:
        raise VanishingMass(f"exterior mass {mass:.3e} below floor {floor:.1e}")
    D = _sym(mean[3:].reshape(k, k))
    res = TruncatedMoments(
        prob=float(mass),
        second_moment=D / mass,
        mean=np.zeros(k),
        prob_error=float(err[2]),
        second_moment_error=err[3:].reshape(k, k) / mass,
        mean_error=np.zeros(k),
    )
    if opts.strict and not ok(mean, err):
        raise ToleranceNotMet(res.second_moment, float(np.max(res.second_moment_error)), opts.moment_tol)
    return res


def truncation_ladder(cov, block: int, epsilon: float, levels: int,
                      opts: QmcOptions = DEFAULT_OPTIONS) -> TruncationLadder:
    """All nested masses and block moments for ``levels`` blocks in one pass.

    ``cov`` must cover at least ``levels * block`` coordinates; any extra
    trailing coordinates are ignored.
    """
    cov = np.asarray(cov, dtype=float)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if levels < 1 or block < 1:
        raise ValueError("need levels >= 1 and block >= 1")
    d = levels * block
    if cov.shape[0] < d:
        raise DimensionMismatch(f"covariance of size {cov.shape[0]} cannot hold {levels} blocks of {block}")
    cov = cov[:d, :d]
    L = psd_factor(cov)
    lo = np.full(d, -float(epsilon))
    hi = np.full(d, float(epsilon))
    blocks = [(i * block, (i + 1) * block) for i in range(levels)]
    sizes = [block] * levels
    kk = block * block
    scale = _moment_scale(cov)

    def collect(flat):
        parts = _unpack(flat, sizes)
        P = [1.0] + [p[3] for p in parts]
        interior = [p[5].ravel() for p in parts]
        exterior = [(p[2] - p[5]).ravel() for p in parts]
        return np.concatenate([P, np.concatenate(interior), np.concatenate(exterior)])

    def ok(m, e):
        return (np.all(e[:levels + 1] <= opts.abs_tol)
                and np.all(e[levels + 1:] <= opts.moment_tol * scale))

    if not np.isfinite(epsilon):
        mean = _exact_free_ladder(cov, block, levels)
        err, pts = np.zeros_like(mean), 0
    elif epsilon == 0.0:
        mean = np.concatenate([[1.0], np.zeros(levels), np.zeros(levels * kk),
                               cov[:block, :block].ravel(), np.zeros((levels - 1) * kk)])
        err, pts = np.zeros_like(mean), 0
    else:
        mean, err, pts = _run_adaptive(L, lo, hi, blocks, opts, ok, transform=collect)
    if opts.strict and not ok(mean, err):
        raise ToleranceNotMet(mean, float(np.max(err)), opts.abs_tol)
    P = np.clip(mean[:levels + 1], 0.0, 1.0)
    P = np.minimum.accumulate(P)
    interior = mean[levels + 1:levels + 1 + levels * kk].reshape(levels, block, block)
    exterior = mean[levels + 1 + levels * kk:].reshape(levels, block, block)
    e_int = err[levels + 1:levels + 1 + levels * kk].reshape(levels, block, block)
    e_ext = err[levels + 1 + levels * kk:].reshape(levels, block, block)
    return TruncationLadder(
        epsilon=float(epsilon),
        P=P,
        P_err=err[:levels + 1],
        interior=np.array([_sym(S) for S in interior]),
        interior_err=e_int,
        exterior=np.array([_sym(S) for S in exterior]),
        exterior_err=e_ext,
        points=pts,
    )


def _exact_free_ladder(cov, block, levels):
    kk = block * block
    interior = [cov[i * block:(i + 1) * block, i * block:(i + 1) * block].ravel() for i in range(levels)]
    return np.concatenate([np.ones(levels + 1), np.concatenate(interior), np.zeros(levels * kk)])


def xi_covariance(a: float, sigma_w2: float, i: int) -> np.ndarray:
    """Covariance of (xi_0, ..., xi_i) where xi_j = sum_{l<=j} a^(j-l) w_l."""
    if i < 0:
        raise ValueError("index must be nonnegative")
    if sigma_w2 <= 0:
        raise ValueError("sigma_w2 must be positive")
    size = i + 1
    diag = np.array([sigma_w2 * sum(a ** (2 * j) for j in range(p + 1)) for p in range(size)])
    X = np.empty((size, size))
    for p in range(size):
        for q in range(p, size):
            X[p, q] = X[q, p] = a ** (q - p) * diag[p]
    return X


def delta_covariance(sys: LinearSystem, nu: int, i: int) -> np.ndarray:
    """Covariance of the stacked states (delta_0, ..., delta_i).

    delta_0 is the state nu steps after a delivered packet and delta_j the
    open-loop state j steps later.
    """
    if i < 0:
        raise ValueError("index must be nonnegative")
    if nu < 1:
        raise ValueError("nu must be positive")
    A, Sw, n = sys.A, sys.Sigma_w, sys.n
    powers = [np.eye(n)]
    for _ in range(max(i, nu)):
        powers.append(A @ powers[-1])
    sigma_star = sum(powers[l] @ Sw @ powers[l].T for l in range(nu))
    size = (i + 1) * n
    X = np.empty((size, size))
    for p in range(i + 1):
        for q in range(p, i + 1):
            blk = powers[p] @ sigma_star @ powers[q].T
            for j in range(p):
                blk = blk + powers[j] @ Sw @ powers[j + q - p].T
            X[p * n:(p + 1) * n, q * n:(q + 1) * n] = blk
            X[q * n:(q + 1) * n, p * n:(p + 1) * n] = blk.T
    return X
