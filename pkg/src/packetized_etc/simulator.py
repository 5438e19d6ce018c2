"""Monte Carlo simulation of the closed loop.

Per step k, with the controller active (empty buffer):

* attempt if a retry is pending, |x|_inf > eps, or the quiet-step counter
  has reached T;
* a delivered packet applies K x now and buffers K Ac^j x, j = 1..nu-1,
  resets the counter and silences the controller until the buffer drains;
* a dropped packet applies u = 0 and schedules a retry with a fresh
  packet at the next step; the counter is frozen meanwhile;
* no attempt: u = 0 and the counter advances.

While the buffer holds commands the actuator pops one per step and the
controller neither observes nor counts.  Every replication starts active
with counter 0 and x_0 ~ N(0, Sigma_0).

The non-packetized baseline applies u = K x on each delivered attempt,
has no buffer and no forced retry; its counter resets only on delivery.

Noise for replication r comes from ``SeedSequence(seed).spawn(R)[r]``,
so results do not depend on how replications are scheduled.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numba
import numpy as np

from .gaussian import psd_factor
from .markov import TriggerParams
from .model import CostWeights, DeadBeatController, LinearSystem

OVERFLOW_BOUND = 1e150
MODES = ("packetized", "non_packetized")


@dataclass(frozen=True, eq=False)
class SimConfig:
    sys: LinearSystem
    ctrl: DeadBeatController
    weights: CostWeights
    trig: TriggerParams
    horizon: int = 25001
    replications: int = 10000
    seed: int = 0
    controller_mode: str = "packetized"
    keep_runs: bool = False

    def __post_init__(self):
        if self.horizon < 1 or self.replications < 1:
            raise ValueError("horizon and replications must be positive")
        if self.controller_mode not in MODES:
            raise ValueError(f"controller_mode must be one of {MODES}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float

    def ci(self, z: float = 2.5758293035489004) -> tuple[float, float]:
        """Normal-approximation interval; the default z gives 99 %."""
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def contains(self, value: float, z: float = 2.5758293035489004) -> bool:
        lo, hi = self.ci(z)
        return lo <= value <= hi


@dataclass(frozen=True, eq=False)
class SimResult:
    success_rate: Estimate
    attempt_rate: Estimate
    empirical_loss: Estimate
    drop_fraction: Estimate
    attempts: int
    drops: int
    aborted: int
    runs: dict | None = field(default=None)


@numba.njit(cache=True)
def _packetized_run(A, B, K, Ac, Qx, Qu, rho, nu, eps, T, p_loss, x0, W, U, bound):
    n = A.shape[0]
    m = B.shape[1]
    H = W.shape[0]
    x = x0.copy()
    xn = np.empty(n)
    u = np.zeros(m)
    z = np.empty(n)
    zn = np.empty(n)
    buf = np.zeros((max(nu - 1, 1), m))
    buf_len = 0
    buf_pos = 0
    count = 0
    retry = False
    cost = 0.0
    attempts = 0
    successes = 0
    drops = 0
    for k in range(H):
        if buf_pos < buf_len:
            for r in range(m):
                u[r] = buf[buf_pos, r]
            buf_pos += 1
        else:
            norm = 0.0
            for i in range(n):
                if abs(x[i]) > norm:
                    norm = abs(x[i])
            if retry or norm > eps or count >= T:
                attempts += 1
                if U[k] < p_loss:
                    drops += 1
                    retry = True
                    for r in range(m):
                        u[r] = 0.0
                else:
                    successes += 1
                    retry = False
                    count = 0
                    for r in range(m):
                        s = 0.0
                        for i in range(n):
                            s += K[r, i] * x[i]
                        u[r] = s
                    for i in range(n):
                        s = 0.0
                        for j in range(n):
                            s += Ac[i, j] * x[j]
                        z[i] = s
                    for j in range(nu - 1):
                        for r in range(m):
                            s = 0.0
                            for i in range(n):
                                s += K[r, i] * z[i]
                            buf[j, r] = s
                        for i in range(n):
                            s = 0.0
                            for l in range(n):
                                s += Ac[i, l] * z[l]
                            zn[i] = s
                        for i in range(n):
                            z[i] = zn[i]
                    buf_len = nu - 1
                    buf_pos = 0
            else:
                count += 1
                for r in range(m):
                    u[r] = 0.0
        stage = 0.0
        for i in range(n):
            for j in range(n):
                stage += x[i] * Qx[i, j] * x[j]
        if rho != 0.0:
            su = 0.0
            for r in range(m):
                for t in range(m):
                    su += u[r] * Qu[r, t] * u[t]
            stage += rho * su
        cost += stage
        bad = False
        for i in range(n):
            s = W[k, i]
            for j in range(n):
                s += A[i, j] * x[j]
            for r in range(m):
                s += B[i, r] * u[r]
            xn[i] = s
            if not (abs(s) <= bound):
                bad = True
        if bad:
            return cost / H, attempts, successes, drops, True
        for i in range(n):
            x[i] = xn[i]
    return cost / H, attempts, successes, drops, False


@numba.njit(cache=True)
def _baseline_run(A, B, K, Qx, Qu, rho, eps, T, p_loss, x0, W, U, bound):
    n = A.shape[0]
    m = B.shape[1]
    H = W.shape[0]
    x = x0.copy()
    xn = np.empty(n)
    u = np.zeros(m)
    count = 0
    cost = 0.0
    attempts = 0
    successes = 0
    drops = 0
    for k in range(H):
        norm = 0.0
        for i in range(n):
            if abs(x[i]) > norm:
                norm = abs(x[i])
        for r in range(m):
            u[r] = 0.0
        if norm > eps or count >= T:
            attempts += 1
            if U[k] < p_loss:
                drops += 1
                count += 1
            else:
                successes += 1
                count = 0
                for r in range(m):
                    s = 0.0
                    for i in range(n):
                        s += K[r, i] * x[i]
                    u[r] = s
        else:
            count += 1
        stage = 0.0
        for i in range(n):
            for j in range(n):
                stage += x[i] * Qx[i, j] * x[j]
        if rho != 0.0:
            su = 0.0
            for r in range(m):
                for t in range(m):
                    su += u[r] * Qu[r, t] * u[t]
            stage += rho * su
        cost += stage
        bad = False
        for i in range(n):
            s = W[k, i]
            for j in range(n):
                s += A[i, j] * x[j]
            for r in range(m):
                s += B[i, r] * u[r]
            xn[i] = s
            if not (abs(s) <= bound):
                bad = True
        if bad:
            return cost / H, attempts, successes, drops, True
        for i in range(n):
            x[i] = xn[i]
    return cost / H, attempts, successes, drops, False


def replication_noise(cfg: SimConfig, r: int):
    """(x0, W, U) for replication ``r``: initial state, process noise, channel uniforms."""
    child = np.random.SeedSequence(int(cfg.seed)).spawn(cfg.replications)[r]
    return _noise_from(cfg, np.random.default_rng(child))


def _noise_from(cfg, rng):
    n = cfg.sys.n
    x0 = psd_factor(cfg.sys.Sigma_0) @ rng.standard_normal(n)
    W = rng.standard_normal((cfg.horizon, n)) @ psd_factor(cfg.sys.Sigma_w).T
    U = rng.random(cfg.horizon)
    return x0, np.ascontiguousarray(W), U


def _estimate(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return Estimate(float("nan"), float("nan"))
    se = values.std(ddof=1) / np.sqrt(values.size) if values.size > 1 else float("inf")
    return Estimate(float(values.mean()), float(se))


def _run(cfg: SimConfig, mode: str) -> SimResult:
    sys, ctrl, w, trig = cfg.sys, cfg.ctrl, cfg.weights, cfg.trig
    A = np.ascontiguousarray(sys.A)
    B = np.ascontiguousarray(sys.B)
    K = np.ascontiguousarray(ctrl.K)
    Ac = np.ascontiguousarray(ctrl.Ac)
    Qx = np.ascontiguousarray(w.Q_x)
    Qu = np.ascontiguousarray(w.Q_u)
    R, H = cfg.replications, cfg.horizon
    children = np.random.SeedSequence(int(cfg.seed)).spawn(R)
    loss = np.empty(R)
    att = np.empty(R, dtype=np.int64)
    suc = np.empty(R, dtype=np.int64)
    drp = np.empty(R, dtype=np.int64)
    ok = np.ones(R, dtype=bool)
    for r in range(R):
        x0, W, U = _noise_from(cfg, np.random.default_rng(children[r]))
        if mode == "packetized":
            out = _packetized_run(A, B, K, Ac, Qx, Qu, w.rho, ctrl.nu, trig.epsilon, trig.timeout_T,
                                  trig.p_loss, x0, W, U, OVERFLOW_BOUND)
        else:
            out = _baseline_run(A, B, K, Qx, Qu, w.rho, trig.epsilon, trig.timeout_T,
                                trig.p_loss, x0, W, U, OVERFLOW_BOUND)
        loss[r], att[r], suc[r], drp[r], aborted = out
        ok[r] = not aborted
    keep = ok
    attempts = int(att[keep].sum())
    drops = int(drp[keep].sum())
    # Drop indicator per attempt, pooled; i.i.d. Bernoulli so the binomial stderr applies.
    frac = drops / attempts if attempts else float("nan")
    frac_se = np.sqrt(frac * (1 - frac) / attempts) if attempts else float("nan")
    runs = None
    if cfg.keep_runs:
        runs = {"loss": loss, "attempts": att, "successes": suc, "drops": drp, "completed": ok}
    return SimResult(
        success_rate=_estimate(suc[keep] / H),
        attempt_rate=_estimate(att[keep] / H),
        empirical_loss=_estimate(loss[keep]),
        drop_fraction=Estimate(float(frac), float(frac_se)),
        attempts=attempts,
        drops=drops,
        aborted=int((~ok).sum()),
        runs=runs,
    )


def simulate(cfg: SimConfig) -> SimResult:
    """Simulate ``cfg.replications`` independent runs and aggregate them.

    Replications whose state leaves [-1e150, 1e150] (or turns non-finite)
    are aborted, left out of the averages and counted in ``aborted``.
    """
    return _run(cfg, cfg.controller_mode)


def simulate_nonpacketized(cfg: SimConfig) -> SimResult:
    if cfg.controller_mode != "non_packetized":
        raise ValueError("simulate_nonpacketized needs controller_mode='non_packetized'")
    return _run(cfg, "non_packetized")


TRACE_FLAGS = ("triggered", "attempted", "dropped", "delivered", "timeout")


def trace(cfg: SimConfig, replication: int = 0) -> list[dict]:
    """Step-by-step record of one replication, computed without the compiled kernels.

    Each record holds ``step``, ``x`` (state at the start of the step),
    ``u``, ``source`` (one of "fresh", "buffer", "zero"), ``buffer_len``
    (commands left after the step), ``stage_cost`` and the event flags
    in ``TRACE_FLAGS``.
    """
    sys, ctrl, w, trig = cfg.sys, cfg.ctrl, cfg.weights, cfg.trig
    x0, W, U = replication_noise(cfg, replication)
    packetized = cfg.controller_mode == "packetized"
    x = x0.copy()
    buffer: list[np.ndarray] = []
    count, retry = 0, False
    records = []
    for k in range(cfg.horizon):
        flags = dict.fromkeys(TRACE_FLAGS, False)
        u = np.zeros(sys.m)
        source = "zero"
        if packetized and buffer:
            u = buffer.pop(0)
            source = "buffer"
        else:
            flags["triggered"] = bool(np.max(np.abs(x)) > trig.epsilon)
            flags["timeout"] = count >= trig.timeout_T
            if (retry and packetized) or flags["triggered"] or flags["timeout"]:
                flags["attempted"] = True
                if U[k] < trig.p_loss:
                    flags["dropped"] = True
                    retry = True
                    if not packetized:
                        count += 1
                else:
                    flags["delivered"] = True
                    retry = False
                    count = 0
                    u = ctrl.K @ x
                    source = "fresh"
                    if packetized:
                        z = ctrl.Ac @ x
                        for _ in range(ctrl.nu - 1):
                            buffer.append(ctrl.K @ z)
                            z = ctrl.Ac @ z
            else:
                count += 1
        stage = float(x @ w.Q_x @ x + w.rho * u @ w.Q_u @ u)
        records.append({"step": k, "x": x.copy(), "u": u.copy(), "source": source,
                        "buffer_len": len(buffer), "stage_cost": stage, **flags})
        x = sys.A @ x + sys.B @ u + W[k]
    return records


def write_trace_csv(path, records: list[dict]) -> None:
    """Header: step, x0..x{n-1}, u0..u{m-1}, source, triggered, attempted, dropped, delivered, timeout."""
    if not records:
        raise ValueError("no records to write")
    n, m = len(records[0]["x"]), len(records[0]["u"])
    header = (["step"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
              + ["source"] + list(TRACE_FLAGS))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for rec in records:
            out.writerow([rec["step"]] + [repr(float(v)) for v in rec["x"]]
                         + [repr(float(v)) for v in rec["u"]] + [rec["source"]]
                         + [int(rec[f]) for f in TRACE_FLAGS])
