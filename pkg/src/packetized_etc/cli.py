"""Batch front-end: sweep the trigger threshold and write a trade-off table.

Configuration is YAML with the sections ``plant``, ``controller``
(optional), ``weights``, ``policy``, ``channel`` and ``experiment``; see
README.md for the schema.  Output is CSV with the columns in ``COLUMNS``,
one row per (p_loss, epsilon) pair, p_loss-major in configuration order.

Exit status: 0 success, 1 invalid configuration, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import yaml

from .errors import ConfigInvalid, EtcError
from .markov import TriggerParams, scalar_ladder, vector_ladder
from .model import (
    CostWeights,
    LinearSystem,
    check_psd,
    spectral_radius,
    synthesize_deadbeat_gain,
    validate_deadbeat_gain,
)
from .performance import analyze, is_scalar_case
from .simulator import SimConfig, simulate

MODES = ("analytic", "simulate", "baseline")
WORKERS_ENV = "ETC_WORKERS"
COLUMNS = (
    "p_loss", "epsilon",
    "attempt_rate_analytic", "success_rate_analytic", "J_analytic",
    "attempt_rate_sim", "attempt_rate_sim_stderr",
    "success_rate_sim", "success_rate_sim_stderr",
    "J_sim", "J_sim_stderr",
    "attempt_rate_analytic_exact", "aborted_sim",
    "attempt_rate_baseline", "attempt_rate_baseline_stderr",
    "success_rate_baseline", "success_rate_baseline_stderr",
    "J_baseline", "J_baseline_stderr", "aborted_baseline",
)


def _tuplify(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tuplify(v) for v in value)
    if isinstance(value, np.ndarray):
        return _tuplify(value.tolist())
    return value


def _listify(value):
    if isinstance(value, tuple):
        return [_listify(v) for v in value]
    return value


@dataclass(frozen=True)
class ExperimentSpec:
    A: tuple
    B: tuple
    Sigma_w: tuple
    Sigma_0: tuple
    Q_x: tuple
    Q_u: tuple
    timeout_T: int
    epsilon_grid: tuple
    p_loss: tuple = (0.0,)
    rho: float = 0.0
    K: tuple | None = None
    nu: int | None = None
    modes: tuple = ("analytic", "simulate")
    output: str | None = None
    seed: int = 0
    replications: int = 10000
    horizon: int = 25001

    def to_mapping(self) -> dict:
        controller = {} if self.K is None else {"K": _listify(self.K), "nu": self.nu}
        out = {
            "plant": {"A": _listify(self.A), "B": _listify(self.B),
                      "Sigma_w": _listify(self.Sigma_w), "Sigma_0": _listify(self.Sigma_0)},
            "weights": {"Q_x": _listify(self.Q_x), "Q_u": _listify(self.Q_u), "rho": self.rho},
            "policy": {"timeout_T": self.timeout_T},
            "channel": {"p_loss": list(self.p_loss)},
            "experiment": {"epsilon_grid": list(self.epsilon_grid), "modes": list(self.modes),
                           "output": self.output, "seed": self.seed,
                           "replications": self.replications, "horizon": self.horizon},
        }
        if controller:
            out["controller"] = controller
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=False)


def _matrix(diag, mapping, section, key, required=True):
    path = f"{section}.{key}"
    if key not in mapping or mapping[key] is None:
        if required:
            diag.append(f"{path}: missing")
        return None
    try:
        arr = np.array(mapping[key], dtype=float)
    except (TypeError, ValueError):
        diag.append(f"{path}: not a numeric matrix")
        return None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if key == "B" else arr.reshape(1, -1)
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        diag.append(f"{path}: must be a finite 2-D matrix")
        return None
    return arr


def _section(diag, raw, name, required=True):
    sec = raw.get(name)
    if sec is None:
        if required:
            diag.append(f"{name}: missing section")
        return {}
    if not isinstance(sec, dict):
        diag.append(f"{name}: must be a mapping")
        return {}
    return sec


def _int(diag, mapping, path, key, default=None, minimum=None):
    val = mapping.get(key, default)
    if val is None:
        diag.append(f"{path}.{key}: missing")
        return None
    if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
        diag.append(f"{path}.{key}: must be an integer")
        return None
    if minimum is not None and val < minimum:
        diag.append(f"{path}.{key}: must be >= {minimum}")
        return None
    return int(val)


def parse_config(raw) -> tuple[ExperimentSpec | None, list[str]]:
    """Build an ExperimentSpec from a parsed YAML mapping.

    Returns the ExperimentSpec (None when the structure is unusable) and every
    diagnostic found; semantic checks that need a complete spec are done
    by ``validate_config``.
    """
    diag: list[str] = []
    if not isinstance(raw, dict):
        return None, ["configuration must be a mapping"]
    plant = _section(diag, raw, "plant")
    weights = _section(diag, raw, "weights")
    policy = _section(diag, raw, "policy")
    channel = _section(diag, raw, "channel", required=False)
    controller = _section(diag, raw, "controller", required=False)
    exp = _section(diag, raw, "experiment")
    unknown = set(raw) - {"plant", "weights", "policy", "channel", "controller", "experiment"}
    diag.extend(f"{k}: unknown section" for k in sorted(unknown))

    mats = {k: _matrix(diag, plant, "plant", k) for k in ("A", "B", "Sigma_w", "Sigma_0")}
    mats.update({k: _matrix(diag, weights, "weights", k) for k in ("Q_x", "Q_u")})
    K = _matrix(diag, controller, "controller", "K", required=False)
    nu = controller.get("nu")
    if K is not None and nu is None:
        diag.append("controller.nu: required when controller.K is given")
    if nu is not None and (isinstance(nu, bool) or not isinstance(nu, int)):
        diag.append("controller.nu: must be an integer")
        nu = None
    rho = weights.get("rho", 0.0)
    if not isinstance(rho, (int, float)) or isinstance(rho, bool):
        diag.append("weights.rho: must be a number")
        rho = None
    T = _int(diag, policy, "policy", "timeout_T")

    p_loss = channel.get("p_loss", 0.0)
    p_loss = list(p_loss) if isinstance(p_loss, (list, tuple)) else [p_loss]
    if not p_loss or not all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in p_loss):
        diag.append("channel.p_loss: must be a number or a non-empty list of numbers")
        p_loss = None

    grid = exp.get("epsilon_grid")
    if not isinstance(grid, (list, tuple)) or not all(
            isinstance(e, (int, float)) and not isinstance(e, bool) for e in grid):
        diag.append("experiment.epsilon_grid: must be a list of numbers")
        grid = None
    modes = exp.get("modes", ["analytic", "simulate"])
    if isinstance(modes, str):
        modes = [m.strip() for m in modes.split(",") if m.strip()]
    if not isinstance(modes, (list, tuple)):
        diag.append("experiment.modes: must be a list")
        modes = None
    output = exp.get("output")
    if output is not None and not isinstance(output, str):
        diag.append("experiment.output: must be a path string")
    seed = _int(diag, exp, "experiment", "seed", default=0, minimum=0)
    reps = _int(diag, exp, "experiment", "replications", default=10000, minimum=1)
    horizon = _int(diag, exp, "experiment", "horizon", default=25001, minimum=1)

    if diag:
        return None, diag
    spec = ExperimentSpec(
        A=_tuplify(mats["A"]), B=_tuplify(mats["B"]), Sigma_w=_tuplify(mats["Sigma_w"]),
        Sigma_0=_tuplify(mats["Sigma_0"]), Q_x=_tuplify(mats["Q_x"]), Q_u=_tuplify(mats["Q_u"]),
        timeout_T=T, epsilon_grid=tuple(float(e) for e in grid),
        p_loss=tuple(float(p) for p in p_loss), rho=float(rho),
        K=None if K is None else _tuplify(K), nu=nu,
        modes=tuple(modes), output=output, seed=seed, replications=reps, horizon=horizon,
    )
    return spec, []


def _build(spec: ExperimentSpec):
    sys_ = LinearSystem(spec.A, spec.B, spec.Sigma_w, spec.Sigma_0)
    if spec.K is None:
        ctrl = synthesize_deadbeat_gain(sys_)
    else:
        ctrl = validate_deadbeat_gain(sys_, spec.K, spec.nu)
    return sys_, ctrl, CostWeights(spec.Q_x, spec.Q_u, spec.rho)


def validate_config(spec: ExperimentSpec) -> list[str]:
    """Every violated precondition of ``run_experiment``, not just the first."""
    diag: list[str] = []
    A, B = np.array(spec.A, dtype=float), np.array(spec.B, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        diag.append(f"plant.A: must be square, got {A.shape}")
    if B.shape[0] != n:
        diag.append(f"plant.B: has {B.shape[0]} rows, A has {n}")
    elif np.linalg.matrix_rank(B) < B.shape[1]:
        diag.append("plant.B: must have full column rank")
    for key in ("Sigma_w", "Sigma_0"):
        M = np.array(getattr(spec, key), dtype=float)
        if M.shape != (n, n):
            diag.append(f"plant.{key}: must be {n}x{n}, got {M.shape}")
            continue
        try:
            check_psd(M, key)
        except ValueError as exc:
            diag.append(f"plant.{key}: {exc}")
    Qx, Qu = np.array(spec.Q_x, dtype=float), np.array(spec.Q_u, dtype=float)
    if Qx.shape != (n, n):
        diag.append(f"weights.Q_x: must be {n}x{n}, got {Qx.shape}")
    if Qu.shape != (B.shape[1], B.shape[1]):
        diag.append(f"weights.Q_u: must be {B.shape[1]}x{B.shape[1]}, got {Qu.shape}")
    if spec.rho < 0:
        diag.append("weights.rho: must be nonnegative")
    if not diag:
        try:
            CostWeights(Qx, Qu, spec.rho)
        except ValueError as exc:
            diag.append(f"weights: {exc}")
        ctrb = np.hstack([np.linalg.matrix_power(A, j) @ B for j in range(n)])
        if np.linalg.matrix_rank(ctrb) < n:
            diag.append("plant: (A, B) is not controllable")
        else:
            try:
                _build(spec)
            except (EtcError, ValueError) as exc:
                diag.append(f"controller: {exc}")
    if spec.timeout_T < 1:
        diag.append("policy.timeout_T: must be >= 1")
    for p in spec.p_loss:
        if not 0.0 <= p < 1.0:
            diag.append(f"channel.p_loss: {p} is outside [0, 1)")
    if not spec.epsilon_grid:
        diag.append("experiment.epsilon_grid: must be non-empty")
    elif any(e < 0 for e in spec.epsilon_grid):
        diag.append("experiment.epsilon_grid: values must be nonnegative")
    elif list(spec.epsilon_grid) != sorted(spec.epsilon_grid):
        diag.append("experiment.epsilon_grid: must be sorted ascending")
    if not spec.modes:
        diag.append("experiment.modes: must name at least one of analytic, simulate, baseline")
    bad = [m for m in spec.modes if m not in MODES]
    if bad:
        diag.append(f"experiment.modes: unknown mode(s) {bad}")
    if "analytic" in spec.modes and A.shape == (n, n):
        rad2 = spectral_radius(A) ** 2
        for p in spec.p_loss:
            if 0.0 < p < 1.0 and p * rad2 >= 1.0:
                diag.append(f"channel.p_loss: p_loss * rho(A)^2 = {p * rad2:.6g} >= 1 "
                            f"(unbounded loss for p_loss={p})")
    if spec.replications < 1:
        diag.append("experiment.replications: must be >= 1")
    if spec.horizon < 1:
        diag.append("experiment.horizon: must be >= 1")
    if not 0 <= spec.seed < 2**64:
        diag.append("experiment.seed: must fit in 64 unsigned bits")
    return diag


def point_seed(seed: int, ip: int, ie: int) -> int:
    """Simulation seed for grid point (ip, ie); independent of worker scheduling."""
    ss = np.random.SeedSequence(seed, spawn_key=(ip, ie))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _evaluate_epsilon(args):
    spec, ie = args
    sys_, ctrl, weights = _build(spec)
    eps = spec.epsilon_grid[ie]
    ladder = None
    rows = []
    for ip, p in enumerate(spec.p_loss):
        trig = TriggerParams(eps, spec.timeout_T, p)
        row = dict.fromkeys(COLUMNS)
        row["p_loss"], row["epsilon"] = p, eps
        if "analytic" in spec.modes:
            if ladder is None:
                ladder = (scalar_ladder(float(sys_.A[0, 0]), float(sys_.Sigma_w[0, 0]), trig)
                          if is_scalar_case(sys_, ctrl) else vector_ladder(sys_, ctrl, trig))
            rep = analyze(sys_, ctrl, weights, trig, ladder=ladder)
            row.update(attempt_rate_analytic=rep.attempt_rate, success_rate_analytic=rep.success_rate,
                       J_analytic=rep.loss.J_inf, attempt_rate_analytic_exact=rep.attempt_rate_exact)
        seed = point_seed(spec.seed, ip, ie)
        for mode, suffix in (("simulate", "sim"), ("baseline", "baseline")):
            if mode not in spec.modes:
                continue
            cfg = SimConfig(sys_, ctrl, weights, trig, horizon=spec.horizon,
                            replications=spec.replications, seed=seed,
                            controller_mode="packetized" if mode == "simulate" else "non_packetized")
            res = simulate(cfg)
            row.update({
                f"attempt_rate_{suffix}": res.attempt_rate.mean,
                f"attempt_rate_{suffix}_stderr": res.attempt_rate.stderr,
                f"success_rate_{suffix}": res.success_rate.mean,
                f"success_rate_{suffix}_stderr": res.success_rate.stderr,
                f"J_{suffix}": res.empirical_loss.mean,
                f"J_{suffix}_stderr": res.empirical_loss.stderr,
                f"aborted_{suffix}": res.aborted,
            })
        rows.append((ip, row))
    return rows


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> list[dict]:
    """Rows for every (p_loss, epsilon) pair, p_loss-major; writes CSV if ``spec.output`` is set.

    Grid points sharing an epsilon share one Gaussian ladder.  Raises
    ConfigInvalid with every diagnostic when ``spec`` does not validate.
    """
    diag = validate_config(spec)
    if diag:
        raise ConfigInvalid(diag)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    tasks = [(spec, ie) for ie in range(len(spec.epsilon_grid))]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_epsilon, tasks))
    else:
        results = [_evaluate_epsilon(t) for t in tasks]
    rows = [None] * (len(spec.p_loss) * len(spec.epsilon_grid))
    for ie, per_eps in enumerate(results):
        for ip, row in per_eps:
            rows[ip * len(spec.epsilon_grid) + ie] = row
    if spec.output:
        write_csv(spec.output, rows)
    return rows


def format_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(COLUMNS)
    for row in rows:
        out.writerow([_fmt(row[c]) for c in COLUMNS])
    return buf.getvalue()


def write_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(rows))


def load_config(path) -> ExperimentSpec:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    spec, diag = parse_config(raw)
    if diag:
        raise ConfigInvalid(diag)
    return spec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="packetized-etc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    an = sub.add_parser("analyze", help="sweep epsilon and write the trade-off CSV")
    an.add_argument("config", help="YAML configuration file")
    an.add_argument("--modes", help="comma-separated subset of analytic,simulate,baseline")
    an.add_argument("--out", help="output CSV path ('-' for stdout)")
    an.add_argument("--seed", type=int)
    an.add_argument("--replications", type=int)
    an.add_argument("--horizon", type=int)
    an.add_argument("--dump-config", action="store_true",
                    help="print the resolved configuration as YAML and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_config(args.config)
    except ConfigInvalid as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return 1
    except (OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    overrides = {}
    if args.modes is not None:
        overrides["modes"] = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    if args.out is not None:
        overrides["output"] = None if args.out == "-" else args.out
    for key in ("seed", "replications", "horizon"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    spec = replace(spec, **overrides)
    if args.dump_config:
        sys.stdout.write(spec.dump())
        return 0
    diag = validate_config(spec)
    if diag:
        for d in diag:
            print(f"config error: {d}", file=sys.stderr)
        return 1
    try:
        rows = run_experiment(spec)
    except ConfigInvalid as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return 1
    except (EtcError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    if not spec.output:
        sys.stdout.write(format_csv(rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
