"""Experiment drivers: trial execution (serial or process pool), CSV
emission, and the four study kinds (single run, N-sweep, tail study,
constants report).

CSV output is byte-deterministic for a fixed config and seed: floats are
written with repr (shortest round-trip form), rows in fixed trial order,
aggregation independent of worker scheduling.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core import initial_variance, validate_params
from .dynamics import SimulationDiverged, simulate
from .stats import (
    TrajectoryStats,
    constants_report,
    empirical_tail,
    fit_exponential_rate,
    fit_scaling_slope,
)

__all__ = [
    "SCHEMA_LINE",
    "run_simulate",
    "run_sweep",
    "run_tail",
    "run_constants",
    "run_validate",
    "trajectory_columns",
]

SCHEMA_LINE = "# cbm-lab schema v1"

_TAGS = ("x_sys", "y_sys", "x_bar", "y_bar", "x_ref", "y_ref")
_EXTRA_COLUMNS = ("d_x", "d_y", "sup_wvar_x", "sup_wvar_y")


def trajectory_columns() -> list:
    cols = ["trial", "t"]
    for tag in _TAGS:
        cols.extend(f"v{2 * q}_{tag}" for q in (1, 2, 4))
    cols.extend(_EXTRA_COLUMNS)
    return cols


def _fmt(value) -> str:
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: Path, columns, rows, trailing_comments=()) -> Path:
    lines = [SCHEMA_LINE, ",".join(columns)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    lines.extend(trailing_comments)
    path.write_text("\n".join(lines) + "\n")
    return path


def _data_columns(ts: TrajectoryStats) -> list:
    cols = []
    for tag in _TAGS:
        cols.extend(ts.variances[tag][q] for q in (1, 2, 4))
    cols.extend([ts.d_x, ts.d_y, ts.sup_wvar_x, ts.sup_wvar_y])
    return cols


def _trajectory_rows(trial: int, ts: TrajectoryStats):
    data = _data_columns(ts)
    for i, t in enumerate(ts.times):
        yield [trial, t] + [col[i] for col in data]


def _trial_worker(payload):
    cfg, trial = payload
    try:
        return trial, simulate(cfg, trial), None
    except SimulationDiverged as exc:
        return trial, None, str(exc)


def _run_trials(cfg: RunConfig, threads: int):
    """All trials of one config, in trial order.  Returns (stats_by_trial,
    failures) where failures is a list of (trial, message)."""
    payloads = [(cfg, r) for r in range(cfg.trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(_trial_worker, payloads))
    else:
        raw = [_trial_worker(p) for p in payloads]
    raw.sort(key=lambda item: item[0])
    stats = {trial: ts for trial, ts, _ in raw if ts is not None}
    failures = [(trial, msg) for trial, _, msg in raw if msg is not None]
    return stats, failures


def _check_common_grid(stats: dict) -> np.ndarray:
    grids = [ts.times for ts in stats.values()]
    base = grids[0]
    for g in grids[1:]:
        if g.shape != base.shape or not np.allclose(g, base):
            raise RuntimeError("trials disagree on the recording grid")
    return base


def _write_failures(out: Path, failures, n: int) -> list:
    if not failures:
        return []
    path = _write_csv(
        out / "failures.csv",
        ["n", "trial", "message"],
        [[n, trial, msg.replace(",", ";")] for trial, msg in failures],
    )
    return [path]


def run_simulate(cfg: RunConfig, threads: int = 1) -> list:
    """Per-trial trajectory CSVs plus an across-trial summary; prints the
    fitted variance decay rate against the printed q = 1 rate constant."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats, failures = _run_trials(cfg, threads)
    if not stats:
        raise RuntimeError("all trials failed: " + "; ".join(m for _, m in failures))

    written = []
    cols = trajectory_columns()
    for trial, ts in stats.items():
        written.append(_write_csv(out / f"trajectory_{trial}.csv", cols, _trajectory_rows(trial, ts)))
    written.extend(_write_failures(out, failures, cfg.params.n1))

    times = _check_common_grid(stats)
    per_trial = {trial: _data_columns(ts) for trial, ts in stats.items()}
    data_names = cols[2:]
    sum_cols = ["t"]
    for name in data_names:
        sum_cols.extend([f"mean_{name}", f"stderr_{name}"])
    n_trials = len(stats)
    rows = []
    for i, t in enumerate(times):
        row = [t]
        for j in range(len(data_names)):
            values = np.array([per_trial[trial][j][i] for trial in sorted(per_trial)])
            row.append(values.mean())
            row.append(values.std(ddof=1) / np.sqrt(n_trials) if n_trials > 1 else 0.0)
        rows.append(row)
    written.append(_write_csv(out / "summary.csv", sum_cols, rows))

    obj = cfg.resolved_objective()
    report = constants_report(cfg.params, obj.constants, cfg.cutoff.grad_sup)
    mean_v2 = np.mean([per_trial[trial][0] for trial in sorted(per_trial)], axis=0)
    try:
        fit = fit_exponential_rate(times, mean_v2)
        print(
            f"fitted decay rate {fit.rate!r} (r_squared {fit.r_squared!r}) "
            f"vs c_rate_1_q1 {report.c_rate_1[1]!r}"
        )
    except ValueError as exc:
        print(f"decay fit skipped: {exc}")
    return written


def run_sweep(cfg: RunConfig, threads: int = 1, _error_hook=None) -> list:
    """Sup-over-time coupling error per system size, with a log-log fit.

    ``_error_hook(n) -> float`` replaces the simulated error; fit-path test
    hook only.
    """
    ns = cfg.sweep_ns
    if len(ns) < 3:
        raise ValueError("sweep needs >= 3 sizes for the scaling fit")
    if _error_hook is None and cfg.params.n_ref < 16 * max(ns):
        raise ValueError(
            f"params.n_ref must be >= 16 * max(sweep.ns) = {16 * max(ns)} to hold the "
            "reference bias below the swept error"
        )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    written = []
    for n in ns:
        if _error_hook is not None:
            rows.append([n, float(_error_hook(n)), 0.0])
            continue
        cfg_n = dataclasses.replace(cfg, params=dataclasses.replace(cfg.params, n1=n, n2=n))
        stats, failures = _run_trials(cfg_n, threads)
        written.extend(_write_failures(out, failures, n))
        if not stats:
            raise RuntimeError(f"all trials failed at n={n}")
        _check_common_grid(stats)
        order = sorted(stats)
        totals = np.stack([stats[r].d_x + stats[r].d_y for r in order])
        mean_curve = totals.mean(axis=0)
        peak = int(np.argmax(mean_curve))
        sup_error = float(mean_curve[peak])
        at_peak = totals[:, peak]
        stderr = float(at_peak.std(ddof=1) / np.sqrt(len(order))) if len(order) > 1 else 0.0
        rows.append([n, sup_error, stderr])

    fit = fit_scaling_slope(np.array([r[0] for r in rows], dtype=float), np.array([r[1] for r in rows]))
    comment = (
        f"# fit slope={fit.slope!r} intercept={fit.intercept!r} "
        f"r_squared={fit.r_squared!r} n_dropped={fit.n_dropped}"
    )
    written.append(_write_csv(out / "scaling.csv", ["n", "sup_mean_error", "stderr"], rows, [comment]))
    print(f"scaling fit: slope {fit.slope!r} r_squared {fit.r_squared!r}")
    return written


def run_tail(cfg: RunConfig, threads: int = 1) -> list:
    """Empirical exceedance of the weighted sup-variance per system size."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    obj = cfg.resolved_objective()
    kappa = cfg.resolved_kappa(obj)
    var0 = initial_variance(cfg.initial_kind, cfg.params.d1, cfg.params.r_cut, cfg.initial_scale)
    threshold = var0 + cfg.tail_threshold_a

    rows = []
    written = []
    for n in cfg.sweep_ns:
        cfg_n = dataclasses.replace(
            cfg,
            params=dataclasses.replace(cfg.params, n1=n, n2=n),
            tail_kappa=kappa,
        )
        stats, failures = _run_trials(cfg_n, threads)
        written.extend(_write_failures(out, failures, n))
        if not stats:
            raise RuntimeError(f"all trials failed at n={n}")
        sups = np.array([stats[r].sup_wvar_x[-1] for r in sorted(stats)])
        est = empirical_tail(sups, threshold)
        rows.append([n, cfg.tail_threshold_a, kappa, est.p_hat, est.wilson_lo, est.wilson_hi])

    written.append(
        _write_csv(out / "tail.csv", ["n", "a", "kappa", "p_hat", "wilson_lo", "wilson_hi"], rows)
    )
    return written


def run_constants(cfg: RunConfig) -> list:
    """Every explicit constant plus every parameter-condition check."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    obj = cfg.resolved_objective()
    report = constants_report(cfg.params, obj.constants, cfg.cutoff.grad_sup)
    validation = validate_params(cfg.params, obj.constants, cfg.cutoff.grad_sup)
    rows = [[name, value, flag] for name, value, flag in report.rows()]
    # condition rows carry the margin lhs - rhs; positive satisfies the bound
    rows.extend(
        [f"check_{entry.name}", entry.lhs - entry.rhs, entry.passed]
        for entry in validation.conditions
    )
    return [_write_csv(Path(cfg.output_dir) / "constants.csv", ["name", "value", "condition_flag"], rows)]


def run_validate(cfg: RunConfig) -> bool:
    """Print objective condition margins and parameter checks; True if all hold."""
    from .objectives import check_conditions

    obj = cfg.resolved_objective()
    cond = check_conditions(obj, cfg.params.r_cut)
    ok = True
    for margin in cond.margins:
        status = "ok" if margin.violations == 0 else "VIOLATED"
        ok = ok and margin.violations == 0
        print(
            f"objective {margin.name}: {status} "
            f"(worst margin {margin.worst_margin!r}, violations {margin.violations}/{cond.n_samples})"
        )
    validation = validate_params(cfg.params, obj.constants, cfg.cutoff.grad_sup)
    for entry in validation.conditions:
        status = "ok" if entry.passed else "FAILS"
        ok = ok and entry.passed
        print(f"params {entry.name}: {status} (lhs {entry.lhs!r}, rhs {entry.rhs!r})")
    for warning in validation.warnings:
        print(f"warning: {warning}")
    return ok
