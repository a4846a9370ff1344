"""Command-line entry point: ``run``, ``batch`` and ``compare``.

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 when at least one batch trial failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .baseline_compare import CSV_COLUMNS, compare, summarize
from .core import PLANNERS, ConfigError, ScenarioConfig, load_config, validate_config
from .simulator import METRIC_FIELDS, StepMetrics, run

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_TRIAL_FAILED = 3

# Wall-clock planner time breaks byte-determinism, so it lives in timing.csv.
METRICS_COLUMNS = tuple(f for f in METRIC_FIELDS if f != "planner_time")
TIMING_COLUMNS = ("step", "planner_time")
AGGREGATE_METRICS = tuple(f for f in METRICS_COLUMNS if f not in ("step", "filter_status"))


def fmt(value) -> str:
    """Fixed 9-significant-digit rendering for floats; other values verbatim."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".9g")
    return str(value)


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_json(path: Path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def summarize_run(rows: list[StepMetrics], cfg: ScenarioConfig) -> dict:
    """Final traces, worst-case safety margins and violation counts."""
    last = rows[-1]
    l2 = [r.lambda2_est for r in rows if not math.isnan(r.lambda2_est)]
    dist = [r.min_dist_est for r in rows]
    conn_viol = sum(1 for v in l2 if v < cfg.eps_conn)
    coll_viol = sum(1 for v in dist if v < cfg.d_min)
    return {
        "steps": last.step,
        "final_trace_loc": float(fmt(last.trace_loc)),
        "final_trace_track": float(fmt(last.trace_track)),
        "final_sq_err_loc": float(fmt(last.sq_err_loc)),
        "final_sq_err_track": float(fmt(last.sq_err_track)),
        "min_lambda2_est": _json_safe(float(fmt(min(l2)))) if l2 else None,
        "min_dist_est": _json_safe(float(fmt(min(dist)))),
        "connectivity_violations": conn_viol,
        "collision_violations": coll_viol,
        "violations": conn_viol + coll_viol,
        "fallback_steps": sum(1 for r in rows if r.filter_status == "infeasible_fallback"),
    }


def write_run(out: Path, rows: list[StepMetrics], cfg: ScenarioConfig, prefix: str = "") -> None:
    write_csv(out / f"{prefix}metrics.csv", METRICS_COLUMNS,
              ([getattr(r, f) for f in METRICS_COLUMNS] for r in rows))
    write_csv(out / f"{prefix}timing.csv", TIMING_COLUMNS, ((r.step, r.planner_time) for r in rows))
    write_json(out / f"{prefix}summary.json", summarize_run(rows, cfg))


def aggregate_rows(runs: list[list[StepMetrics]]):
    """Per-step mean and population std of every numeric metric across runs."""
    header = ["step", "trials"]
    for m in AGGREGATE_METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    out = []
    for k in range(min(len(r) for r in runs)):
        row = [runs[0][k].step, len(runs)]
        for m in AGGREGATE_METRICS:
            vals = np.array([getattr(r[k], m) for r in runs], dtype=float)
            row += [float(vals.mean()), float(vals.std())]
        out.append(row)
    return header, out


def _load(args) -> ScenarioConfig:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.config}: {exc}") from exc
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "planner", None) is not None:
        changes["planner"] = args.planner
    if getattr(args, "budget", None) is not None:
        changes["planner_budget"] = args.budget
    return validate_config(dataclasses.replace(cfg, **changes))


def _runtime_error(exc: Exception) -> int:
    print(f"error: {exc}", file=sys.stderr)
    return EXIT_RUNTIME


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = run(cfg)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        return _runtime_error(exc)
    write_run(out, rows, cfg)
    return EXIT_OK


def cmd_batch(args) -> int:
    if args.trials < 1:
        raise ConfigError("trials must be >= 1")
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configs = [dataclasses.replace(cfg, seed=cfg.seed + t) for t in range(args.trials)]

    def attempt(c):
        try:
            return run(c), None
        except Exception as exc:  # noqa: BLE001 - recorded per trial
            return None, exc

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = list(pool.map(attempt, configs))
    good = []
    failed = []
    for t, (rows, exc) in enumerate(results):
        if exc is not None:
            print(f"trial {t} (seed {configs[t].seed}) failed: {exc}", file=sys.stderr)
            failed.append({"trial": t, "seed": configs[t].seed, "error": str(exc)})
            continue
        write_run(out, rows, configs[t], prefix=f"trial_{t:03d}_")
        good.append(rows)
    if good:
        header, agg = aggregate_rows(good)
        write_csv(out / "aggregate.csv", header, agg)
    write_json(out / "batch.json", {"trials": args.trials, "succeeded": len(good), "failed": failed})
    return EXIT_TRIAL_FAILED if failed else EXIT_OK


def cmd_compare(args) -> int:
    if args.trials < 1 or not args.n or any(n < 1 for n in args.n):
        raise ConfigError("compare needs trials >= 1 and every n >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = compare(args.n, args.trials, args.budget)
    except Exception as exc:  # noqa: BLE001
        return _runtime_error(exc)
    write_csv(out / "compare.csv", CSV_COLUMNS, ((r.n, r.trial, r.method, r.trace, r.seconds) for r in rows))
    write_json(out / "compare_summary.json", summarize(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointtrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one closed-loop scenario")
    p_batch = sub.add_parser("batch", help="simulate consecutive seeds and aggregate")
    for p in (p_run, p_batch):
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--planner", choices=PLANNERS, help="override the config planner")
        p.add_argument("--budget", type=int, help="oracle budget for the continuous planner")
    p_run.set_defaults(func=cmd_run)
    p_batch.add_argument("--trials", type=int, default=30)
    p_batch.add_argument("--workers", type=int, default=1, help="worker threads")
    p_batch.set_defaults(func=cmd_batch)

    p_cmp = sub.add_parser("compare", help="single-step planner benchmark")
    p_cmp.add_argument("--n", type=int, nargs="+", default=[2, 4, 6, 8], help="team sizes (robots = targets)")
    p_cmp.add_argument("--trials", type=int, default=30)
    p_cmp.add_argument("--budget", type=int, default=100, help="continuous evaluations per control dimension")
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
