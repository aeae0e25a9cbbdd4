"""Command line: run experiments, sweep seeds and conditions, compare, plot.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import plot
from .config import CONDITIONS, PRESETS, load_config, parse_config, preset_text
from .errors import ConfigError
from .loop import COLUMNS, MetricsLog, ema_smooth, run_experiment, steps_to_threshold

log = logging.getLogger("gradacl")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
UNREACHED = "unreached"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    config_path: str
    seed: int
    condition: str
    out_dir: str


def build_manifest(config_path, seeds, conditions, out_root):
    entries = [
        ManifestEntry(str(config_path), int(seed), cond, os.path.join(out_root, f"{cond}_seed{seed}"))
        for cond in conditions
        for seed in seeds
    ]
    dirs = [e.out_dir for e in entries]
    if len(set(dirs)) != len(dirs):
        raise UsageError("manifest output directories are not unique")
    return entries


def _run_one(entry: ManifestEntry):
    config = load_config(entry.config_path)
    config = replace(config, seed=entry.seed, condition=entry.condition, out_dir=entry.out_dir)
    run_experiment(config)
    return entry.out_dir


def _parse_seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {text!r}") from None


def cmd_run(args):
    config = load_config(args.config)
    condition = args.condition or config.condition
    if condition not in CONDITIONS:
        raise ConfigError(f"condition must be one of {CONDITIONS}", key="condition")
    seeds = _parse_seeds(args.seeds) if args.seeds else [args.seed if args.seed is not None else config.seed]
    out = args.out or config.out_dir
    if not out:
        raise UsageError("no output directory: pass --out or set out_dir in the config")
    if len(seeds) == 1:
        entries = [ManifestEntry(args.config, seeds[0], condition, out)]
    else:
        entries = [ManifestEntry(args.config, s, condition, os.path.join(out, f"seed{s}")) for s in seeds]
    _execute(entries, args.jobs)
    return EXIT_OK


def cmd_sweep(args):
    load_config(args.config)  # fail fast on config errors
    conditions = [c.strip() for c in args.conditions.split(",") if c.strip()]
    for c in conditions:
        if c not in CONDITIONS:
            raise UsageError(f"unknown condition {c!r}")
    entries = build_manifest(args.config, _parse_seeds(args.seeds), conditions, args.out)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "manifest.csv"), "w", encoding="utf-8") as fh:
        fh.write("config,seed,condition,out_dir\n")
        for e in entries:
            fh.write(f"{e.config_path},{e.seed},{e.condition},{e.out_dir}\n")
    _execute(entries, args.jobs)
    return compare_runs([e.out_dir for e in entries], args.out)


def _execute(entries, jobs):
    if jobs and jobs > 1 and len(entries) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for done in pool.map(_run_one, entries):
                log.info("wrote %s", done)
    else:
        for e in entries:
            log.info("running %s seed=%d -> %s", e.condition, e.seed, e.out_dir)
            _run_one(e)


def _read_run(run_dir):
    path = os.path.join(run_dir, "metrics.csv")
    if not os.path.exists(path):
        raise UsageError(f"{run_dir}: no metrics.csv")
    try:
        mlog = MetricsLog.from_csv(path)
    except ValueError as exc:
        raise UsageError(f"schema mismatch: {exc}") from None
    condition, seed = os.path.basename(os.path.normpath(run_dir)), None
    resolved = os.path.join(run_dir, "config.resolved")
    if os.path.exists(resolved):
        with open(resolved, encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), source=resolved)
        condition, seed = cfg.condition, cfg.seed
    steps, values = mlog.eval_series()
    if not steps:
        raise UsageError(f"{run_dir}: no evaluation rows")
    return {"dir": run_dir, "condition": condition, "seed": seed, "steps": steps, "values": values}


def _label_order(labels):
    known = [c for c in CONDITIONS if c in labels]
    return known + [l for l in dict.fromkeys(labels) if l not in known]


def compare_runs(run_dirs, out_dir, threshold=None, smoothing=0.0):
    """Aggregate eval curves per condition and time-to-threshold per run."""
    if len(run_dirs) < 2:
        raise UsageError("compare needs at least two run directories")
    runs = [_read_run(d) for d in run_dirs]
    order = _label_order([r["condition"] for r in runs])

    lo_step = max(r["steps"][0] for r in runs)
    hi_step = min(r["steps"][-1] for r in runs)
    grid = sorted({s for r in runs for s in r["steps"] if lo_step <= s <= hi_step})
    curves = {}
    for r in runs:
        ys = ema_smooth(r["values"], smoothing) if smoothing else r["values"]
        r["smoothed"] = ys
        curves.setdefault(r["condition"], []).append(np.interp(grid, r["steps"], ys))

    os.makedirs(out_dir, exist_ok=True)
    header = ["env_step"]
    for c in order:
        header += [f"{c}_mean", f"{c}_std", f"{c}_n"]
    lines = [",".join(header)]
    stats = {}
    for c in order:
        mat = np.vstack(curves[c])
        mean = mat.mean(axis=0)
        std = np.where(np.ptp(mat, axis=0) == 0, 0.0, mat.std(axis=0))
        stats[c] = (mean, std, mat.shape[0])
    for i, s in enumerate(grid):
        cells = [str(int(s))]
        for c in order:
            mean, std, n = stats[c]
            cells += [repr(float(mean[i])), repr(float(std[i])), str(n)]
        lines.append(",".join(cells))
    with open(os.path.join(out_dir, "compare.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    if threshold is None:
        best = max(max(r["smoothed"]) for r in runs)
        start = min(r["smoothed"][0] for r in runs)
        threshold = start + 0.9 * (best - start)
    summary = ["run_dir,condition,seed,steps_to_threshold,final_eval,best_eval,threshold"]
    rank = {c: i for i, c in enumerate(order)}
    for r in sorted(runs, key=lambda r: (rank[r["condition"]], r["seed"] if r["seed"] is not None else -1)):
        hit = steps_to_threshold(r["steps"], r["smoothed"], threshold)
        summary.append(",".join([
            r["dir"], r["condition"], "" if r["seed"] is None else str(r["seed"]),
            UNREACHED if hit is None else str(hit),
            repr(float(r["smoothed"][-1])), repr(float(max(r["smoothed"]))), repr(float(threshold)),
        ]))
    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary) + "\n")

    series = [(c, grid, list(stats[c][0])) for c in order[: plot.MAX_SERIES]]
    svg = plot.line_chart(series, "env_step", "eval_return (mean)", "condition comparison")
    with open(os.path.join(out_dir, "compare.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg)
    return EXIT_OK


def cmd_compare(args):
    return compare_runs(args.runs, args.out, args.threshold, args.smoothing)


def cmd_plot(args):
    if args.column not in COLUMNS or args.column == "env_step":
        raise UsageError(f"unknown column {args.column!r}; choose from {', '.join(COLUMNS[1:])}")
    if not 0.0 <= args.lam < 1.0:
        raise UsageError("--lambda must lie in [0, 1)")
    try:
        mlog = MetricsLog.from_csv(args.metrics)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    pts = [(r["env_step"], r[args.column]) for r in mlog.rows if r[args.column] is not None]
    if not pts:
        raise UsageError(f"column {args.column!r} has no values")
    xs = [p[0] for p in pts]
    ys = ema_smooth([p[1] for p in pts], args.lam)
    title = f"{args.column} (lambda={args.lam:g})"
    svg = plot.line_chart([(args.column, xs, ys)], "env_step", args.column, title)
    out = args.out or os.path.splitext(args.metrics)[0] + f"_{args.column}.svg"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return EXIT_OK


def cmd_preset(args):
    sys.stdout.write(preset_text(args.name))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="gradacl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment (or one per seed)")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--seeds", help="comma-separated seeds; each run goes to OUT/seed<N>")
    r.add_argument("--condition", choices=CONDITIONS)
    r.add_argument("--out")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run every (condition, seed) pair, then compare")
    s.add_argument("config")
    s.add_argument("--seeds", default="0")
    s.add_argument("--conditions", default=",".join(CONDITIONS))
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="aggregate eval curves of several runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--out", required=True)
    c.add_argument("--threshold", type=float, help="absolute eval-return threshold")
    c.add_argument("--smoothing", type=float, default=0.0, help="EMA lambda applied before thresholding")
    c.set_defaults(func=cmd_compare)

    pl = sub.add_parser("plot", help="plot one metrics.csv column as SVG")
    pl.add_argument("metrics")
    pl.add_argument("--column", required=True)
    pl.add_argument("--lambda", dest="lam", type=float, default=0.0)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)

    pr = sub.add_parser("preset", help="print a named configuration")
    pr.add_argument("name", choices=sorted(PRESETS))
    pr.set_defaults(func=cmd_preset)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # any failure inside an experiment
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
