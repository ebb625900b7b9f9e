"""Command line entry point: ``localsgd run|grid|sweep|diag``.

Exit codes: 0 success, 2 configuration error, 3 stepsize search failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from . import harness
from .config import ConfigError, RunConfig, build_run, load_config
from .diagnostics import default_grid, interpolate_models, top_k_eigenvalues

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SEARCH = 3

logger = logging.getLogger("localsgd")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(args.set or [])


def _echo_config(cfg: RunConfig, out: str):
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())


def cmd_run(args) -> int:
    cfg = _resolve(args)
    run = build_run(cfg)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    seeds = list(cfg.seeds) if args.all_seeds else [cfg.seed]
    traces = []
    for seed in seeds:
        trace = run.run(seed)
        if len(seeds) > 1:
            trace.run_id = f"{cfg.run_id}-s{seed}"
        traces.append(trace)
        suffix = f"-s{seed}" if len(seeds) > 1 else ""
        harness.save_checkpoint(trace.final_params, os.path.join(args.out, f"final{suffix}.ckpt"))
        if trace.average_params is not None:
            harness.save_checkpoint(trace.average_params, os.path.join(args.out, f"average{suffix}.ckpt"))
        last = trace.last
        print(f"{trace.run_id}: {trace.status} rounds={last.round} samples={last.samples} "
              f"clock={last.clock:g} loss={last.train_loss:.6g}")
    harness.emit_csv(traces, os.path.join(args.out, "trace.csv"))
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _resolve(args)
    build_run(cfg)  # validate before the search starts
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    try:
        result = harness.grid_search_stepsize(cfg, args.family, jobs=args.jobs)
    except harness.SearchFailure as exc:
        table = ("family", "c", "time_to_target", "final_subopt", "chosen"), [
            ("", cell.c, cell.time, cell.final_subopt, 0) for cell in exc.cells]
        harness.emit_csv(table, os.path.join(args.out, "grid.csv"))
        print(f"search failed: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    harness.emit_csv(harness.grid_table(result), os.path.join(args.out, "grid.csv"))
    print(f"family={result.family} c={result.chosen:g} time={result.time:g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    build_run(cfg)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    try:
        rows = harness.run_speedup_sweep(cfg, args.K, args.H, baseline_time=args.baseline_time,
                                         tune=args.tune, jobs=args.jobs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    harness.emit_csv(harness.sweep_table(rows), os.path.join(args.out, "sweep.csv"))
    for r in rows:
        print(f"K={r.K} H={r.H} time={r.time} speedup={r.speedup}")
    return EXIT_OK


def cmd_diag(args) -> int:
    cfg = _resolve(args)
    run = build_run(cfg)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    w_a = _load_params(args.checkpoint, run.objective.d)
    if args.kind == "spectrum":
        res = top_k_eigenvalues(run.objective, w_a, run.data, args.k, args.tol, args.max_iters, cfg.seed)
        rows = [(i + 1, float(v), int(ok)) for i, (v, ok) in enumerate(zip(res.eigenvalues, res.converged))]
        harness.emit_csv((("rank", "eigenvalue", "converged"), rows), os.path.join(args.out, "spectrum.csv"))
        for rank, v, ok in rows:
            print(f"lambda_{rank} = {v:.10g}{'' if ok else ' (not converged)'}")
        return EXIT_OK
    if args.checkpoint_b is None:
        raise ConfigError("interpolate needs --checkpoint-b")
    w_b = _load_params(args.checkpoint_b, run.objective.d)
    grid = default_grid(args.lo, args.hi, args.points)
    points = interpolate_models(w_a, w_b, grid, run.objective, run.data, run.eval_data)
    rows = [(p.lam, p.train_loss, p.eval_loss) for p in points]
    harness.emit_csv((("lambda", "train_loss", "eval_loss"), rows), os.path.join(args.out, "interpolate.csv"))
    return EXIT_OK


def _load_params(path: str, d: int):
    try:
        w = harness.load_checkpoint(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"bad checkpoint: {exc}") from exc
    if len(w) != d:
        raise ConfigError(f"checkpoint {path} has dimension {len(w)}, objective expects {d}")
    return w


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="localsgd", description="Local SGD training simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", default="out", help="output directory (default: out)")

    sp = sub.add_parser("run", help="simulate one run and write its trace")
    common(sp)
    sp.add_argument("--all-seeds", action="store_true", help="run every seed in `seeds`")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("grid", help="certified stepsize grid search")
    common(sp)
    sp.add_argument("--family", choices=("inverse-t", "constant", "both"), default="both")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("sweep", help="time to target and speedup over K and H")
    common(sp)
    sp.add_argument("--K", type=int, nargs="+", required=True)
    sp.add_argument("--H", type=int, nargs="+", required=True)
    sp.add_argument("--baseline-time", type=float)
    sp.add_argument("--tune", choices=("inverse-t", "constant", "both"),
                    help="grid-search the stepsize per cell")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("diag", help="Hessian spectrum or model interpolation")
    sp.add_argument("kind", choices=("spectrum", "interpolate"))
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--checkpoint-b")
    sp.add_argument("--k", type=int, default=1, help="number of eigenvalues")
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--max-iters", type=int, default=1000)
    sp.add_argument("--lo", type=float, default=-0.5)
    sp.add_argument("--hi", type=float, default=1.5)
    sp.add_argument("--points", type=int, default=41)
    sp.set_defaults(func=cmd_diag)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
