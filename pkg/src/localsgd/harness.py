"""Experiment protocols on top of the simulator.

The stepsize search walks the grid ``c = 2**i`` until some ``c`` beats its
four neighbours ``c/4, c/2, 2c, 4c``; ties go to the smaller ``c``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import os
import struct
import tempfile
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import RunConfig, build_run
from .simulator import Trace, time_to_target, write_trace_csv

logger = logging.getLogger(__name__)

FAMILIES = ("inverse-t", "constant")
MAX_EXPONENT = 30


class SearchFailure(RuntimeError):
    """No stepsize reached the target; carries every evaluated cell."""

    def __init__(self, message: str, cells: List["GridCell"]):
        super().__init__(message)
        self.cells = cells


@dataclasses.dataclass
class GridCell:
    c: float
    time: Optional[float]
    final_subopt: Optional[float] = None


@dataclasses.dataclass
class GridResult:
    family: str
    cells: List[GridCell]
    chosen: float
    time: float
    neighbors: List[GridCell]

    def certificate_holds(self) -> bool:
        return all(n.time is None or n.time >= self.time for n in self.neighbors)


# -- cells ---------------------------------------------------------------------


def reference_optimum(objective, data, w0=None, gtol: float = 1e-12) -> Tuple[float, np.ndarray]:
    """``(f*, w*)`` by full-batch L-BFGS; meant for convex objectives."""
    from scipy.optimize import minimize

    w0 = np.zeros(objective.d) if w0 is None else np.asarray(w0, dtype=np.float64)
    res = minimize(lambda w: objective.full_loss(w, data), w0,
                   jac=lambda w: objective.gradient(w, None, data), method="L-BFGS-B",
                   options={"maxiter": 10000, "gtol": gtol, "ftol": 1e-15})
    return float(res.fun), res.x



def family_config(template: RunConfig, family: str, c: float) -> RunConfig:
    """``min(cap, c * n / (t + 1))`` or the constant ``cap * c``."""
    if family == "inverse-t":
        return template.replace(lr_kind="inverse-t", lr=c)
    if family == "constant":
        return template.replace(lr_kind="constant", lr=template.lr_cap * c)
    raise ValueError(f"unknown stepsize family {family!r}")


def _run_seed(args) -> Tuple[Optional[float], Optional[float], str]:
    cfg, seed = args
    trace = build_run(cfg).run(seed)
    if cfg.f_star is None:
        raise ValueError("time to target needs f_star")
    t = time_to_target(trace, cfg.f_star, cfg.target_eps)
    return t, trace.last.subopt, trace.status


def aggregate_seeds(results: Sequence[Tuple[Optional[float], Optional[float], str]]):
    """Mean time over seeds that reached the target; absent if any seed diverged."""
    if any(status == "diverged" for _, _, status in results):
        return None, None
    times = [t for t, _, _ in results if t is not None]
    subopts = [s for _, s, _ in results if s is not None]
    final = float(np.mean(subopts)) if subopts else None
    return (float(np.mean(times)) if times else None), final


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def evaluate_config(cfg: RunConfig, seeds: Optional[Sequence[int]] = None, jobs: int = 1):
    seeds = list(seeds or cfg.seeds)
    return aggregate_seeds(_map(_run_seed, [(cfg, s) for s in seeds], jobs))


# -- search --------------------------------------------------------------------


def certified_search(evaluate: Callable[[float], Tuple[Optional[float], Optional[float]]],
                     start: int = 0, family: str = "", max_exponent: int = MAX_EXPONENT) -> GridResult:
    """Search ``c = 2**i`` for a cell no worse than its four neighbours."""
    cells: Dict[int, GridCell] = {}

    def get(i: int) -> GridCell:
        if i not in cells:
            c = 2.0 ** i
            t, sub = evaluate(c)
            cells[i] = GridCell(c, t, sub)
            logger.info("grid %s c=2^%d time=%s", family, i, t)
        return cells[i]

    def table():
        return [cells[i] for i in sorted(cells)]

    for i in range(start - 2, start + 3):
        get(i)
    while True:
        finite = {i: c.time for i, c in cells.items() if c.time is not None}
        if not finite:
            lo, hi = min(cells) - 1, max(cells) + 1
            if lo < -max_exponent and hi > max_exponent:
                raise SearchFailure(f"no stepsize in 2^[{-max_exponent}, {max_exponent}] reached the target",
                                    table())
            if lo >= -max_exponent:
                get(lo)
            if hi <= max_exponent:
                get(hi)
            continue
        best = min(finite, key=lambda i: (finite[i], i))
        around = [best - 2, best - 1, best + 1, best + 2]
        missing = [j for j in around if j not in cells]
        if not missing:
            return GridResult(family, table(), cells[best].c, finite[best], [cells[j] for j in around])
        if any(abs(j) > max_exponent for j in missing):
            # a flat response keeps pulling the tie rule outward; settle for the
            # smallest best cell whose neighbours are all evaluated
            for i in sorted(i for i, t in finite.items() if t == finite[best]):
                around = [i - 2, i - 1, i + 1, i + 2]
                if all(j in cells for j in around):
                    return GridResult(family, table(), cells[i].c, finite[i], [cells[j] for j in around])
            raise SearchFailure("grid limit reached before the optimum was certified", table())
        for j in missing:
            get(j)


def grid_search_stepsize(template: RunConfig, family: str = "both", jobs: int = 1) -> GridResult:
    """Best stepsize per family (or the better of both families)."""
    families = FAMILIES if family == "both" else (family,)
    if template.f_star is None:
        raise ValueError("grid search needs f_star in the template")
    results = []
    failures = []
    for fam in families:
        def evaluate(c, fam=fam):
            return evaluate_config(family_config(template, fam, c), jobs=jobs)
        try:
            results.append(certified_search(evaluate, template.grid_start, fam))
        except SearchFailure as exc:
            failures.append(exc)
    if not results:
        raise SearchFailure("no family converged", [c for f in failures for c in f.cells])
    return min(results, key=lambda r: r.time)


# -- sweeps and speedups -------------------------------------------------------


@dataclasses.dataclass
class SweepRow:
    K: int
    H: int
    time: Optional[float]
    speedup: Optional[float]
    c: Optional[float] = None


def compute_speedup(baseline, candidate, f_star: Optional[float] = None,
                    eps: Optional[float] = None) -> Optional[float]:
    """``baseline time / candidate time``; accepts traces or precomputed times."""
    def as_time(x):
        if isinstance(x, Trace):
            if f_star is None or eps is None:
                raise ValueError("traces need f_star and eps")
            return time_to_target(x, f_star, eps)
        return x

    b, c = as_time(baseline), as_time(candidate)
    if b is None or c is None:
        return None
    if c == 0:
        return float("inf") if b > 0 else 1.0
    return b / c


def run_speedup_sweep(base: RunConfig, K_list: Sequence[int], H_list: Sequence[int],
                      baseline_time: Optional[float] = None, tune: Optional[str] = None,
                      jobs: int = 1) -> List[SweepRow]:
    """Time to target for every ``(K, H)`` and its speedup over ``K = 1, H = 1``.

    ``tune`` names a stepsize family to grid-search per cell ("both" for
    both); otherwise the template stepsize is used.
    """
    cells = sorted({(int(K), int(H)) for K in K_list for H in H_list})
    if baseline_time is None and (1, 1) not in cells:
        raise ValueError("sweep needs the K=1, H=1 baseline or an explicit baseline_time")
    times: Dict[Tuple[int, int], Tuple[Optional[float], Optional[float]]] = {}
    for K, H in cells:
        cfg = base.replace(K=K, H=H)
        if tune:
            try:
                res = grid_search_stepsize(cfg, tune, jobs=jobs)
                times[K, H] = (res.time, res.chosen)
            except SearchFailure:
                times[K, H] = (None, None)
        else:
            times[K, H] = (evaluate_config(cfg, jobs=jobs)[0], None)
    if baseline_time is None:
        baseline_time = times[1, 1][0]
    return [SweepRow(K, H, t, compute_speedup(baseline_time, t), c) for (K, H), (t, c) in sorted(times.items())]


# -- output --------------------------------------------------------------------


def _atomic_write(path: str, writer: Callable[[io.TextIOBase], None], mode: str = "w"):
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, mode, **({"newline": "", "encoding": "utf-8"} if "b" not in mode else {})) as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        if isinstance(exc, OSError):
            raise OSError(f"cannot write {path}: {exc}") from exc
        raise


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def table_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def emit_csv(obj, path: str):
    """Write a trace, list of traces, or ``(header, rows)`` table atomically."""
    if isinstance(obj, Trace):
        obj = [obj]
    if isinstance(obj, list) and all(isinstance(t, Trace) for t in obj):
        _atomic_write(path, lambda fh: write_trace_csv(fh, obj))
        return
    header, rows = obj
    text = table_to_csv(header, rows)
    _atomic_write(path, lambda fh: fh.write(text))


def grid_table(result: GridResult):
    return ("family", "c", "time_to_target", "final_subopt", "chosen"), [
        (result.family, cell.c, cell.time, cell.final_subopt, int(cell.c == result.chosen))
        for cell in result.cells
    ]


def sweep_table(rows: Sequence[SweepRow]):
    return ("K", "H", "time_to_target", "speedup", "c"), [(r.K, r.H, r.time, r.speedup, r.c) for r in rows]


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(w: np.ndarray, path: str):
    """Little-endian uint64 dimension followed by float64 values."""
    w = np.ascontiguousarray(w, dtype="<f8")
    payload = struct.pack("<Q", len(w)) + w.tobytes()
    _atomic_write(path, lambda fh: fh.write(payload), mode="wb")


def load_checkpoint(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint header")
    (d,) = struct.unpack("<Q", raw[:8])
    if len(raw) != 8 + 8 * d:
        raise ValueError(f"{path}: expected {d} values, file has {(len(raw) - 8) / 8:g}")
    return np.frombuffer(raw[8:], dtype="<f8").astype(np.float64)
