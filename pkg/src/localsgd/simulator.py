"""Lockstep training simulation under a discrete compute/communication clock.

Time is counted in gradient units: a local step costs the largest worker
batch times ``t_grad`` (workers run in parallel) and every synchronization
adds its communication cost. Nothing here measures wall-clock time.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from typing import Callable, Dict, List, Optional

import numpy as np

from .objectives import Objective
from .optim import HSchedule, IterateAverage, LrSchedule, local_steps_at, lr_at
from .sync import Cluster, SyncPlan, hierarchical_round, local_sgd_round

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("run_id", "round", "step", "samples", "grad_evals", "global_syncs",
                 "block_syncs", "clock", "train_loss", "subopt", "lr", "H")


def allreduce_cost(C: float, K: int) -> float:
    """Recursive halving/doubling all-reduce: ``C * log2(K)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return C * math.log2(K) if K > 1 else 0.0


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def sync_counts(N: int, K: int, B: int, H: int, Hb: int):
    """``(global, block)`` synchronization counts for a budget of ``N`` samples."""
    global_syncs = _ceil_div(N, K * B * H * Hb)
    return global_syncs, _ceil_div(N, K * B * H) - global_syncs


def hierarchical_comm_cost(N: int, K: int, n_blocks: int, B: int, H: int, Hb: int,
                           C1: float, C2: float, concurrent_blocks: bool = False) -> float:
    """Total communication cost of hierarchical local SGD over ``N`` samples.

    Block syncs are charged ``C1 * n_blocks * log2(K / n_blocks)``: the
    ``n_blocks`` intra-block reductions summed. ``concurrent_blocks`` charges
    them as running in parallel (no ``n_blocks`` factor) instead.
    """
    for name, v in (("N", N), ("K", K), ("K'", n_blocks), ("B", B), ("H", H), ("Hb", Hb)):
        if v < 1:
            raise ValueError(f"{name} must be positive")
    if K % n_blocks:
        raise ValueError(f"K={K} not divisible by K'={n_blocks}")
    global_syncs, block_syncs = sync_counts(N, K, B, H, Hb)
    fan = 1 if concurrent_blocks else n_blocks
    return block_syncs * C1 * fan * math.log2(K // n_blocks) + global_syncs * C2 * math.log2(K)


@dataclasses.dataclass(frozen=True)
class CostModel:
    """Per-event costs in gradient units.

    ``model="flat"`` charges ``comm_ratio * t_grad`` per global sync and
    ``C1`` per block sync. ``model="log"`` charges ``C2 * log2(K)`` per global
    sync and ``C1 * K' * log2(K / K')`` per block sync.
    """

    t_grad: float = 1.0
    comm_ratio: float = 25.0
    model: str = "flat"
    C1: float = 1.0
    C2: float = 25.0
    delay: float = 0.0
    concurrent_blocks: bool = False

    def __post_init__(self):
        if self.model not in ("flat", "log"):
            raise ValueError(f"unknown cost model {self.model!r}")
        if min(self.t_grad, self.C1, self.C2, self.delay) < 0:
            raise ValueError("costs must be nonnegative")
        if self.comm_ratio <= 0:
            raise ValueError("comm_ratio must be positive")

    def global_cost(self, K: int) -> float:
        if K <= 1:
            return 0.0
        if self.model == "flat":
            return self.comm_ratio * self.t_grad
        return allreduce_cost(self.C2, K)

    def block_cost(self, K: int, n_blocks: int) -> float:
        if K <= 1:
            return 0.0
        if self.model == "flat":
            return self.C1
        fan = 1 if self.concurrent_blocks else n_blocks
        return self.C1 * fan * math.log2(K // n_blocks)


@dataclasses.dataclass
class Record:
    round: int
    step: int
    samples: int
    grad_evals: int
    global_syncs: int
    block_syncs: int
    clock: float
    train_loss: Optional[float]
    avg_loss: Optional[float]
    subopt: Optional[float]
    lr: float
    H: int
    eval_loss: Optional[float] = None

    def best_loss(self) -> Optional[float]:
        vals = [v for v in (self.train_loss, self.avg_loss) if v is not None]
        return min(vals) if vals else None


@dataclasses.dataclass
class Trace:
    run_id: str = "run"
    records: List[Record] = dataclasses.field(default_factory=list)
    status: str = "running"  # budget | diverged
    meta: Dict[str, object] = dataclasses.field(default_factory=dict)
    final_params: Optional[np.ndarray] = None
    average_params: Optional[np.ndarray] = None

    @property
    def last(self) -> Record:
        return self.records[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_trace_csv(buf, [self])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_trace_csv(fh, traces):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for tr in traces:
        for r in tr.records:
            writer.writerow([tr.run_id, r.round, r.step, r.samples, r.grad_evals, r.global_syncs,
                             r.block_syncs, _fmt(r.clock), _fmt(r.train_loss), _fmt(r.subopt),
                             _fmt(r.lr), r.H])


def time_to_target(trace: Trace, f_star: float, eps: float) -> Optional[float]:
    """Earliest clock at which ``min(last, average) - f_star <= eps``; ``None`` if never."""
    for r in trace.records:
        best = r.best_loss()
        if best is not None and best - f_star <= eps:
            return r.clock
    return None


def reprice(trace: Trace, cost: CostModel) -> List[float]:
    """Clock values of every record under another cost model (same event counts)."""
    K = int(trace.meta.get("K", 1))
    n_blocks = int(trace.meta.get("n_blocks", 1))
    g, b = cost.global_cost(K), cost.block_cost(K, n_blocks)
    return [r.grad_evals * cost.t_grad + r.global_syncs * (g + cost.delay) + r.block_syncs * b
            for r in trace.records]


class DivergenceError(ArithmeticError):
    pass


def simulate(objective: Objective, data, plan: SyncPlan, lr_schedule: LrSchedule,
             cost: CostModel, budget: int, batch_size: int, seed: int = 1,
             w0: Optional[np.ndarray] = None, f_star: Optional[float] = None,
             momentum: float = 0.0, momentum_style: str = "none", weight_decay: float = 0.0,
             replacement: bool = False, eval_every: str = "round", track_average: bool = True,
             eval_data=None, run_id: str = "run",
             on_record: Optional[Callable[[Record], None]] = None) -> Trace:
    """Run one training job until ``budget`` samples have been accessed."""
    if budget < 1:
        raise ValueError("budget must be positive")
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    if eval_every not in ("round", "epoch"):
        raise ValueError("eval_every must be 'round' or 'epoch'")
    if plan.momentum_mode == "global" and momentum:
        raise ValueError("global momentum mode runs plain local steps; use hybrid for both")
    N = data.N if data is not None else 1
    K = plan.n_workers
    if w0 is None:
        w0 = objective.init_params(seed)
    cluster = Cluster.create(w0, plan, N, seed, momentum, momentum_style, replacement)

    h_sched = plan.h_schedule
    auto_switch = h_sched.kind == "post-local" and h_sched.switch is None
    switch_at = lr_schedule.first_milestone_samples(budget) if auto_switch else None
    if auto_switch and switch_at is None:
        raise ValueError("post-local switch round must be set when the lr schedule never decays")

    trace = Trace(run_id=run_id, meta={"K": K, "n_blocks": plan.n_blocks, "budget": budget,
                                       "batch_size": batch_size, "seed": seed})
    avg = IterateAverage(objective.d) if track_average else None
    g_cost = cost.global_cost(K)
    b_cost = cost.block_cost(K, plan.n_blocks)
    samples = grad_evals = steps = n_global = n_block = 0
    clock = 0.0

    def evaluate(t, lr, H):
        w = cluster.consensus
        loss = objective.full_loss(w, data)
        avg_loss = objective.full_loss(avg.value, data) if avg is not None and avg.count else None
        best = min(v for v in (loss, avg_loss) if v is not None)
        rec = Record(t, steps, samples, grad_evals, n_global, n_block, clock, loss, avg_loss,
                     None if f_star is None else best - f_star, lr, H)
        if eval_data is not None:
            rec.eval_loss = objective.full_loss(w, eval_data)
        trace.records.append(rec)
        if on_record is not None:
            on_record(rec)
        return math.isfinite(loss) and (avg_loss is None or math.isfinite(avg_loss))

    t = 0
    epoch_seen = 0
    status = "budget"
    with np.errstate(over="ignore", invalid="ignore"):
        lr0 = lr_at(lr_schedule, 0, 0, budget)
        evaluate(0, lr0, 1 if auto_switch else local_steps_at(h_sched, 1))
        while samples < budget:
            t += 1
            if auto_switch and samples >= switch_at:
                h_sched = h_sched.with_switch(t - 1)
                auto_switch = False
            sched = h_sched.with_switch(t) if auto_switch else h_sched
            H = local_steps_at(sched, t)
            lr = lr_at(lr_schedule, steps, samples, budget)
            if plan.hierarchical:
                start = samples
                stats = hierarchical_round(cluster, objective, data, lr, H, batch_size, weight_decay,
                                           stop=lambda st: start + st.samples >= budget)
            else:
                stats = local_sgd_round(cluster, objective, data, lr, H, batch_size, weight_decay)
            samples += stats.samples
            grad_evals += stats.grad_evals
            steps += stats.local_steps
            n_global += stats.global_syncs
            n_block += stats.block_syncs
            clock += stats.grad_evals * cost.t_grad
            clock += stats.block_syncs * b_cost + stats.global_syncs * (g_cost + cost.delay)
            if avg is not None:
                avg.update(cluster.consensus)
            due = eval_every == "round" or samples >= budget or samples // N > epoch_seen
            epoch_seen = samples // N
            if due and not evaluate(t, lr, H):
                status = "diverged"
                logger.info("run %s diverged at round %d", run_id, t)
                break
            if not np.all(np.isfinite(cluster.consensus)):
                if not due:
                    evaluate(t, lr, H)
                status = "diverged"
                break
    trace.status = status
    trace.meta["switch_round"] = h_sched.switch
    trace.final_params = cluster.consensus.copy()
    trace.average_params = avg.value.copy() if avg is not None and avg.count else None
    return trace


def run_experiment(config) -> Trace:
    """Build everything a :class:`~localsgd.config.RunConfig` describes and simulate it."""
    from .config import build_run

    return build_run(config).run()
