"""Synchronization: model averaging, local and hierarchical rounds, codecs.

Each worker keeps the sum of its local update directions since the last
synchronization. Because the learning rate is fixed within a round, the
model difference a worker contributes is ``lr * acc`` and the exact-codec
consensus is ``w - lr * mean(acc)``. With one local step this is literally
the mini-batch SGD update.
"""

from __future__ import annotations

import dataclasses
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import BatchStream
from .objectives import Objective
from .optim import HSchedule, MomentumState, sign, update_direction

CODECS = ("exact", "sign-avg", "sign-vote", "ef-sign")
MOMENTUM_MODES = ("local", "global", "hybrid")


class InvariantError(RuntimeError):
    """Workers disagree where the algorithm requires consensus."""


@dataclasses.dataclass(frozen=True)
class SyncPlan:
    """How and when workers synchronize.

    ``n_blocks`` is the number of worker groups (1 means flat topology);
    ``block_steps`` is the number of block syncs per global sync.
    """

    n_workers: int = 1
    n_blocks: int = 1
    h_schedule: HSchedule = HSchedule()
    block_steps: int = 1
    momentum_mode: str = "local"
    global_momentum: float = 0.0
    codec: str = "exact"
    sign_after_momentum: bool = True
    average_buffers: bool = False

    def __post_init__(self):
        if self.n_workers < 1:
            raise ValueError("need at least one worker")
        if self.n_blocks < 1 or self.n_workers % self.n_blocks:
            raise ValueError(f"K={self.n_workers} not divisible into {self.n_blocks} blocks")
        if self.block_steps < 1:
            raise ValueError("block steps must be >= 1")
        if self.momentum_mode not in MOMENTUM_MODES:
            raise ValueError(f"unknown momentum mode {self.momentum_mode!r}")
        if not 0.0 <= self.global_momentum < 1.0:
            raise ValueError("global momentum must be in [0, 1)")
        if self.codec not in CODECS:
            raise ValueError(f"unknown codec {self.codec!r}")

    @property
    def hierarchical(self) -> bool:
        return self.n_blocks > 1 or self.block_steps > 1

    @property
    def block_size(self) -> int:
        return self.n_workers // self.n_blocks

    @property
    def sign_local_steps(self) -> bool:
        return self.codec in ("sign-avg", "sign-vote")


@dataclasses.dataclass
class WorkerState:
    k: int
    w: np.ndarray
    momentum: MomentumState
    stream: BatchStream
    error: Optional[np.ndarray] = None
    acc: Optional[np.ndarray] = None
    block_acc: Optional[np.ndarray] = None


@dataclasses.dataclass
class RoundStats:
    """Bookkeeping of one global round."""

    local_steps: int = 0
    grad_evals: int = 0  # critical path: sum over steps of the largest worker batch
    samples: int = 0  # all workers
    block_syncs: int = 0
    global_syncs: int = 0


class Cluster:
    """The consensus model plus K worker states and the global momentum buffer."""

    def __init__(self, w0: np.ndarray, workers: List[WorkerState], plan: SyncPlan):
        if len(workers) != plan.n_workers:
            raise ValueError("worker count does not match plan")
        self.plan = plan
        self.consensus = np.array(w0, dtype=np.float64)
        self.workers = workers
        self.global_buffer = np.zeros_like(self.consensus)
        for wk in workers:
            wk.w = self.consensus.copy()
            if plan.codec == "ef-sign" and wk.error is None:
                wk.error = np.zeros_like(self.consensus)

    @classmethod
    def create(cls, w0, plan: SyncPlan, n_examples: int, seed: int, momentum: float = 0.0,
               momentum_style: str = "none", replacement: bool = False) -> "Cluster":
        d = len(w0)
        workers = [
            WorkerState(k, np.array(w0, dtype=np.float64), MomentumState.zeros(d, momentum, momentum_style),
                        BatchStream(n_examples, plan.n_workers, k, seed, replacement))
            for k in range(plan.n_workers)
        ]
        return cls(w0, workers, plan)

    def check_consensus(self):
        for wk in self.workers:
            if not np.array_equal(wk.w, self.consensus):
                raise InvariantError(f"worker {wk.k} left consensus")

    def block_of(self, k: int) -> int:
        return k // self.plan.block_size


# -- primitives ----------------------------------------------------------------


def _ordered_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    it = iter(vectors)
    total = np.array(next(it), dtype=np.float64)
    for v in it:
        if v.shape != total.shape:
            raise ValueError("dimension mismatch")
        total += v
    return total


def mean_vectors(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Coordinate-wise mean, summed in list order."""
    if not len(vectors):
        raise ValueError("nothing to average")
    return _ordered_sum(vectors) / len(vectors)


def average_models(params: Sequence[np.ndarray]) -> np.ndarray:
    return mean_vectors(params)


def compress_sign(delta: np.ndarray) -> Tuple[np.ndarray, float]:
    """``(sign(delta), ||delta||_1 / d)``; the reconstruction is ``s * p``."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.size < 1:
        raise ValueError("empty vector")
    return sign(delta), float(np.abs(delta).sum() / delta.size)


def aggregate_signs(payloads: Sequence[Tuple[np.ndarray, float]], mode: str = "avg") -> np.ndarray:
    """Combine sign payloads by averaging reconstructions or by majority vote."""
    if not payloads:
        raise ValueError("no payloads")
    if mode == "avg":
        return mean_vectors([s * p for s, p in payloads])
    if mode == "vote":
        votes = _ordered_sum([s for s, _ in payloads])
        magnitude = sum(p for _, p in payloads) / len(payloads)
        return sign(votes) * magnitude
    raise ValueError(f"unknown aggregation mode {mode!r}")


def ef_sign_encode(delta: np.ndarray, memory: np.ndarray):
    """Compress ``delta + memory``; the residual becomes the next memory.

    Returns ``((s, p), new_memory)`` with ``delta + memory = s * p + new_memory``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != memory.shape:
        raise ValueError("dimension mismatch")
    corrected = delta + memory
    s, p = compress_sign(corrected)
    return (s, p), corrected - s * p


def apply_cross_sync_momentum(mode: str, buffer: np.ndarray, mean_delta: np.ndarray,
                              global_momentum: float, lr: float):
    """Turn the aggregated model difference into the consensus update.

    ``local``: the update is the aggregated difference and ``buffer`` is
    returned untouched. ``global``/``hybrid``: ``u = m_g * u + mean_delta / lr``
    and the update is ``lr * u``.
    """
    if mode == "local":
        return mean_delta, buffer
    if mode not in ("global", "hybrid"):
        raise ValueError(f"unknown momentum mode {mode!r}")
    u = global_momentum * buffer + mean_delta / lr
    return lr * u, u


# -- rounds --------------------------------------------------------------------


def _local_phase(cluster: Cluster, objective: Objective, data, lr: float, n_steps: int,
                 batch_size: int, weight_decay: float, stats: RoundStats, target: str):
    """Run ``n_steps`` lockstep local steps on every worker.

    Directions are added to ``wk.<target>`` (``acc`` or ``block_acc``).
    """
    plan = cluster.plan
    for _ in range(n_steps):
        largest = 0
        for wk in cluster.workers:
            batch = wk.stream.next(batch_size)
            g = objective.gradient(wk.w, batch, data)
            if plan.sign_local_steps and not plan.sign_after_momentum:
                g = sign(g)
                direction, wk.momentum = update_direction(g, wk.w, wk.momentum, weight_decay)
            else:
                direction, wk.momentum = update_direction(g, wk.w, wk.momentum, weight_decay)
                if plan.sign_local_steps:
                    direction = sign(direction)
            wk.w = wk.w - lr * direction
            acc = getattr(wk, target)
            setattr(wk, target, direction.copy() if acc is None else acc + direction)
            largest = max(largest, len(batch))
            stats.samples += len(batch)
        stats.grad_evals += largest
        stats.local_steps += 1


def _global_sync(cluster: Cluster, lr: float, stats: RoundStats):
    plan = cluster.plan
    workers = cluster.workers
    K = plan.n_workers
    if K == 1 and plan.codec == "exact" and plan.momentum_mode == "local":
        # nothing to communicate; the single worker already holds the model
        cluster.consensus = workers[0].w.copy()
        workers[0].acc = None
        return
    accs = [wk.acc if wk.acc is not None else np.zeros_like(cluster.consensus) for wk in workers]
    if plan.codec == "exact":
        mean_dir = mean_vectors(accs)
        if plan.momentum_mode == "local":
            update = lr * mean_dir
        else:
            u = plan.global_momentum * cluster.global_buffer + mean_dir
            cluster.global_buffer = u
            update = lr * u
    else:
        deltas = [lr * a for a in accs]
        if plan.codec == "ef-sign":
            payloads = []
            for wk, delta in zip(workers, deltas):
                payload, wk.error = ef_sign_encode(delta, wk.error)
                payloads.append(payload)
            agg = aggregate_signs(payloads, "avg")
        else:
            payloads = [compress_sign(delta) for delta in deltas]
            agg = aggregate_signs(payloads, "vote" if plan.codec == "sign-vote" else "avg")
        update, cluster.global_buffer = apply_cross_sync_momentum(
            plan.momentum_mode, cluster.global_buffer, agg, plan.global_momentum, lr)
    cluster.consensus = cluster.consensus - update
    for wk in workers:
        wk.w = cluster.consensus.copy()
        wk.acc = None
    if plan.average_buffers and plan.momentum_mode != "global":
        mean_buf = mean_vectors([wk.momentum.buffer for wk in workers])
        for wk in workers:
            wk.momentum = MomentumState(mean_buf.copy(), wk.momentum.m, wk.momentum.style)
    if K > 1:
        stats.global_syncs += 1


def _block_sync(cluster: Cluster, block_start: List[np.ndarray], lr: float, stats: RoundStats):
    plan = cluster.plan
    size = plan.block_size
    for b in range(plan.n_blocks):
        members = cluster.workers[b * size:(b + 1) * size]
        mean_dir = mean_vectors([wk.block_acc for wk in members])
        w_block = block_start[b] - lr * mean_dir
        block_start[b] = w_block
        for wk in members:
            wk.w = w_block.copy()
            wk.acc = mean_dir.copy() if wk.acc is None else wk.acc + mean_dir
            wk.block_acc = None
    if plan.n_workers > 1:
        stats.block_syncs += 1


def local_sgd_round(cluster: Cluster, objective: Objective, data, lr: float, H: int,
                    batch_size: int, weight_decay: float = 0.0) -> RoundStats:
    """``H`` local steps on every worker followed by one global synchronization."""
    cluster.check_consensus()
    stats = RoundStats()
    _local_phase(cluster, objective, data, lr, H, batch_size, weight_decay, stats, "acc")
    _global_sync(cluster, lr, stats)
    return stats


def hierarchical_round(cluster: Cluster, objective: Objective, data, lr: float, H: int,
                       batch_size: int, weight_decay: float = 0.0,
                       stop=None) -> RoundStats:
    """Up to ``block_steps`` repetitions of {H local steps, block average}, then a global average.

    ``stop(stats)`` is checked after every block step; when it returns true the
    round ends early with the global synchronization taking the place of the
    block synchronization.
    """
    cluster.check_consensus()
    plan = cluster.plan
    stats = RoundStats()
    block_start = [cluster.consensus.copy() for _ in range(plan.n_blocks)]
    for l in range(1, plan.block_steps + 1):
        _local_phase(cluster, objective, data, lr, H, batch_size, weight_decay, stats, "block_acc")
        last = l == plan.block_steps or (stop is not None and stop(stats))
        if last:
            # fold the final block step straight into the global average
            for wk in cluster.workers:
                wk.acc = wk.block_acc if wk.acc is None else wk.acc + wk.block_acc
                wk.block_acc = None
            _global_sync(cluster, lr, stats)
            break
        _block_sync(cluster, block_start, lr, stats)
    return stats
