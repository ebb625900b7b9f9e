"""Datasets, worker partitions and mini-batch streams.

A :class:`Dataset` is an immutable CSR matrix plus labels. Every epoch the
index set ``[0, N)`` is permuted with a generator keyed by ``(seed, epoch)``
and split into ``K`` contiguous chunks, one per worker.
"""

from __future__ import annotations

import dataclasses
import functools
import io
import os
from typing import Iterable, List, Optional, TextIO, Union

import numpy as np


class ParseError(ValueError):
    """Malformed libsvm input."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
    """Sparse row-major examples with real labels.

    ``indptr``/``indices``/``data`` follow the CSR convention with 0-based
    feature indices.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    labels: np.ndarray
    d: int

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int32)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if len(indptr) != len(labels) + 1:
            raise ValueError("indptr length must be N + 1")
        if len(indices) and (indices.min() < 0 or indices.max() >= self.d):
            raise ValueError("feature index out of range")
        for arr in (indptr, indices, data, labels):
            arr.flags.writeable = False
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)

    @property
    def N(self) -> int:
        return len(self.labels)

    @property
    def nnz(self) -> int:
        return len(self.data)

    @classmethod
    def from_dense(cls, X, labels) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        mask = X != 0
        indptr = np.concatenate(([0], np.cumsum(mask.sum(axis=1))))
        rows, cols = np.nonzero(mask)
        return cls(indptr, cols, X[rows, cols], np.asarray(labels, dtype=np.float64), X.shape[1])

    def to_dense(self, rows: Optional[np.ndarray] = None) -> np.ndarray:
        """Dense copy of the selected rows (all rows by default)."""
        if rows is None:
            rows = np.arange(self.N)
        rows = np.asarray(rows, dtype=np.int64)
        out = np.zeros((len(rows), self.d))
        for r, row in enumerate(rows):
            lo, hi = self.indptr[row], self.indptr[row + 1]
            out[r, self.indices[lo:hi]] = self.data[lo:hi]
        return out

    def csr(self):
        import scipy.sparse

        return scipy.sparse.csr_matrix(
            (self.data, self.indices, self.indptr), shape=(self.N, self.d)
        )

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        m = self.csr()[rows]
        return Dataset(m.indptr, m.indices, m.data, self.labels[rows], self.d)


def parse_libsvm(stream: Union[TextIO, Iterable[str]], d: Optional[int] = None) -> Dataset:
    """Parse ``<label> <idx>:<val> ...`` lines (1-based, strictly increasing).

    ``d`` overrides the feature dimension; it must cover every index seen.
    Blank lines are skipped. Comments are not part of the format.
    """
    indptr = [0]
    indices: List[int] = []
    values: List[float] = []
    labels: List[float] = []
    max_index = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:val, got {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"bad entry {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"index {idx} is not 1-based", lineno)
            if idx <= prev:
                raise ParseError(f"index {idx} not strictly increasing", lineno)
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_index = max(max_index, prev)
        indptr.append(len(indices))
    if d is None:
        d = max_index
    elif d < max_index:
        raise ValueError(f"dimension override {d} smaller than max index {max_index}")
    return Dataset(np.array(indptr), np.array(indices, dtype=np.int32),
                   np.array(values), np.array(labels), d)


def load_libsvm(path: Union[str, os.PathLike], d: Optional[int] = None) -> Dataset:
    """Read a libsvm file; ``.bz2`` and ``.gz`` are decompressed transparently."""
    path = os.fspath(path)
    if path.endswith(".bz2"):
        import bz2

        opener = functools.partial(bz2.open, mode="rt", encoding="utf-8")
    elif path.endswith(".gz"):
        import gzip

        opener = functools.partial(gzip.open, mode="rt", encoding="utf-8")
    else:
        opener = functools.partial(open, mode="r", encoding="utf-8", newline="")
    with opener(path) as fh:
        return parse_libsvm(fh, d=d)


def parse_libsvm_text(text: str, d: Optional[int] = None) -> Dataset:
    return parse_libsvm(io.StringIO(text, newline=""), d=d)


# -- partitioning ------------------------------------------------------------


@dataclasses.dataclass
class Partition:
    """One worker's share of an epoch: an ordered index list and a cursor."""

    worker: int
    indices: np.ndarray
    N: int
    K: int
    seed: int
    epoch: int = 0
    cursor: int = 0

    def __len__(self):
        return len(self.indices)


def _epoch_generator(seed: int, epoch: int) -> np.random.Generator:
    # Philox is counter-based; the key is derived from (seed, epoch) only
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, epoch])))


@functools.lru_cache(maxsize=8)
def _epoch_chunks(N: int, K: int, seed: int, epoch: int):
    perm = _epoch_generator(seed, epoch).permutation(N).astype(np.int64)
    chunks = np.array_split(perm, K)
    for c in chunks:
        c.flags.writeable = False
    return tuple(chunks)


def _check_k(N: int, K: int):
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > N:
        raise ValueError(f"K={K} exceeds dataset size N={N}")


def reshuffle_epoch(data: Union[Dataset, int], K: int, seed: int, epoch: int) -> List[Partition]:
    """Globally reshuffle ``[0, N)`` for ``epoch`` and split it across ``K`` workers."""
    N = data if isinstance(data, int) else data.N
    _check_k(N, K)
    chunks = _epoch_chunks(N, K, int(seed), int(epoch))
    return [Partition(k, chunks[k], N, K, int(seed), epoch=epoch) for k in range(K)]


def partition(data: Union[Dataset, int], K: int, seed: int) -> List[Partition]:
    return reshuffle_epoch(data, K, seed, 0)


def _advance_epoch(part: Partition):
    part.epoch += 1
    part.indices = _epoch_chunks(part.N, part.K, part.seed, part.epoch)[part.worker]
    part.cursor = 0


def next_minibatch(part: Partition, batch_size: int) -> np.ndarray:
    """Return the next ``batch_size`` indices of the worker's epoch list.

    The final batch of an epoch may be short. Once the list is exhausted the
    partition moves to the next globally reshuffled epoch.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if part.cursor >= len(part.indices):
        _advance_epoch(part)
    lo = part.cursor
    hi = min(lo + batch_size, len(part.indices))
    part.cursor = hi
    return part.indices[lo:hi]


class BatchStream:
    """Per-worker mini-batch source.

    Without replacement (default) batches walk the worker's epoch chunk; with
    ``replacement=True`` each batch is drawn uniformly with replacement from
    the current chunk and an epoch ends after ``len(chunk)`` samples.
    """

    def __init__(self, N: int, K: int, worker: int, seed: int, replacement: bool = False):
        _check_k(N, K)
        self.N, self.K, self.seed = N, K, int(seed)
        self.replacement = replacement
        self.part = reshuffle_epoch(N, K, self.seed, 0)[worker]
        self._rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, 1 << 20, worker])))

    @property
    def epoch(self) -> int:
        return self.part.epoch

    def next(self, batch_size: int) -> np.ndarray:
        if not self.replacement:
            return next_minibatch(self.part, batch_size)
        part = self.part
        if part.cursor >= len(part.indices):
            _advance_epoch(part)
        n = min(batch_size, len(part.indices) - part.cursor)
        part.cursor += n
        return part.indices[self._rng.integers(0, len(part.indices), size=n)]


# -- synthetic data ----------------------------------------------------------


def make_two_class_2d(n: int = 2000, seed: int = 0, noise: float = 0.25) -> Dataset:
    """Two interleaved half-moons in the plane, labels in {-1, +1}."""
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0, np.pi, n0)
    t1 = rng.uniform(0, np.pi, n1)
    x0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    x1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    X = np.concatenate([x0, x1]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([-np.ones(n0), np.ones(n1)])
    order = rng.permutation(n)
    return Dataset.from_dense(X[order], y[order])


def make_sparse_binary(n: int = 5000, d: int = 300, density: float = 0.04,
                       seed: int = 0, flip: float = 0.05) -> Dataset:
    """Sparse binary features with labels from a planted linear model.

    Shaped like the ``w8a`` benchmark (binary indicators, a few percent dense)
    for use when that file is unavailable.
    """
    rng = np.random.default_rng(seed)
    w_true = rng.standard_normal(d) * 2.0 / np.sqrt(density * d)
    indptr = [0]
    indices = []
    for _ in range(n):
        k = max(1, rng.binomial(d, density))
        indices.append(np.sort(rng.choice(d, size=k, replace=False)))
        indptr.append(indptr[-1] + k)
    indices_arr = np.concatenate(indices).astype(np.int32)
    data = np.ones(len(indices_arr))
    margins = np.array([w_true[ix].sum() for ix in indices])
    y = np.where(margins + 0.5 * rng.standard_normal(n) > 0, 1.0, -1.0)
    y[rng.random(n) < flip] *= -1
    return Dataset(np.array(indptr), indices_arr, data, y, d)
