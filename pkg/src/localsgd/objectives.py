"""Differentiable objectives with gradient and Hessian-vector oracles.

Every objective is an average of per-example losses over a batch plus the
regularizer ``(lam / 2) * ||w||^2`` added once per evaluation.
"""

from __future__ import annotations

import weakref
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .data import Dataset

GRAD_FD_STEP = 1e-5
HVP_FD_STEP = 1e-4


class ConfigurationError(ValueError):
    """Objective, parameters and data disagree on dimensions."""


def _as_batch(batch, data: Optional[Dataset]) -> np.ndarray:
    if batch is None:
        n = 1 if data is None else data.N
        batch = np.arange(n, dtype=np.int64)
    batch = np.ascontiguousarray(batch, dtype=np.int64)
    if batch.ndim != 1:
        raise ValueError("batch must be a 1-D index array")
    if len(batch) == 0:
        raise ValueError("empty batch")
    if data is not None and (batch.min() < 0 or batch.max() >= data.N):
        raise IndexError("batch index out of range")
    return batch


class Objective:
    """Base class. Subclasses implement the data term; the ridge term lives here."""

    kind = ""

    def __init__(self, d: int, lam: float = 0.0):
        if d < 1:
            raise ConfigurationError("dimension must be positive")
        if lam < 0:
            raise ConfigurationError("regularization must be nonnegative")
        self.d = int(d)
        self.lam = float(lam)

    def __repr__(self):
        return f"{type(self).__name__}(d={self.d}, lam={self.lam})"

    def _check(self, w: np.ndarray, data: Optional[Dataset]):
        if w.shape != (self.d,):
            raise ConfigurationError(f"parameter shape {w.shape} != ({self.d},)")
        self._check_data(data)

    def _check_data(self, data: Optional[Dataset]):
        pass

    # data-term hooks; batch is validated int64
    def _data_loss(self, w, batch, data) -> float:
        raise NotImplementedError

    def _data_grad(self, w, batch, data) -> np.ndarray:
        raise NotImplementedError

    def _data_hvp(self, w, v, batch, data) -> np.ndarray:
        raise NotImplementedError

    def loss(self, w, batch=None, data: Optional[Dataset] = None) -> float:
        w = np.asarray(w, dtype=np.float64)
        self._check(w, data)
        batch = _as_batch(batch, data)
        value = self._data_loss(w, batch, data)
        if self.lam:
            value += 0.5 * self.lam * float(w @ w)
        return value

    def gradient(self, w, batch=None, data: Optional[Dataset] = None) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        self._check(w, data)
        batch = _as_batch(batch, data)
        g = self._data_grad(w, batch, data)
        if self.lam:
            g += self.lam * w
        return g

    def full_loss(self, w, data: Optional[Dataset] = None) -> float:
        return self.loss(w, None, data)

    def hvp(self, w, v, data: Optional[Dataset] = None, batch=None) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        self._check(w, data)
        if v.shape != (self.d,):
            raise ConfigurationError(f"direction shape {v.shape} != ({self.d},)")
        batch = _as_batch(batch, data)
        hv = self._data_hvp(w, v, batch, data)
        if self.lam:
            hv += self.lam * v
        return hv

    def init_params(self, seed: int = 0) -> np.ndarray:
        return np.zeros(self.d)


class LogisticL2(Objective):
    """``log(1 + exp(-b * a.w))`` per example; labels in {-1, +1}."""

    kind = "logistic"

    def _check_data(self, data):
        if data is None:
            raise ConfigurationError("logistic objective needs a dataset")
        if data.d != self.d:
            raise ConfigurationError(f"data dimension {data.d} != {self.d}")

    def _data_loss(self, w, batch, data):
        total = kernels.logistic_loss_sum(data.indptr, data.indices, data.data, data.labels, batch, w)
        return total / len(batch)

    def _data_grad(self, w, batch, data):
        out = np.empty(self.d)
        kernels.logistic_grad_sum(data.indptr, data.indices, data.data, data.labels, batch, w, out)
        out /= len(batch)
        return out

    def _data_hvp(self, w, v, batch, data):
        out = np.empty(self.d)
        kernels.logistic_hvp_sum(data.indptr, data.indices, data.data, data.labels, batch, w, v, out)
        out /= len(batch)
        return out


class Quadratic(Objective):
    """``0.5 * sum_j D_j (w_j - a_ij)^2`` with per-example centers ``a_i``.

    Without a dataset there is a single example centered at the origin, so
    the loss is ``0.5 * w.D.w``.
    """

    kind = "quadratic"

    def __init__(self, diag: Sequence[float], lam: float = 0.0):
        diag = np.asarray(diag, dtype=np.float64)
        if diag.ndim != 1:
            raise ConfigurationError("curvature must be a vector of diagonal entries")
        super().__init__(len(diag), lam)
        self.diag = diag

    def __repr__(self):
        return f"Quadratic(diag={self.diag.tolist()}, lam={self.lam})"

    def _check_data(self, data):
        if data is not None and data.d != self.d:
            raise ConfigurationError(f"data dimension {data.d} != {self.d}")

    def _centers(self, batch, data):
        if data is None:
            return np.zeros((len(batch), self.d))
        return data.to_dense(batch)

    def _data_loss(self, w, batch, data):
        r = w - self._centers(batch, data)
        return 0.5 * float(np.mean((r * r) @ self.diag))

    def _data_grad(self, w, batch, data):
        if data is None:
            return self.diag * w
        return self.diag * (w - self._centers(batch, data).mean(axis=0))

    def _data_hvp(self, w, v, batch, data):
        return self.diag * v


_dense_cache: "weakref.WeakKeyDictionary[Dataset, np.ndarray]" = weakref.WeakKeyDictionary()


def _dense(data: Dataset) -> np.ndarray:
    X = _dense_cache.get(data)
    if X is None:
        X = data.to_dense()
        X.flags.writeable = False
        _dense_cache[data] = X
    return X


class MLP(Objective):
    """Two tanh hidden layers and a softmax cross-entropy output.

    Parameters are flattened layer by layer as ``W1, b1, W2, b2, W3, b3``
    with ``W`` of shape ``(fan_in, fan_out)``. Labels are class indices;
    negative labels (the ``-1`` of a binary task) map to class 0.
    """

    kind = "mlp"

    def __init__(self, n_inputs: int, hidden: Sequence[int] = (16, 16), n_classes: int = 2,
                 lam: float = 0.0):
        if len(hidden) != 2:
            raise ConfigurationError("mlp has exactly two hidden layers")
        self.sizes = (int(n_inputs), int(hidden[0]), int(hidden[1]), int(n_classes))
        self._shapes = []
        d = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self._shapes.append(((fan_in, fan_out), d))
            d += fan_in * fan_out + fan_out
        super().__init__(d, lam)

    def __repr__(self):
        return f"MLP(sizes={self.sizes}, lam={self.lam})"

    def _check_data(self, data):
        if data is None:
            raise ConfigurationError("mlp objective needs a dataset")
        if data.d != self.sizes[0]:
            raise ConfigurationError(f"data dimension {data.d} != {self.sizes[0]}")

    def unpack(self, w):
        layers = []
        for (fan_in, fan_out), off in self._shapes:
            W = w[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
            b = w[off + fan_in * fan_out:off + fan_in * fan_out + fan_out]
            layers.append((W, b))
        return layers

    def init_params(self, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        w = np.zeros(self.d)
        for (fan_in, fan_out), off in self._shapes:
            w[off:off + fan_in * fan_out] = rng.standard_normal(fan_in * fan_out) / np.sqrt(fan_in)
        return w

    def _targets(self, batch, data):
        y = data.labels[batch]
        return np.where(y < 0, 0, y).astype(np.int64)

    def _forward(self, w, batch, data):
        (W1, b1), (W2, b2), (W3, b3) = self.unpack(w)
        X = _dense(data)[batch]
        a1 = np.tanh(X @ W1 + b1)
        a2 = np.tanh(a1 @ W2 + b2)
        z = a2 @ W3 + b3
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return X, a1, a2, logp

    def _data_loss(self, w, batch, data):
        _, _, _, logp = self._forward(w, batch, data)
        y = self._targets(batch, data)
        return float(-logp[np.arange(len(batch)), y].mean())

    def _data_grad(self, w, batch, data):
        (W1, _), (W2, _), (W3, _) = self.unpack(w)
        X, a1, a2, logp = self._forward(w, batch, data)
        n = len(batch)
        dz3 = np.exp(logp)
        dz3[np.arange(n), self._targets(batch, data)] -= 1.0
        dz3 /= n
        dz2 = (dz3 @ W3.T) * (1.0 - a2 * a2)
        dz1 = (dz2 @ W2.T) * (1.0 - a1 * a1)
        parts = [X.T @ dz1, dz1.sum(axis=0), a1.T @ dz2, dz2.sum(axis=0), a2.T @ dz3, dz3.sum(axis=0)]
        return np.concatenate([p.ravel() for p in parts])

    def _data_hvp(self, w, v, batch, data):
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            return np.zeros(self.d)
        u = v / norm
        h = HVP_FD_STEP
        diff = self._data_grad(w + h * u, batch, data) - self._data_grad(w - h * u, batch, data)
        return diff * (norm / (2.0 * h))


def make_objective(kind: str, data: Optional[Dataset] = None, lam: float = 0.0,
                   diag: Optional[Sequence[float]] = None,
                   hidden: Sequence[int] = (16, 16), n_classes: Optional[int] = None) -> Objective:
    if kind in ("logistic", "logistic-l2"):
        if data is None:
            raise ConfigurationError("logistic objective needs a dataset")
        return LogisticL2(data.d, lam)
    if kind == "quadratic":
        if diag is None:
            raise ConfigurationError("quadratic objective needs curvature entries")
        return Quadratic(diag, lam)
    if kind == "mlp":
        if data is None:
            raise ConfigurationError("mlp objective needs a dataset")
        if n_classes is None:
            y = np.where(data.labels < 0, 0, data.labels)
            n_classes = max(2, int(y.max()) + 1) if data.N else 2
        return MLP(data.d, hidden, n_classes, lam)
    raise ConfigurationError(f"unknown objective kind {kind!r}")


# -- functional surface --------------------------------------------------------


def loss(obj: Objective, w, batch, data: Optional[Dataset]) -> float:
    return obj.loss(w, batch, data)


def gradient(obj: Objective, w, batch, data: Optional[Dataset]) -> np.ndarray:
    return obj.gradient(w, batch, data)


def full_loss(obj: Objective, w, data: Optional[Dataset]) -> float:
    return obj.full_loss(w, data)


def hessian_vector_product(obj: Objective, w, v, data: Optional[Dataset]) -> np.ndarray:
    return obj.hvp(w, v, data)


def check_gradient(obj: Objective, w, data: Optional[Dataset], step: float = GRAD_FD_STEP,
                   batch=None) -> float:
    """Max over coordinates of ``|analytic - central difference| / max(1, |analytic|)``."""
    if step <= 0:
        raise ValueError("step must be positive")
    w = np.array(w, dtype=np.float64)
    g = obj.gradient(w, batch, data)
    worst = 0.0
    for j in range(obj.d):
        orig = w[j]
        w[j] = orig + step
        up = obj.loss(w, batch, data)
        w[j] = orig - step
        down = obj.loss(w, batch, data)
        w[j] = orig
        fd = (up - down) / (2.0 * step)
        worst = max(worst, abs(g[j] - fd) / max(1.0, abs(g[j])))
    return worst
