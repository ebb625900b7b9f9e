"""Pure-Python (NumPy) versions of the sparse logistic kernels.

Same signatures as the compiled module; used when the extension is not
built or when ``LOCALSGD_PURE_PYTHON`` is set.
"""

import numpy as np

BACKEND = "python"


def _gather(indptr, indices, data, batch):
    starts = indptr[batch]
    lengths = indptr[batch + 1] - starts
    total = int(lengths.sum())
    # flat positions of every nonzero of every batch row, in batch order
    offsets = np.repeat(starts - np.concatenate(([0], np.cumsum(lengths)[:-1])), lengths)
    pos = np.arange(total, dtype=np.int64) + offsets
    rows = np.repeat(np.arange(len(batch)), lengths)
    return rows, indices[pos], data[pos]


def _margins(rows, cols, vals, n, w):
    return np.bincount(rows, weights=vals * w[cols], minlength=n)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    z = np.exp(x[~pos])
    out[~pos] = z / (1.0 + z)
    return out


def logistic_loss_sum(indptr, indices, data, labels, batch, w):
    batch = np.asarray(batch, dtype=np.int64)
    rows, cols, vals = _gather(indptr, indices, data, batch)
    m = _margins(rows, cols, vals, len(batch), np.asarray(w))
    return float(_softplus(-labels[batch] * m).sum())


def logistic_grad_sum(indptr, indices, data, labels, batch, w, out):
    batch = np.asarray(batch, dtype=np.int64)
    rows, cols, vals = _gather(indptr, indices, data, batch)
    b = labels[batch]
    m = _margins(rows, cols, vals, len(batch), np.asarray(w))
    coef = -b * _sigmoid(-b * m)
    out[:] = np.bincount(cols, weights=coef[rows] * vals, minlength=len(out))


def logistic_hvp_sum(indptr, indices, data, labels, batch, w, v, out):
    batch = np.asarray(batch, dtype=np.int64)
    rows, cols, vals = _gather(indptr, indices, data, batch)
    b = labels[batch]
    n = len(batch)
    s = _sigmoid(-b * _margins(rows, cols, vals, n, np.asarray(w)))
    coef = b * b * s * (1.0 - s) * _margins(rows, cols, vals, n, np.asarray(v))
    out[:] = np.bincount(cols, weights=coef[rows] * vals, minlength=len(out))
