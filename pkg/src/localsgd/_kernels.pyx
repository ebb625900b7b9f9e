# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sparse logistic kernels.

Rows are stored CSR (``indptr``, ``indices``, ``data``); a batch is an
int64 array of row ids. All reductions run in batch order so results are
reproducible for a fixed batch.
"""

from libc.math cimport exp, log1p

import numpy as np

BACKEND = "cython"


cdef inline double _softplus(double x) nogil:
    # log(1 + exp(x)) without overflow
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    cdef double z
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


cdef inline double _row_dot(const long long[::1] indptr, const int[::1] indices,
                            const double[::1] data, long long row,
                            const double[::1] w) nogil:
    cdef long long j
    cdef double acc = 0.0
    for j in range(indptr[row], indptr[row + 1]):
        acc += data[j] * w[indices[j]]
    return acc


def logistic_loss_sum(const long long[::1] indptr, const int[::1] indices,
                      const double[::1] data, const double[::1] labels,
                      const long long[::1] batch, const double[::1] w):
    """Sum over the batch of ``log(1 + exp(-b * a.w))``."""
    cdef Py_ssize_t n = batch.shape[0]
    cdef Py_ssize_t i
    cdef long long row
    cdef double total = 0.0
    with nogil:
        for i in range(n):
            row = batch[i]
            total += _softplus(-labels[row] * _row_dot(indptr, indices, data, row, w))
    return total


def logistic_grad_sum(const long long[::1] indptr, const int[::1] indices,
                      const double[::1] data, const double[::1] labels,
                      const long long[::1] batch, const double[::1] w,
                      double[::1] out):
    """Accumulate the batch-summed data gradient into ``out`` (overwritten)."""
    cdef Py_ssize_t n = batch.shape[0]
    cdef Py_ssize_t i, d = out.shape[0]
    cdef long long row, j
    cdef double b, coef
    with nogil:
        for i in range(d):
            out[i] = 0.0
        for i in range(n):
            row = batch[i]
            b = labels[row]
            coef = -b * _sigmoid(-b * _row_dot(indptr, indices, data, row, w))
            for j in range(indptr[row], indptr[row + 1]):
                out[indices[j]] += coef * data[j]


def logistic_hvp_sum(const long long[::1] indptr, const int[::1] indices,
                     const double[::1] data, const double[::1] labels,
                     const long long[::1] batch, const double[::1] w,
                     const double[::1] v, double[::1] out):
    """Accumulate the batch-summed data Hessian times ``v`` into ``out``."""
    cdef Py_ssize_t n = batch.shape[0]
    cdef Py_ssize_t i, d = out.shape[0]
    cdef long long row, j
    cdef double b, s, coef
    with nogil:
        for i in range(d):
            out[i] = 0.0
        for i in range(n):
            row = batch[i]
            b = labels[row]
            s = _sigmoid(-b * _row_dot(indptr, indices, data, row, w))
            coef = b * b * s * (1.0 - s) * _row_dot(indptr, indices, data, row, v)
            for j in range(indptr[row], indptr[row + 1]):
                out[indices[j]] += coef * data[j]
