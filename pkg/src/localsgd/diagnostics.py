"""Curvature and loss-landscape diagnostics."""

from __future__ import annotations

import dataclasses
from typing import List, Optional, Sequence

import numpy as np

from .objectives import Objective

MAX_RESTARTS = 3
OVERSAMPLE = 2


@dataclasses.dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # rows are unit vectors
    iterations: List[int]
    rel_errors: List[float]
    converged: List[bool]


def _gram_schmidt(V: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Orthonormalize the columns of ``V`` in order (two passes).

    A column that vanishes against the earlier ones is replaced by a fresh
    random direction so the block keeps its width.
    """
    d, m = V.shape
    Q = np.empty_like(V)
    for j in range(m):
        v = V[:, j].copy()
        scale = np.linalg.norm(v)
        for _ in range(3):
            for _ in range(2):
                v -= Q[:, :j] @ (Q[:, :j].T @ v)
            norm = np.linalg.norm(v)
            if norm > 1e-12 * max(scale, 1e-300):
                break
            v = rng.standard_normal(d)
            scale = np.linalg.norm(v)
        Q[:, j] = v / norm
    return Q


def _subspace_iteration(matvec, d: int, k: int, rng: np.random.Generator, tol: float, max_iters: int):
    """Block power iteration with Rayleigh-Ritz on ``k + OVERSAMPLE`` vectors.

    Pair ``i`` has converged once its Ritz value moved by at most ``tol``
    (relative) since the previous iteration and its residual
    ``||H v - theta v||`` is at most ``tol * |theta|``. The residual bounds
    the distance to the nearest eigenvalue, which the change alone does not.
    """
    m = min(d, k + OVERSAMPLE)
    V = _gram_schmidt(rng.standard_normal((d, m)), rng)
    prev = None
    done_at = [0] * k
    tiny = np.finfo(float).tiny
    for it in range(1, max_iters + 1):
        HV = np.column_stack([matvec(V[:, j]) for j in range(m)])
        T = V.T @ HV
        theta, Y = np.linalg.eigh(0.5 * (T + T.T))
        order = np.argsort(-np.abs(theta), kind="stable")
        theta, Y = theta[order], Y[:, order]
        X, HX = V @ Y, HV @ Y
        scale = np.maximum(np.abs(theta[:k]), tiny)
        res = np.linalg.norm(HX[:, :k] - X[:, :k] * theta[:k], axis=0) / scale
        diff = np.full(k, np.inf) if prev is None else np.abs(theta[:k] - prev) / scale
        err = np.maximum(res, diff)
        for i in range(k):
            if err[i] <= tol and not done_at[i]:
                done_at[i] = it
        if np.all(err <= tol):
            break
        prev = theta[:k]
        V = _gram_schmidt(HX, rng)
    return theta[:k], X[:, :k], [n or it for n in done_at], err, err <= tol


def top_k_eigenvalues(obj: Objective, w, data=None, k: int = 1, tol: float = 1e-4,
                      max_iters: int = 1000, seed: int = 0) -> SpectrumResult:
    """Leading ``k`` Hessian eigenpairs (largest in magnitude) by subspace iteration."""
    if not 1 <= k <= obj.d:
        raise ValueError(f"k must be in [1, {obj.d}]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = np.asarray(w, dtype=np.float64)
    rng = np.random.default_rng(seed)

    def matvec(v):
        return obj.hvp(w, np.ascontiguousarray(v), data)

    best = None
    for _ in range(MAX_RESTARTS + 1):
        out = _subspace_iteration(matvec, obj.d, k, rng, tol, max_iters)
        if best is None or np.max(out[3]) < np.max(best[3]):
            best = out
        if np.all(out[4]):
            break  # otherwise restart from a fresh block
    theta, X, iters, err, ok = best
    X = X / np.linalg.norm(X, axis=0)
    return SpectrumResult(theta.copy(), X.T.copy(), list(iters), [float(e) for e in err],
                          [bool(c) for c in ok])


def dominant_eigenvalue(obj: Objective, w, data=None, tol: float = 1e-4, max_iters: int = 1000,
                        seed: int = 0):
    """``(lambda_1, v_1, converged)`` of the Hessian at ``w``."""
    res = top_k_eigenvalues(obj, w, data, 1, tol, max_iters, seed)
    return float(res.eigenvalues[0]), res.eigenvectors[0], res.converged[0]


@dataclasses.dataclass
class InterpolationPoint:
    lam: float
    train_loss: float
    eval_loss: Optional[float]


def interpolate_models(w_a, w_b, grid, obj: Objective, data, eval_data=None) -> List[InterpolationPoint]:
    """Losses along ``(1 - lam) * w_a + lam * w_b``."""
    w_a = np.asarray(w_a, dtype=np.float64)
    w_b = np.asarray(w_b, dtype=np.float64)
    if w_a.shape != w_b.shape:
        raise ValueError("dimension mismatch")
    out = []
    for lam in grid:
        lam = float(lam)
        if lam == 0.0:
            w = w_a
        elif lam == 1.0:
            w = w_b
        else:
            w = lam * w_b + (1.0 - lam) * w_a
        ev = obj.full_loss(w, eval_data) if eval_data is not None else None
        out.append(InterpolationPoint(lam, obj.full_loss(w, data), ev))
    return out


def default_grid(lo: float = -0.5, hi: float = 1.5, n: int = 41) -> np.ndarray:
    grid = np.linspace(lo, hi, n)
    # pin the endpoints the curve is read against
    for anchor in (0.0, 1.0):
        i = int(np.argmin(np.abs(grid - anchor)))
        if abs(grid[i] - anchor) < 1e-12:
            grid[i] = anchor
    return grid
