"""Input checks shared by the estimators."""

from __future__ import annotations

import os

import numpy as np
from sklearn.utils.validation import check_array


def check_pseudo_obs(X, *, closed: bool = True, min_samples: int = 1) -> np.ndarray:
    """Validate a matrix of pseudo-observations.

    Rows must lie in the unit cube. With ``closed=False`` the open cube is
    required, as for data handed to ``fit``.
    """
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples, ensure_all_finite=True)
    if closed:
        bad = (X < 0) | (X > 1)
    else:
        bad = (X <= 0) | (X >= 1)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        cube = "[0, 1]" if closed else "(0, 1)"
        raise ValueError(f"row {row} leaves the unit cube {cube}^d: {X[row].tolist()}")
    return X


def check_points(X, dim: int) -> np.ndarray:
    """Evaluation points: a single point or an (n, dim) matrix in [0, 1]^dim."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    X = check_pseudo_obs(X, closed=True)
    if X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {X.shape[1]}")
    return X


def worker_count(default: int = 1) -> int:
    """Worker cap from ``CORTKIT_THREADS``; invalid values fall back to ``default``."""
    raw = os.environ.get("CORTKIT_THREADS", "")
    try:
        value = int(raw)
    except ValueError:
        return default
    return max(1, value)


def parallel_map(func, items, n_workers: int | None = None) -> list:
    """Ordered map over ``items`` with a bounded thread pool."""
    items = list(items)
    n_workers = worker_count() if n_workers is None else max(1, n_workers)
    if n_workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(func, items))
