"""Evaluation statistics: EISE, exact ISE, constraint influence, CV errors, burn-in curves."""

from __future__ import annotations

import numpy as np
from sklearn.base import clone

from cortkit._rng import derive_rng, draw_seed, make_rng
from cortkit._validation import check_pseudo_obs, parallel_map
from cortkit.baselines import EmpiricalCopula
from cortkit.plc import PiecewiseLinearCopula


def eise(model, X) -> float:
    """Empirical integrated square error ``|c|^2 - 2 mean(c(X))``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return float(model.l2_norm_sq() - 2.0 * np.mean(model.pdf(X)))


def _plc(model) -> PiecewiseLinearCopula:
    from cortkit.cort import _as_plc

    return _as_plc(model)


def exact_ise(model, truth) -> float:
    """``int (c_model - c_truth)^2`` by overlaying the two partitions.

    Every pair of leaves contributes its intersection volume times the
    squared density difference on it.
    """
    a, b = _plc(model), _plc(truth)
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    la, ua = a.partition.lower, a.partition.upper
    lb, ub = b.partition.lower, b.partition.upper
    da = a.weights / a.partition.volumes
    db = b.weights / b.partition.volumes
    total = 0.0
    chunk = max(1, 2_000_000 // max(1, lb.shape[0] * a.dim))
    for s in range(0, la.shape[0], chunk):
        lo = np.maximum(la[s:s + chunk, None], lb[None])
        up = np.minimum(ua[s:s + chunk, None], ub[None])
        inter = np.prod(np.clip(up - lo, 0.0, None), axis=2)
        diff = da[s:s + chunk, None] - db[None]
        total += float(np.sum(inter * diff * diff))
    return total


def constraint_influence(model) -> float:
    """``sum((p - f)**2 / volume)`` between projected weights and raw leaf frequencies."""
    copula = _plc(model)
    freqs = np.asarray(model.frequencies_, dtype=float)
    return float(np.sum((copula.weights - freqs) ** 2 / copula.partition.volumes))


def empirical_cdf(reference, X) -> np.ndarray:
    return EmpiricalCopula().fit(reference).cdf(X)


def train_test_split(n: int, test_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    n_test = int(round(n * test_fraction))
    if not 0 < n_test < n:
        raise ValueError(f"cannot split {n} points with test fraction {test_fraction}")
    perm = rng.permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def cv_errors(estimator, X, n_resamples: int = 20, test_fraction: float = 0.2, seed=None, n_workers=None) -> list[dict]:
    """Held-out distribution and density errors over random train/test splits.

    For each split the estimator is fitted on the training part; on the
    test part ``T`` it returns ``P = sum_T (D(u) - C_T(u))**2`` with ``C_T``
    the empirical copula of the test points, and
    ``Q = |d|^2 - 2 mean_T d(u)``. ``Q`` is NaN for estimators without a
    density (``has_density = False``).
    """
    X = check_pseudo_obs(X)
    seed = draw_seed(make_rng(seed)) if seed is None or isinstance(seed, np.random.Generator) else int(seed)

    def one(r):
        rng = derive_rng(seed, r)
        train, test = train_test_split(X.shape[0], test_fraction, rng)
        model = clone(estimator)
        if "random_state" in model.get_params():
            model.set_params(random_state=draw_seed(rng))
        model.fit(X[train])
        U = X[test]
        P = float(np.sum((model.cdf(U) - empirical_cdf(U, U)) ** 2))
        Q = eise(model, U) if getattr(model, "has_density", True) else float("nan")
        return {"resample": r, "P": P, "Q": Q, "n_train": int(train.size), "n_test": int(test.size)}

    return parallel_map(one, range(int(n_resamples)), n_workers)


def pairwise_table(model, d: int) -> list[dict]:
    rows = []
    for i in range(d):
        for j in range(i + 1, d):
            tau, rho = model.pairwise_measures(i, j)
            rows.append({"i": i + 1, "j": j + 1, "tau": tau, "rho": rho})
    return rows


def burn_in(estimator, generator, sizes, seed, n_workers=None) -> list[dict]:
    """Pairwise tau and rho of fits on samples of increasing size.

    ``generator(seed, n)`` returns an ``n x d`` sample (or a dataset with a
    ``data`` attribute). Every size gets its own sample drawn from the
    sub-stream ``(seed, k)``. Rows are emitted for the fitted model
    (``source="fit"``) and for the sample itself (``source="empirical"``).
    """
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")

    def one(k):
        size = sizes[k]
        rng = derive_rng(seed, k)
        data = generator(draw_seed(rng), size)
        data = np.asarray(getattr(data, "data", data), dtype=float)
        model = clone(estimator)
        if "random_state" in model.get_params():
            model.set_params(random_state=draw_seed(rng))
        model.fit(data)
        rows = []
        for source, m in (("fit", model), ("empirical", EmpiricalCopula().fit(data))):
            for row in pairwise_table(m, data.shape[1]):
                rows.append({"size": size, "source": source, **row})
        return rows

    out = []
    for rows in parallel_map(one, range(len(sizes)), n_workers):
        out.extend(rows)
    return out


def signed_log1p(x):
    """``sign(x) * log1p(|x|)``, a log scale that keeps the sign."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.log1p(np.abs(x))


def boxplot_summary(values) -> dict:
    """Five-number summary of the finite values (NaN when there are none)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {k: float("nan") for k in ("min", "q1", "median", "q3", "max")}
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), map(float, q)))
