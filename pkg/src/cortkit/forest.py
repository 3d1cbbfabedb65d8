"""Bagged copula density estimators.

A forest fits one base estimator per bootstrap resample and mixes them with
weights ``omega`` on the simplex. Out-of-bag (OOB) versions of the density
and distribution function at observation ``i`` only use the trees whose
resample missed ``i``. The mixture weights can be tuned by minimising the
OOB integrated square error ``J``.
"""

from __future__ import annotations

import base64
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from cortkit._rng import derive_rng, draw_seed, make_rng
from cortkit._validation import check_points, check_pseudo_obs, parallel_map
from cortkit.baselines import EmpiricalCopula

logger = logging.getLogger(__name__)

STATIONARITY_TOL = 1e-6


# -- Gram matrix and simplex helpers -------------------------------------------


def gram_matrix(estimators, n_workers=None) -> np.ndarray:
    """``G[j, k] = <c_j, c_k>``, the L2 inner products of the estimator densities."""
    N = len(estimators)
    pairs = [(j, k) for j in range(N) for k in range(j, N)]

    def entry(pair):
        j, k = pair
        if j == k:
            return estimators[j].l2_norm_sq()
        return estimators[j].inner_product(estimators[k])

    G = np.zeros((N, N))
    for (j, k), value in zip(pairs, parallel_map(entry, pairs, n_workers)):
        G[j, k] = G[k, j] = value
    return G


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


# -- OOB statistics -----------------------------------------------------------


def oob_mixture(values: np.ndarray, oob: np.ndarray, omega: np.ndarray):
    """OOB mixture per row: ``sum_j w_j v_ij 1{oob} / sum_j w_j 1{oob}``.

    Returns the mixture and a mask of the rows where it is defined.
    """
    weight = oob @ omega
    defined = weight > 0
    out = np.full(values.shape[0], np.nan)
    out[defined] = ((values * oob) @ omega)[defined] / weight[defined]
    return out, defined


def j_statistic(gram, dens, oob, omega) -> float:
    """``omega' G omega - (2/n) sum_i c_oob(u_i)``; undefined rows are left out of the sum."""
    c_oob, defined = oob_mixture(dens, oob, omega)
    return float(omega @ gram @ omega - 2.0 * c_oob[defined].sum() / dens.shape[0])


@dataclass
class OobStatistics:
    """Out-of-bag statistics of a weighted forest."""

    J: float
    K: float
    M: float
    N: float
    n_undefined: int
    n_used: int

    def to_dict(self) -> dict:
        return {"J": self.J, "K": self.K, "M": self.M, "N": self.N,
                "n_undefined": self.n_undefined, "n_used": self.n_used}


def compute_oob_statistics(gram, dens, oob, omega, cdf=None, full_cdf=None, emp_cdf=None) -> OobStatistics:
    """``J, K, M, N`` from per-tree densities (and optionally CDFs) at the data.

    Every average keeps the ``1/n`` normaliser of the full sample; rows
    whose OOB mixture is undefined are left out of the sums and counted.
    ``M`` and ``N`` are NaN unless ``cdf``, ``full_cdf`` and ``emp_cdf`` are given.
    """
    n = dens.shape[0]
    c_oob, defined = oob_mixture(dens, oob, omega)
    used = int(defined.sum())
    c_used = c_oob[defined]
    J = float(omega @ gram @ omega - 2.0 * c_used.sum() / n)
    if np.any(c_used <= 0):
        K = float("inf")
    else:
        K = float(-np.sum(np.log(c_used)) / n)
    M = N = float("nan")
    if cdf is not None and full_cdf is not None and emp_cdf is not None:
        C_oob, _ = oob_mixture(cdf, oob, omega)
        C_oob, C_full, C_emp = C_oob[defined], full_cdf[defined], emp_cdf[defined]
        M = float(np.sum((C_oob - C_emp) ** 2) / n)
        N = float(np.sum(C_full**2 - 2.0 * C_oob * C_emp) / n)
    return OobStatistics(J, K, M, N, int(n - used), used)


# -- weight optimisation -------------------------------------------------------


@dataclass
class WeightOptimization:
    omega: np.ndarray
    objective: float
    initial_objective: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _j_and_grad(gram, dens_oob, oob, omega):
    n = dens_oob.shape[0]
    num = dens_oob @ omega
    den = oob @ omega
    defined = den > 0
    ratio = num[defined] / den[defined]
    value = omega @ gram @ omega - 2.0 * ratio.sum() / n
    # d(num/den)/dw = (dens - ratio * oob) / den
    inv = 1.0 / den[defined]
    grad_ratio = (dens_oob[defined] - ratio[:, None] * oob[defined]) * inv[:, None]
    grad = 2.0 * gram @ omega - 2.0 * grad_ratio.sum(axis=0) / n
    return float(value), grad


def _descend(gram, dens_oob, oob, omega, max_iter, tol):
    value, grad = _j_and_grad(gram, dens_oob, oob, omega)
    history = [value]
    step = base = 1.0 / max(1e-12, 2.0 * float(np.abs(gram).max()) + 1.0)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        while True:
            cand = project_simplex(omega - step * grad)
            moved = omega - cand
            c_value, c_grad = _j_and_grad(gram, dens_oob, oob, cand)
            if c_value <= value - 1e-4 * float(grad @ moved) and c_value <= value:
                break
            step *= 0.5
            if step < 1e-18:
                return omega, value, it, True, history
        change = value - c_value
        omega, value, grad = cand, c_value, c_grad
        history.append(value)
        step *= 2.0
        # a tiny improvement only counts as convergence near a stationary point
        if change <= tol * max(1.0, abs(value)):
            mapping = np.abs(omega - project_simplex(omega - base * grad)).max() / base
            if mapping <= STATIONARITY_TOL * max(1.0, abs(value)):
                converged = True
                break
    return omega, value, it, converged, history


def optimize_weights(gram, dens, oob, n_restarts: int = 10, max_iter: int = 1000, tol: float = 1e-10,
                     random_state=None) -> WeightOptimization:
    """Simplex weights minimising the OOB integrated square error ``J``.

    Projected gradient descent with Armijo backtracking, started from the
    uniform weights and from ``n_restarts`` Dirichlet draws. The best end
    point is returned; it is never worse than the uniform weights.
    """
    gram = np.asarray(gram, dtype=float)
    oob = np.asarray(oob, dtype=float)
    dens_oob = np.asarray(dens, dtype=float) * oob
    N = gram.shape[0]
    uniform = np.full(N, 1.0 / N)
    start_value = _j_and_grad(gram, dens_oob, oob, uniform)[0]
    rng = make_rng(random_state)
    starts = [uniform] + [rng.dirichlet(np.ones(N)) for _ in range(int(n_restarts) if N > 1 else 0)]
    best = None
    for start in starts:
        omega, value, it, converged, history = _descend(gram, dens_oob, oob, start, int(max_iter), tol)
        if best is None or value < best.objective:
            best = WeightOptimization(omega, value, start_value, it, converged, history)
    if best.objective > start_value:
        best = WeightOptimization(uniform, start_value, start_value, 0, True, [start_value])
    return best


# -- forest estimator ----------------------------------------------------------


def _default_base():
    from cortkit.cort import Cort

    return Cort()


class CopulaForest(BaseEstimator):
    """Bootstrap mixture of copula density estimators.

    Parameters
    ----------
    base_estimator : estimator or None
        Any estimator with ``fit``, ``pdf``, ``cdf``, ``l2_norm_sq`` and
        ``inner_product``; defaults to :class:`cortkit.cort.Cort`.
    n_estimators : int, default=50
    optimize : bool, default=True
        Tune ``omega`` by minimising the OOB integrated square error.
    n_restarts : int, default=10
    max_iter : int, default=1000
    random_state : int, Generator or None
    n_jobs : int or None
        Worker threads; ``None`` reads ``CORTKIT_THREADS``.
    """

    kind = "forest"

    def __init__(self, base_estimator=None, n_estimators=50, optimize=True, n_restarts=10, max_iter=1000,
                 random_state=None, n_jobs=None):
        self.base_estimator = base_estimator
        self.n_estimators = n_estimators
        self.optimize = optimize
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _fit_one(self, X, j):
        rng = derive_rng(self.seed_, j)
        idx = rng.integers(0, X.shape[0], size=X.shape[0])
        est = clone(self._base)
        if "random_state" in est.get_params():
            est.set_params(random_state=draw_seed(rng))
        try:
            est.fit(X[idx])
        except Exception as exc:  # noqa: BLE001 - any base failure drops the tree
            return j, idx, None, exc
        return j, idx, est, None

    def fit(self, X, y=None):
        X = check_pseudo_obs(X)
        N = int(self.n_estimators)
        if N < 1:
            raise ValueError("n_estimators must be at least 1")
        seed = self.random_state
        if seed is None or isinstance(seed, np.random.Generator):
            seed = draw_seed(make_rng(seed))
        self.seed_ = int(seed)
        self._base = self.base_estimator if self.base_estimator is not None else _default_base()
        n = X.shape[0]
        results = parallel_map(lambda j: self._fit_one(X, j), range(N), self.n_jobs)
        estimators, masks, dropped = [], [], []
        for j, idx, est, exc in results:
            if est is None:
                warnings.warn(f"tree {j} dropped: {exc}", RuntimeWarning, stacklevel=2)
                dropped.append(j)
                continue
            inbag = np.zeros(n, dtype=bool)
            inbag[idx] = True
            estimators.append(est)
            masks.append(~inbag)
        if not estimators:
            raise RuntimeError("every base fit failed")
        self.estimators_ = estimators
        self.dropped_ = dropped
        self.oob_ = np.column_stack(masks)
        self.X_ = X
        self.n_features_in_ = X.shape[1]
        self.gram_ = gram_matrix(estimators, self.n_jobs)
        self.densities_ = np.column_stack(parallel_map(lambda e: e.pdf(X), estimators, self.n_jobs))
        self._cdfs = None
        self.omega_ = np.full(len(estimators), 1.0 / len(estimators))
        self.optimization_ = None
        if self.optimize and len(estimators) > 1:
            self.optimization_ = optimize_weights(
                self.gram_, self.densities_, self.oob_, int(self.n_restarts), int(self.max_iter),
                random_state=derive_rng(self.seed_, N, 0),
            )
            self.omega_ = self.optimization_.omega
        return self

    # -- mixture evaluation ---------------------------------------------------

    @property
    def n_trees_(self) -> int:
        check_is_fitted(self, "estimators_")
        return len(self.estimators_)

    @property
    def dim(self) -> int:
        check_is_fitted(self, "estimators_")
        return self.n_features_in_

    def _omega(self, omega):
        w = self.omega_ if omega is None else np.asarray(omega, dtype=float)
        if w.shape != (self.n_trees_,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("omega must be a probability vector over the trees")
        return w

    def pdf(self, X, omega=None) -> np.ndarray:
        X = check_points(X, self.dim)
        w = self._omega(omega)
        return sum(wj * e.pdf(X) for wj, e in zip(w, self.estimators_) if wj > 0)

    density = pdf

    def cdf(self, X, omega=None) -> np.ndarray:
        X = check_points(X, self.dim)
        w = self._omega(omega)
        return sum(wj * e.cdf(X) for wj, e in zip(w, self.estimators_) if wj > 0)

    def l2_norm_sq(self, omega=None) -> float:
        w = self._omega(omega)
        return float(w @ self.gram_ @ w)

    def sample(self, n_samples: int, random_state=None, omega=None) -> np.ndarray:
        """Draw a tree by ``omega`` for each point, then sample that tree."""
        w = self._omega(omega)
        rng = make_rng(random_state)
        counts = rng.multinomial(int(n_samples), w / w.sum())
        parts = []
        for j, k in enumerate(counts):
            if k:
                parts.append(self.estimators_[j].sample(int(k), random_state=draw_seed(rng)))
        if not parts:
            return np.empty((0, self.dim))
        out = np.vstack(parts)
        order = rng.permutation(out.shape[0])
        return out[order]

    def pairwise_measures(self, i: int, j: int, omega=None):
        """Kendall tau and Spearman rho of the mixture, for piecewise linear trees."""
        from cortkit.cort import _as_plc
        from cortkit.plc import kendall_tau_boxes, project_boxes, spearman_rho_boxes

        w = self._omega(omega)
        lows, ups, mass = [], [], []
        for wj, est in zip(w, self.estimators_):
            if wj <= 0:
                continue
            lo, up, p = _as_plc(est)._nonzero()
            lows.append(lo)
            ups.append(up)
            mass.append(wj * p)
        lo, up, p = project_boxes(np.vstack(lows), np.vstack(ups), np.concatenate(mass), (i, j))
        return kendall_tau_boxes(lo, up, p), spearman_rho_boxes(lo, up, p)

    # -- OOB ------------------------------------------------------------------

    def oob_density(self, i: int, omega=None) -> float:
        """OOB mixture density at training observation ``i`` (NaN when undefined)."""
        w = self._omega(omega)
        value, _ = oob_mixture(self.densities_[[i]], self.oob_[[i]].astype(float), w)
        return float(value[0])

    def _cdf_tables(self):
        if self._cdfs is None:
            cdfs = np.column_stack(parallel_map(lambda e: e.cdf(self.X_), self.estimators_, self.n_jobs))
            emp = EmpiricalCopula().fit(self.X_).cdf(self.X_)
            self._cdfs = (cdfs, emp)
        return self._cdfs

    def oob_statistics(self, omega=None, with_cdf: bool = True) -> OobStatistics:
        """``J``, ``K``, ``M`` and ``N``; ``M`` and ``N`` need the CDF tables (``with_cdf``)."""
        w = self._omega(omega)
        oob = self.oob_.astype(float)
        if not with_cdf:
            return compute_oob_statistics(self.gram_, self.densities_, oob, w)
        cdfs, emp = self._cdf_tables()
        return compute_oob_statistics(self.gram_, self.densities_, oob, w, cdfs, cdfs @ w, emp)

    def statistics_curve(self, sizes=None, with_cdf: bool = False) -> list[dict]:
        """OOB statistics of the uniform mixture of the first ``k`` trees, for each ``k``."""
        N = self.n_trees_
        sizes = range(1, N + 1) if sizes is None else sizes
        rows = []
        oob = self.oob_.astype(float)
        cdfs = emp = None
        if with_cdf:
            cdfs, emp = self._cdf_tables()
        for k in sizes:
            k = int(k)
            w = np.zeros(N)
            w[:k] = 1.0 / k
            if with_cdf:
                stats = compute_oob_statistics(self.gram_, self.densities_, oob, w, cdfs, cdfs @ w, emp)
            else:
                stats = compute_oob_statistics(self.gram_, self.densities_, oob, w)
            rows.append({"trees": k, **stats.to_dict()})
        return rows

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "estimators_")
        n = self.oob_.shape[0]
        return {
            "kind": self.kind,
            "dim": self.n_features_in_,
            "n": n,
            "seed": self.seed_,
            "base_kind": getattr(self.estimators_[0], "kind", type(self.estimators_[0]).__name__),
            "omega": self.omega_.tolist(),
            "oob": [base64.b64encode(np.packbits(col).tobytes()).decode("ascii") for col in self.oob_.T],
            "trees": [e.to_dict() for e in self.estimators_],
            "data": self.X_.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> CopulaForest:
        if doc.get("kind") != cls.kind:
            raise ValueError(f"not a forest: kind={doc.get('kind')!r}")
        from cortkit.io import model_from_dict

        model = cls(n_estimators=len(doc["trees"]), random_state=doc.get("seed"))
        n = int(doc["n"])
        model.estimators_ = [model_from_dict(t) for t in doc["trees"]]
        model.seed_ = doc.get("seed")
        model.dropped_ = []
        cols = [np.unpackbits(np.frombuffer(base64.b64decode(s), dtype=np.uint8))[:n].astype(bool) for s in doc["oob"]]
        model.oob_ = np.column_stack(cols)
        model.X_ = np.asarray(doc["data"], dtype=float).reshape(n, int(doc["dim"]))
        model.n_features_in_ = int(doc["dim"])
        model.omega_ = np.asarray(doc["omega"], dtype=float)
        model.gram_ = gram_matrix(model.estimators_)
        model.densities_ = np.column_stack([e.pdf(model.X_) for e in model.estimators_])
        model._cdfs = None
        model.optimization_ = None
        return model


def fit_forest(data, n_estimators: int, base_estimator=None, seed=None, **options) -> CopulaForest:
    """Functional shortcut for ``CopulaForest(...).fit(data)``."""
    return CopulaForest(base_estimator, n_estimators, random_state=seed, **options).fit(data)
