"""Comparator copula estimators sharing the :class:`cortkit.cort.Cort` interface.

* :class:`EmpiricalCopula` puts mass ``1/n`` on every pseudo-observation.
  Its "density" is taken with respect to the counting measure on the atoms,
  so it vanishes away from the sample and ``|c|^2 = sum(mass**2)``.
* :class:`CheckerboardCopula` is the histogram on the regular ``m``-grid.
* :class:`EmpiricalBetaCopula` mixes products of ``Beta(r, n + 1 - r)``
  laws over the rank vectors of the sample.
"""

from __future__ import annotations

import json

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special, stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from cortkit._rng import make_rng
from cortkit._validation import check_points, check_pseudo_obs
from cortkit.partition import Partition
from cortkit.plc import PiecewiseLinearCopula
from cortkit.qp import QpConvergenceError, QpOptions, solve_weights


def reg_incomplete_beta(x, a, b):
    """Regularized incomplete beta function ``I_x(a, b)``.

    Thin validating wrapper around :func:`scipy.special.betainc`.
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~np.isfinite(x)) or np.any((x < 0) | (x > 1)):
        raise ValueError("x must lie in [0, 1]")
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise ValueError("a and b must be positive")
    out = special.betainc(a, b, x)
    return float(out) if out.ndim == 0 else out


def _sample_measures(data: np.ndarray, i: int, j: int):
    tau = stats.kendalltau(data[:, i], data[:, j]).statistic
    rho = stats.spearmanr(data[:, i], data[:, j]).statistic
    return float(tau), float(rho)


def _check_pair(i, j, d):
    if i == j or not (0 <= i < d and 0 <= j < d):
        raise ValueError(f"need two distinct dimensions in [0, {d})")


# -- empirical copula ----------------------------------------------------------


class EmpiricalCopula(BaseEstimator):
    """Empirical copula of a sample of pseudo-observations.

    ``pdf`` returns the mass of the atom at each query point (0 off the
    sample); ``is_atom`` flags the points where that mass is positive.
    """

    kind = "empirical"
    has_density = False

    def fit(self, X, y=None):
        X = check_pseudo_obs(X)
        atoms, counts = np.unique(X, axis=0, return_counts=True)
        self.data_ = X
        self.atoms_ = atoms
        self.masses_ = counts / X.shape[0]
        self.n_features_in_ = X.shape[1]
        self.n_samples_fit_ = X.shape[0]
        self._index = {tuple(row): k for k, row in enumerate(atoms)}
        return self

    @property
    def dim(self) -> int:
        check_is_fitted(self, "atoms_")
        return self.n_features_in_

    def _atom_ids(self, X) -> np.ndarray:
        X = check_points(X, self.dim)
        return np.array([self._index.get(tuple(row), -1) for row in X], dtype=np.intp)

    def is_atom(self, X) -> np.ndarray:
        return self._atom_ids(X) >= 0

    def pdf(self, X) -> np.ndarray:
        ids = self._atom_ids(X)
        return np.where(ids >= 0, self.masses_[np.maximum(ids, 0)], 0.0)

    density = pdf

    def cdf(self, X) -> np.ndarray:
        X = check_points(X, self.dim)
        out = np.empty(X.shape[0])
        chunk = max(1, 1_000_000 // max(1, self.atoms_.shape[0] * self.dim))
        for s in range(0, X.shape[0], chunk):
            below = np.all(self.atoms_[None] <= X[s:s + chunk, None], axis=2)
            out[s:s + chunk] = below @ self.masses_
        return out

    def sample(self, n_samples: int, random_state=None) -> np.ndarray:
        check_is_fitted(self, "atoms_")
        rng = make_rng(random_state)
        return self.atoms_[rng.choice(self.atoms_.shape[0], size=n_samples, p=self.masses_)]

    def l2_norm_sq(self) -> float:
        check_is_fitted(self, "atoms_")
        return float(self.masses_ @ self.masses_)

    def inner_product(self, other) -> float:
        """Sum over shared atoms of the product of their masses."""
        if not isinstance(other, EmpiricalCopula):
            raise TypeError("empirical copulas only pair with empirical copulas")
        return float(other.pdf(self.atoms_) @ self.masses_)

    def pairwise_measures(self, i: int, j: int):
        """Sample Kendall tau and Spearman rho of columns ``i`` and ``j``."""
        check_is_fitted(self, "atoms_")
        _check_pair(i, j, self.dim)
        return _sample_measures(self.data_, i, j)

    def kendall_tau(self) -> float:
        return self.pairwise_measures(0, 1)[0]

    def spearman_rho(self) -> float:
        return self.pairwise_measures(0, 1)[1]

    def eise(self, X) -> float:
        return float(self.l2_norm_sq() - 2 * np.mean(self.pdf(X)))

    def to_dict(self) -> dict:
        check_is_fitted(self, "atoms_")
        return {"kind": self.kind, "dim": self.dim, "data": self.data_.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> EmpiricalCopula:
        _check_kind(doc, cls.kind)
        return cls().fit(np.asarray(doc["data"], dtype=float).reshape(-1, int(doc["dim"])))


# -- checkerboard copula -------------------------------------------------------


def grid_cells(X: np.ndarray, m: int) -> np.ndarray:
    """Flat index (dimension 0 fastest) of the half-open grid cell holding each point."""
    idx = np.clip(np.ceil(X * m).astype(np.intp) - 1, 0, m - 1)
    return idx @ (m ** np.arange(X.shape[1]))


class CheckerboardCopula(BaseEstimator):
    """Histogram on the regular grid of side ``1/m``.

    Parameters
    ----------
    m : int, default=10
        Cells per dimension.
    project : bool, default=False
        Project the cell frequencies onto exact copula weights (see
        :func:`cortkit.qp.solve_weights`). Off by default: the raw
        frequencies need not have uniform margins.
    qp_tol : float, default=1e-9
    """

    kind = "checkerboard"
    has_density = True

    def __init__(self, m=10, project=False, qp_tol=1e-9):
        self.m = m
        self.project = project
        self.qp_tol = qp_tol

    def fit(self, X, y=None):
        m = int(self.m)
        if m < 1:
            raise ValueError("m must be at least 1")
        X = check_pseudo_obs(X)
        n, d = X.shape
        grid = Partition.grid(m, d)
        freqs = np.bincount(grid_cells(X, m), minlength=len(grid)) / n
        weights = freqs
        self.qp_ = None
        if self.project:
            self.qp_ = solve_weights(grid, freqs, QpOptions(feasibility_tol=float(self.qp_tol)))
            if not self.qp_.converged:
                raise QpConvergenceError("checkerboard projection did not converge", self.qp_)
            weights = self.qp_.p_star / self.qp_.p_star.sum()
        self.frequencies_ = freqs
        self.copula_ = PiecewiseLinearCopula(grid, weights)
        self.partition_ = grid
        self.n_features_in_ = d
        self.n_samples_fit_ = n
        return self

    @property
    def dim(self) -> int:
        check_is_fitted(self, "copula_")
        return self.n_features_in_

    @property
    def n_leaves_(self) -> int:
        check_is_fitted(self, "copula_")
        return self.copula_.n_leaves

    def pdf(self, X) -> np.ndarray:
        X = check_points(X, self.dim)
        return self.copula_.weights[grid_cells(X, int(self.m))] * float(self.m) ** self.dim

    density = pdf

    def cdf(self, X) -> np.ndarray:
        return self.copula_.cdf(check_points(X, self.dim))

    def sample(self, n_samples: int, random_state=None) -> np.ndarray:
        check_is_fitted(self, "copula_")
        return self.copula_.sample(n_samples, random_state)

    def l2_norm_sq(self) -> float:
        check_is_fitted(self, "copula_")
        return self.copula_.l2_norm_sq()

    def inner_product(self, other) -> float:
        from cortkit.cort import _as_plc

        check_is_fitted(self, "copula_")
        return self.copula_.inner_product(_as_plc(other))

    def pairwise_measures(self, i: int, j: int):
        check_is_fitted(self, "copula_")
        return self.copula_.pairwise_measures(i, j)

    def kendall_tau(self) -> float:
        return self.copula_.kendall_tau()

    def spearman_rho(self) -> float:
        return self.copula_.spearman_rho()

    def is_copula(self, tolerance: float = 1e-8):
        check_is_fitted(self, "copula_")
        return self.copula_.is_copula(tolerance)

    def eise(self, X) -> float:
        return float(self.l2_norm_sq() - 2 * np.mean(self.pdf(X)))

    def to_dict(self) -> dict:
        check_is_fitted(self, "copula_")
        return {
            "kind": self.kind,
            "dim": self.dim,
            "n": self.n_samples_fit_,
            "params": self.get_params(),
            "frequencies": self.frequencies_.tolist(),
            "weights": self.copula_.weights.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> CheckerboardCopula:
        _check_kind(doc, cls.kind)
        model = cls(**doc.get("params", {}))
        grid = Partition.grid(int(model.m), int(doc["dim"]))
        model.partition_ = grid
        model.frequencies_ = np.asarray(doc["frequencies"], dtype=float)
        model.copula_ = PiecewiseLinearCopula(grid, doc["weights"])
        model.qp_ = None
        model.n_features_in_ = int(doc["dim"])
        model.n_samples_fit_ = int(doc.get("n", 0))
        return model


# -- empirical beta copula -----------------------------------------------------


def _log_beta_pdf(u: np.ndarray, r: np.ndarray, n: int) -> np.ndarray:
    """``log Beta(r, n + 1 - r)`` density at ``u``, broadcast as ``u[:, None]`` x ``r``."""
    u = u[:, None]
    a = r[None].astype(float)
    b = n + 1.0 - a
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.xlogy(a - 1, u) + special.xlog1py(b - 1, -u) - special.betaln(a, b)
    return out


def beta_overlap(r, n1: int, s, n2: int) -> np.ndarray:
    """``int Beta(u; r, n1+1-r) Beta(u; s, n2+1-s) du`` for all pairs of ``r`` and ``s``."""
    a = np.asarray(r, dtype=float)[:, None]
    c = np.asarray(s, dtype=float)[None]
    b, e = n1 + 1.0 - a, n2 + 1.0 - c
    return np.exp(special.betaln(a + c - 1, b + e - 1) - special.betaln(a, b) - special.betaln(c, e))


def beta_order_prob(n: int) -> np.ndarray:
    """``H[r-1, s-1] = P(X <= Y)`` for independent ``X ~ Beta(r, n+1-r)``, ``Y ~ Beta(s, n+1-s)``.

    The integrand ``I_u(r, .) * pdf(u; s, .)`` is a polynomial of degree
    ``2n - 1``, so Gauss-Legendre with ``n`` nodes is exact.
    """
    nodes, w = leggauss(max(n, 1))
    u = (nodes + 1) / 2
    w = w / 2
    ranks = np.arange(1, n + 1)
    cdf = special.betainc(ranks[None].astype(float), n + 1.0 - ranks[None], u[:, None])
    pdf = np.exp(_log_beta_pdf(u, ranks, n))
    return cdf.T @ (w[:, None] * pdf)


class EmpiricalBetaCopula(BaseEstimator):
    """Empirical beta copula built from the column ranks of the sample."""

    kind = "beta"
    has_density = True

    def fit(self, X, y=None):
        X = check_pseudo_obs(X)
        self._set_ranks(stats.rankdata(X, method="ordinal", axis=0).astype(np.intp))
        return self

    def _set_ranks(self, ranks):
        ranks = np.asarray(ranks, dtype=np.intp)
        n = ranks.shape[0]
        if np.any(np.sort(ranks, axis=0) != np.arange(1, n + 1)[:, None]):
            raise ValueError("every rank column must be a permutation of 1..n")
        self.ranks_ = ranks
        self.n_features_in_ = ranks.shape[1]
        self.n_samples_fit_ = n
        self._order_prob = None

    @property
    def dim(self) -> int:
        check_is_fitted(self, "ranks_")
        return self.n_features_in_

    def pdf(self, X) -> np.ndarray:
        X = check_points(X, self.dim)
        n = self.n_samples_fit_
        out = np.empty(X.shape[0])
        chunk = max(1, 500_000 // max(1, n))
        for s in range(0, X.shape[0], chunk):
            logs = np.zeros((min(chunk, X.shape[0] - s), n))
            for j in range(self.dim):
                logs += _log_beta_pdf(X[s:s + chunk, j], self.ranks_[:, j], n)
            out[s:s + chunk] = np.exp(logs).mean(axis=1)
        return out

    density = pdf

    def cdf(self, X) -> np.ndarray:
        X = check_points(X, self.dim)
        n = self.n_samples_fit_
        out = np.empty(X.shape[0])
        chunk = max(1, 500_000 // max(1, n))
        for s in range(0, X.shape[0], chunk):
            prod = np.ones((min(chunk, X.shape[0] - s), n))
            for j in range(self.dim):
                r = self.ranks_[:, j].astype(float)[None]
                prod *= special.betainc(r, n + 1.0 - r, X[s:s + chunk, j][:, None])
            out[s:s + chunk] = prod.mean(axis=1)
        return out

    def sample(self, n_samples: int, random_state=None) -> np.ndarray:
        check_is_fitted(self, "ranks_")
        rng = make_rng(random_state)
        rows = self.ranks_[rng.integers(0, self.n_samples_fit_, size=n_samples)].astype(float)
        return rng.beta(rows, self.n_samples_fit_ + 1.0 - rows)

    def l2_norm_sq(self) -> float:
        return self.inner_product(self)

    def inner_product(self, other) -> float:
        if not isinstance(other, EmpiricalBetaCopula):
            raise TypeError("beta copulas only pair with beta copulas")
        check_is_fitted(self, "ranks_")
        n1, n2 = self.n_samples_fit_, other.n_samples_fit_
        table = beta_overlap(np.arange(1, n1 + 1), n1, np.arange(1, n2 + 1), n2)
        prod = np.ones((n1, n2))
        for j in range(self.dim):
            prod *= table[np.ix_(self.ranks_[:, j] - 1, other.ranks_[:, j] - 1)]
        return float(prod.sum() / (n1 * n2))

    def pairwise_measures(self, i: int, j: int):
        """Kendall tau and Spearman rho of the ``(i, j)`` margin in closed form."""
        check_is_fitted(self, "ranks_")
        _check_pair(i, j, self.dim)
        n = self.n_samples_fit_
        if self._order_prob is None:
            self._order_prob = beta_order_prob(n)
        h = self._order_prob
        ri, rj = self.ranks_[:, i] - 1, self.ranks_[:, j] - 1
        integral = np.sum(h[np.ix_(ri, ri)] * h[np.ix_(rj, rj)]) / n**2
        tau = 4 * integral - 1
        # int C du = mean over rows of prod_j (n + 1 - r) / (n + 1)
        upper = (n + 1.0 - self.ranks_[:, [i, j]]) / (n + 1.0)
        rho = 12 * np.mean(np.prod(upper, axis=1)) - 3
        return float(tau), float(rho)

    def kendall_tau(self) -> float:
        return self.pairwise_measures(0, 1)[0]

    def spearman_rho(self) -> float:
        return self.pairwise_measures(0, 1)[1]

    def eise(self, X) -> float:
        return float(self.l2_norm_sq() - 2 * np.mean(self.pdf(X)))

    def to_dict(self) -> dict:
        check_is_fitted(self, "ranks_")
        return {"kind": self.kind, "dim": self.dim, "ranks": self.ranks_.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> EmpiricalBetaCopula:
        _check_kind(doc, cls.kind)
        model = cls()
        model._set_ranks(np.asarray(doc["ranks"], dtype=np.intp).reshape(-1, int(doc["dim"])))
        return model


def _check_kind(doc: dict, kind: str) -> None:
    if doc.get("kind") != kind:
        raise ValueError(f"not a {kind} model: kind={doc.get('kind')!r}")
