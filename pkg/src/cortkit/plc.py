"""Piecewise linear copulas: a partition of the unit cube weighted leaf by leaf."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from cortkit._rng import make_rng
from cortkit.partition import Partition, g_integral_array

WEIGHT_TOL = 1e-9


@dataclass
class CopulaCheck:
    """Outcome of :meth:`PiecewiseLinearCopula.is_copula`."""

    ok: bool
    worst: float
    tolerance: float
    violations: list = field(default_factory=list)
    weight_error: float = 0.0

    def __bool__(self):
        return self.ok


class PiecewiseLinearCopula:
    """Distribution with density ``weights[l] / volume[l]`` on each leaf.

    Parameters
    ----------
    partition : Partition
        Leaves tiling the unit cube.
    weights : array-like of shape (n_leaves,)
        Probability mass of each leaf.
    """

    kind = "plc"

    def __init__(self, partition: Partition, weights):
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if weights.size != len(partition):
            raise ValueError(f"{weights.size} weights for {len(partition)} leaves")
        if np.any(weights < -WEIGHT_TOL) or abs(weights.sum() - 1) > WEIGHT_TOL:
            raise ValueError("weights must be non-negative and sum to one")
        self.partition = partition
        self.weights = np.clip(weights, 0.0, None)
        self.weights.setflags(write=False)

    @classmethod
    def independence(cls, dim: int) -> PiecewiseLinearCopula:
        return cls(Partition.unit(dim), [1.0])

    @property
    def dim(self) -> int:
        return self.partition.dim

    @property
    def n_leaves(self) -> int:
        return len(self.partition)

    def _nonzero(self):
        keep = self.weights > 0
        p = self.partition
        return p.lower[keep], p.upper[keep], self.weights[keep]

    # -- pointwise evaluation -------------------------------------------------

    def locate(self, X) -> np.ndarray:
        return self.partition.locate(X)

    def pdf(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = self.locate(X)
        if np.any(idx < 0):
            raise ValueError("points outside every leaf; is the partition malformed?")
        return self.weights[idx] / self.partition.volumes[idx]

    def cdf(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lower, upper, w = self._nonzero()
        sides = upper - lower
        out = np.empty(X.shape[0])
        chunk = max(1, 1_000_000 // max(1, w.size * self.dim))
        for s in range(0, X.shape[0], chunk):
            u = X[s:s + chunk, None, :]
            frac = np.clip(u - lower, 0.0, sides) / sides
            out[s:s + chunk] = np.prod(frac, axis=2) @ w
        return out

    def sample(self, n_samples: int, random_state=None) -> np.ndarray:
        rng = make_rng(random_state)
        leaves = rng.choice(self.n_leaves, size=n_samples, p=self.weights / self.weights.sum())
        u = rng.random((n_samples, self.dim))
        upper = self.partition.upper[leaves]
        return upper - u * (upper - self.partition.lower[leaves])

    # -- L2 geometry ----------------------------------------------------------

    def l2_norm_sq(self) -> float:
        return float(np.sum(self.weights**2 / self.partition.volumes))

    def inner_product(self, other: PiecewiseLinearCopula) -> float:
        """Integral of the product of the two densities."""
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return plc_inner_product(*self._nonzero(), *other._nonzero())

    # -- dependence measures --------------------------------------------------

    def kendall_tau(self) -> float:
        lower, upper, w = self._nonzero()
        return kendall_tau_boxes(lower, upper, w)

    def spearman_rho(self) -> float:
        lower, upper, w = self._nonzero()
        return spearman_rho_boxes(lower, upper, w)

    def pairwise_measures(self, i: int, j: int) -> tuple[float, float]:
        """Kendall tau and Spearman rho of the ``(i, j)`` bivariate margin."""
        if i == j:
            raise ValueError("need two distinct dimensions")
        lower, upper, w = project_boxes(*self._nonzero(), (i, j))
        return kendall_tau_boxes(lower, upper, w), spearman_rho_boxes(lower, upper, w)

    # -- copula constraints ---------------------------------------------------

    def marginal_cdf(self, dim: int, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        lo = self.partition.lower[:, dim]
        side = self.partition.upper[:, dim] - lo
        frac = np.clip(u[..., None] - lo, 0.0, side) / side
        return frac @ self.weights

    def is_copula(self, tolerance: float = 1e-8) -> CopulaCheck:
        """Marginal uniformity checked at every leaf midpoint, plus weight sanity."""
        mids = self.partition.midpoints
        gaps = np.column_stack(
            [np.abs(self.marginal_cdf(i, mids[:, i]) - mids[:, i]) for i in range(self.dim)]
        )
        worst = float(gaps.max())
        weight_error = max(abs(float(self.weights.sum()) - 1.0), float(-min(self.weights.min(), 0)))
        where = np.argwhere(gaps >= worst - 1e-15) if worst > 0 else np.empty((0, 2), int)
        violations = [
            {"leaf": int(leaf), "dim": int(dim), "point": mids[leaf].tolist(), "gap": float(gaps[leaf, dim])}
            for leaf, dim in where
        ]
        ok = worst <= tolerance and weight_error <= max(tolerance, WEIGHT_TOL)
        return CopulaCheck(ok, worst, tolerance, violations, weight_error)

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        p = self.partition
        return {
            "kind": self.kind,
            "dim": self.dim,
            "leaves": [
                {"lower": lo.tolist(), "upper": up.tolist(), "weight": float(w)}
                for lo, up, w in zip(p.lower, p.upper, self.weights)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> PiecewiseLinearCopula:
        leaves = doc["leaves"]
        partition = Partition([l["lower"] for l in leaves], [l["upper"] for l in leaves])
        if partition.dim != doc["dim"]:
            raise ValueError("leaf bounds disagree with the declared dimension")
        return cls(partition, [l["weight"] for l in leaves])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, n_leaves={self.n_leaves})"


def plc_inner_product(lo1, up1, w1, lo2, up2, w2) -> float:
    vol1 = np.prod(up1 - lo1, axis=1)
    vol2 = np.prod(up2 - lo2, axis=1)
    total = 0.0
    chunk = max(1, 2_000_000 // max(1, w2.size * lo1.shape[1]))
    for s in range(0, w1.size, chunk):
        lo = np.maximum(lo1[s:s + chunk, None], lo2[None])
        up = np.minimum(up1[s:s + chunk, None], up2[None])
        inter = np.prod(np.clip(up - lo, 0.0, None), axis=2)
        a = w1[s:s + chunk] / vol1[s:s + chunk]
        total += a @ inter @ (w2 / vol2)
    return float(total)


def project_boxes(lower, upper, weights, dims):
    """Project boxes on ``dims`` and merge identical images, summing weights."""
    dims = list(dims)
    keys = np.hstack([lower[:, dims], upper[:, dims]])
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    merged = np.bincount(inverse.reshape(-1), weights=weights, minlength=uniq.shape[0])
    k = len(dims)
    return uniq[:, :k], uniq[:, k:], merged


def kendall_tau_boxes(lower, upper, weights) -> float:
    """``4 * integral of C dC - 1`` for a mixture of uniform distributions on boxes."""
    vol = np.prod(upper - lower, axis=1)
    dens = weights / vol
    total = 0.0
    chunk = max(1, 2_000_000 // max(1, weights.size * lower.shape[1]))
    for s in range(0, weights.size, chunk):
        a, b = lower[s:s + chunk, None], upper[s:s + chunk, None]
        g = np.prod(g_integral_array(a, b, lower[None], upper[None]), axis=2)
        total += dens[s:s + chunk] @ g @ dens
    return float(4 * total - 1)


def spearman_rho_boxes(lower, upper, weights) -> float:
    """``12 * integral of C du - 3`` for a mixture of uniform distributions on boxes."""
    d = lower.shape[1]
    inner = np.prod(2 - lower - upper, axis=1) @ weights
    return float(12 * 2.0 ** (-d) * inner - 3)
