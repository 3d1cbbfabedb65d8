"""Copula recursive trees.

A tree is grown by recursive simple splits of the unit cube. Each split
minimises the surrogate loss ``-sum(f_k**2 / vol_k)`` over its children,
where ``f_k`` is the fraction of the whole sample inside child ``k``.
Optionally, a Monte-Carlo test decides per leaf which dimensions are worth
splitting. The copula constraints are ignored while growing and imposed
once at the end by projecting the leaf frequencies (see :mod:`cortkit.qp`).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from cortkit._rng import derive_rng, draw_seed, make_rng
from cortkit._validation import check_points, check_pseudo_obs
from cortkit.partition import Box, Partition, child_bounds
from cortkit.plc import PiecewiseLinearCopula
from cortkit.qp import QpConvergenceError, QpOptions, solve_weights

logger = logging.getLogger(__name__)

MAX_SWEEPS = 20
LOSS_TOL = 1e-12


# -- split geometry ----------------------------------------------------------


def child_index(points: np.ndarray, x, dims) -> np.ndarray:
    """Child of a simple split holding each point, numbered as in ``child_bounds``."""
    idx = np.zeros(points.shape[0], dtype=np.intp)
    for t, j in enumerate(dims):
        idx |= (points[:, j] > x[j]).astype(np.intp) << t
    return idx


def _child_volumes(lower, upper, x, dims) -> np.ndarray:
    lows, ups = child_bounds(lower, upper, x, dims)
    return np.prod(ups - lows, axis=1)


def _check_interior(lower, upper, x, dims):
    x = np.asarray(x, dtype=float)
    if np.any(x[list(dims)] <= lower[list(dims)]) or np.any(x[list(dims)] >= upper[list(dims)]):
        raise ValueError(f"breakpoint {x.tolist()} is not strictly inside the leaf along {list(dims)}")
    return x


def surrogate_loss(leaf: Box, points, x, dims, n_total: int) -> float:
    """Leaf-local split criterion ``-sum_k f_k**2 / vol(k)`` over the children."""
    points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, leaf.dim)
    dims = sorted(set(dims))
    x = _check_interior(leaf.lower, leaf.upper, x, dims)
    vols = _child_volumes(leaf.lower, leaf.upper, x, dims)
    counts = np.bincount(child_index(points, x, dims), minlength=vols.size)
    f = counts / n_total
    return float(-np.sum(f * f / vols))


def _candidates(values: np.ndarray, a: float, b: float) -> np.ndarray:
    """Midpoints between consecutive distinct values, the median and the centre."""
    v = np.unique(values)
    extra = [(a + b) / 2]
    if values.size:
        extra.append(float(np.median(values)))
    cand = np.unique(np.concatenate([(v[1:] + v[:-1]) / 2, extra]))
    return cand[(cand > a) & (cand < b)]


def _scan(points, lower, upper, x, dims, j, cand, n_total):
    """Surrogate loss of every candidate value for coordinate ``j``."""
    rest = [k for k in dims if k != j]
    a, b = lower[j], upper[j]
    lows, ups = child_bounds(lower, upper, x, rest)
    per_length = np.prod(ups - lows, axis=1) / (b - a)
    group = child_index(points, x, rest)
    loss = np.zeros(cand.size)
    for g in range(per_length.size):
        vals = np.sort(points[group == g, j])
        low = np.searchsorted(vals, cand, side="right").astype(float)
        high = vals.size - low
        loss -= (low * low / (cand - a) + high * high / (b - cand)) / per_length[g]
    return loss / float(n_total) ** 2


def _pick(loss: np.ndarray, cand: np.ndarray):
    best = loss.min()
    near = np.flatnonzero(loss <= best + LOSS_TOL * max(1.0, abs(best)))
    k = near[np.argmin(cand[near])]
    return cand[k], loss[k]


def _descend(points, lower, upper, dims, n_total, start, cands):
    x = start.copy()
    current = None
    for _ in range(MAX_SWEEPS):
        moved = False
        for j in dims:
            loss = _scan(points, lower, upper, x, dims, j, cands[j], n_total)
            value, best = _pick(loss, cands[j])
            if current is None or best < current - LOSS_TOL * max(1.0, abs(current)):
                moved = moved or value != x[j]
                x[j], current = value, best
        if not moved:
            break
    return x, current


def find_breakpoint(leaf: Box, points, dims, n_total: int):
    """Breakpoint minimising the surrogate loss of a simple split on ``dims``.

    Candidates per coordinate are the midpoints between consecutive distinct
    in-leaf values, the in-leaf median and the leaf centre. Coordinate
    descent runs from the median and from the centre; the better end point
    wins, and ties go to the lexicographically smaller breakpoint.

    Returns
    -------
    x : ndarray of shape (d,)
        Breakpoint; coordinates outside ``dims`` are set to the leaf centre.
    loss : float
    """
    points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, leaf.dim)
    dims = sorted(set(int(j) for j in dims))
    if not dims:
        raise ValueError("at least one splitting dimension is required")
    lower, upper = leaf.lower, leaf.upper
    centre = leaf.midpoint
    cands = {j: _candidates(points[:, j], lower[j], upper[j]) for j in dims}
    starts = [centre.copy()]
    if points.shape[0]:
        med = centre.copy()
        for j in dims:
            m = float(np.median(points[:, j]))
            if lower[j] < m < upper[j]:
                med[j] = m
        starts.insert(0, med)
    best = None
    for start in starts:
        x, loss = _descend(points, lower, upper, dims, n_total, start, cands)
        if best is None or loss < best[1] - LOSS_TOL * max(1.0, abs(best[1])):
            best = (x, loss)
        elif abs(loss - best[1]) <= LOSS_TOL * max(1.0, abs(best[1])) and tuple(x) < tuple(best[0]):
            best = (x, loss)
    return best


# -- localized dimension reduction -------------------------------------------


def dimension_statistic(leaf: Box, points, x_star, j: int, n_total: int, dims=None) -> float:
    """Squared distance between the split density and its version uniform along ``j``.

    ``dims`` is the set the breakpoint splits (default: every dimension).
    Fine children split on ``dims``; coarse ones on ``dims`` minus ``j``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, leaf.dim)
    dims = sorted(set(range(leaf.dim) if dims is None else dims))
    if j not in dims:
        raise ValueError(f"dimension {j} is not among the splitting dimensions {dims}")
    x_star = _check_interior(leaf.lower, leaf.upper, x_star, dims)
    rest = [k for k in dims if k != j]
    fine_vol = _child_volumes(leaf.lower, leaf.upper, x_star, dims)
    coarse_vol = _child_volumes(leaf.lower, leaf.upper, x_star, rest) if rest else np.array([leaf.sides.prod()])
    fine = np.bincount(child_index(points, x_star, dims), minlength=fine_vol.size) / n_total
    coarse = np.bincount(child_index(points, x_star, rest), minlength=coarse_vol.size) / n_total
    # fine child -> coarse parent: drop the bit of j
    t = dims.index(j)
    ids = np.arange(fine_vol.size)
    parent = (ids & ((1 << t) - 1)) | ((ids >> (t + 1)) << t)
    total = np.sum(coarse**2 / coarse_vol)
    total += np.sum(fine**2 / fine_vol - 2 * coarse[parent] * fine / coarse_vol[parent])
    return float(total)


def _null_statistics(points, lower, upper, x, dims, j, n_sim, rng, n_total):
    """Statistic for ``n_sim`` copies of the leaf data with column ``j`` redrawn.

    The ``j``-th breakpoint coordinate is refitted on every copy over the
    same kind of candidate set, as it was on the observed data.
    """
    rest = [k for k in dims if k != j]
    a, b = lower[j], upper[j]
    m = points.shape[0]
    group = child_index(points, x, rest)
    lows, ups = child_bounds(lower, upper, x, rest)
    per_length = np.prod(ups - lows, axis=1) / (b - a)
    G = per_length.size
    group_n = np.bincount(group, minlength=G).astype(float)
    coarse = np.sum(group_n**2 / (per_length * (b - a))) / float(n_total) ** 2

    draws = b - (b - a) * rng.random((n_sim, m))
    order = np.argsort(draws, axis=1)
    sorted_draws = np.take_along_axis(draws, order, axis=1)
    labels = group[order]
    cum = np.zeros((n_sim, m + 1, G))
    cum[:, 1:, :] = np.cumsum(labels[:, :, None] == np.arange(G), axis=1)

    # candidate values and how many sorted draws lie at or below each
    offsets = 2.0 * np.arange(n_sim)[:, None]
    flat = (sorted_draws + offsets).ravel()
    extra = np.column_stack([np.median(draws, axis=1), np.full(n_sim, (a + b) / 2)])
    extra_rank = np.searchsorted(flat, (extra + offsets).ravel(), side="right").reshape(n_sim, 2)
    extra_rank -= (m * np.arange(n_sim))[:, None]
    values = np.concatenate([(sorted_draws[:, 1:] + sorted_draws[:, :-1]) / 2, extra], axis=1)
    ranks = np.concatenate([np.broadcast_to(np.arange(2, m + 1), (n_sim, m - 1)), extra_rank], axis=1)

    low = np.take_along_axis(cum, ranks[:, :, None], axis=1)
    high = group_n - low
    with np.errstate(divide="ignore", invalid="ignore"):
        fine = np.sum(
            (low**2 / (values - a)[:, :, None] + high**2 / (b - values)[:, :, None]) / per_length, axis=2
        )
    fine = np.where((values > a) & (values < b), fine, -np.inf)
    return fine.max(axis=1) / float(n_total) ** 2 - coarse


def _breakpoint_for_test(leaf, points, dims, j, n_total):
    """Breakpoint used to test dimension ``j``.

    The other coordinates sit at the in-leaf medians (the leaf centre when
    a median is not interior) and do not look at column ``j``; only
    ``x_j`` is fitted. Redrawing column ``j`` and refitting ``x_j`` the same
    way therefore gives an exchangeable null.
    """
    x = leaf.midpoint.copy()
    for k in dims:
        if k != j and points.shape[0]:
            m = float(np.median(points[:, k]))
            if leaf.lower[k] < m < leaf.upper[k]:
                x[k] = m
    cand = _candidates(points[:, j], leaf.lower[j], leaf.upper[j])
    loss = _scan(points, leaf.lower, leaf.upper, x, dims, j, cand, n_total)
    x[j] = _pick(loss, cand)[0]
    return x


def select_dimensions(
    leaf: Box,
    points,
    n_total: int,
    dims=None,
    n_simulations: int = 100,
    alpha: float = 0.05,
    random_state=None,
    rule: str = "reject",
):
    """Dimensions along which the leaf data departs from conditional uniformity.

    For each candidate dimension ``j`` the observed statistic is compared
    with ``n_simulations`` copies where column ``j`` is redrawn uniformly
    on the leaf. With ``rule="reject"`` dimension ``j`` is kept when the
    Monte-Carlo p-value ``mean(s_i >= s)`` is at most ``alpha``. With
    ``rule="literal"`` it is kept when ``mean(s < s_i) > 1 - alpha``.

    Returns
    -------
    kept : tuple of int
    p_values : dict
        Monte-Carlo p-value per tested dimension.
    x_star : ndarray
        Breakpoint found on all candidate dimensions.
    """
    if rule not in ("reject", "literal"):
        raise ValueError(f"unknown test rule {rule!r}")
    points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, leaf.dim)
    dims = sorted(set(range(leaf.dim) if dims is None else dims))
    rng = make_rng(random_state)
    x_star, _ = find_breakpoint(leaf, points, dims, n_total)
    kept, p_values = [], {}
    for j in dims:
        x = _breakpoint_for_test(leaf, points, dims, j, n_total)
        s = dimension_statistic(leaf, points, x, j, n_total, dims)
        sims = _null_statistics(points, leaf.lower, leaf.upper, x, dims, j, n_simulations, rng, n_total)
        # guard against rounding between the two evaluation paths
        tol = 1e-12 * max(1.0, abs(s))
        if rule == "reject":
            p = float(np.mean(sims >= s - tol))
            keep = p <= alpha
        else:
            p = float(np.mean(sims > s + tol))
            keep = p > 1 - alpha
        p_values[j] = p
        if keep:
            kept.append(j)
    return tuple(kept), p_values, x_star


# -- the tree ----------------------------------------------------------------


@dataclass
class CortNode:
    """A node of a fitted tree; leaves carry their index in the partition."""

    lower: np.ndarray
    upper: np.ndarray
    x: np.ndarray | None = None
    dims: tuple = ()
    children: list = field(default_factory=list)
    leaf: int = -1

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def box(self) -> Box:
        return Box(self.lower, self.upper)

    def leaves(self):
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
            else:
                stack.extend(reversed(node.children))

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(c.depth() for c in self.children)

    def route(self, X: np.ndarray) -> np.ndarray:
        """Leaf index of every row of ``X`` (rows must lie in this node's box)."""
        out = np.full(X.shape[0], -1, dtype=np.intp)
        stack = [(self, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                out[idx] = node.leaf
                continue
            k = child_index(X[idx], node.x, node.dims)
            for c, child in enumerate(node.children):
                stack.append((child, idx[k == c]))
        return out

    def to_dict(self, weights=None, freqs=None) -> dict:
        doc = {"box": {"lower": self.lower.tolist(), "upper": self.upper.tolist()}}
        if self.is_leaf:
            doc["leaf"] = {
                "weight": None if weights is None else float(weights[self.leaf]),
                "freq": None if freqs is None else float(freqs[self.leaf]),
            }
        else:
            doc["x"] = self.x.tolist()
            doc["D"] = list(self.dims)
            doc["children"] = [c.to_dict(weights, freqs) for c in self.children]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> CortNode:
        node = cls(np.asarray(doc["box"]["lower"], float), np.asarray(doc["box"]["upper"], float))
        if "children" in doc:
            node.x = np.asarray(doc["x"], float)
            node.dims = tuple(int(j) for j in doc["D"])
            node.children = [cls.from_dict(c) for c in doc["children"]]
            lows, ups = child_bounds(node.lower, node.upper, node.x, node.dims)
            for c, lo, up in zip(node.children, lows, ups):
                if not (np.array_equal(c.lower, lo) and np.array_equal(c.upper, up)):
                    raise ValueError("child boxes do not match the recorded split")
        return node


def _distinct(points: np.ndarray, dims) -> int:
    if points.shape[0] <= 1:
        return points.shape[0]
    return np.unique(points[:, list(dims)], axis=0).shape[0]


class Cort(BaseEstimator):
    """Copula recursive tree estimator.

    Parameters
    ----------
    min_node_size : int, default=2
        A leaf is split only while it holds at least this many distinct
        observations (distinct along the dimensions it may still split).
    dim_reduction : bool, default=True
        Run the per-leaf Monte-Carlo test choosing the splitting dimensions.
        Dimensions dropped in a leaf stay dropped in its descendants.
    alpha : float, default=0.05
        Level of the per-dimension test; a hyper-parameter rather than a
        type-one error rate.
    n_simulations : int, default=100
        Monte-Carlo replications per tested dimension.
    test_rule : {"reject", "literal"}, default="reject"
        See :func:`select_dimensions`.
    max_depth : int or None, default=None
        Optional cap on the depth of the tree.
    max_split_dims : int or None, default=None
        Keep at most this many splitting dimensions per split, choosing
        those with the largest dimension statistic.
    randomize_dims : bool, default=False
        Draw a random non-empty subset of the allowed dimensions instead of
        testing them.
    qp_tol : float, default=1e-9
        Feasibility tolerance of the final projection.
    qp_max_iter : int, default=500
    random_state : int, Generator or None
    """

    def __init__(
        self,
        min_node_size=2,
        dim_reduction=True,
        alpha=0.05,
        n_simulations=100,
        test_rule="reject",
        max_depth=None,
        max_split_dims=None,
        randomize_dims=False,
        qp_tol=1e-9,
        qp_max_iter=500,
        random_state=None,
    ):
        self.min_node_size = min_node_size
        self.dim_reduction = dim_reduction
        self.alpha = alpha
        self.n_simulations = n_simulations
        self.test_rule = test_rule
        self.max_depth = max_depth
        self.max_split_dims = max_split_dims
        self.randomize_dims = randomize_dims
        self.qp_tol = qp_tol
        self.qp_max_iter = qp_max_iter
        self.random_state = random_state

    kind = "cort"

    # -- fitting --------------------------------------------------------------

    def _check_params(self):
        if int(self.min_node_size) < 1:
            raise ValueError("min_node_size must be at least 1")
        if not 0 < float(self.alpha) < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if int(self.n_simulations) < 1:
            raise ValueError("n_simulations must be positive")
        if self.test_rule not in ("reject", "literal"):
            raise ValueError(f"unknown test_rule {self.test_rule!r}")
        if self.max_depth is not None and int(self.max_depth) < 0:
            raise ValueError("max_depth must be non-negative")
        if self.max_split_dims is not None and int(self.max_split_dims) < 1:
            raise ValueError("max_split_dims must be positive")

    def _split_plan(self, node, path, points, n_total, seed):
        """Breakpoint and dimensions for one leaf, or ``None`` to keep it whole."""
        allowed = node.dims
        box = node.box
        if _distinct(points, allowed) < max(2, int(self.min_node_size)):
            return None
        rng = derive_rng(seed, len(path), *[c + 1 for c in path])
        dims = allowed
        if self.randomize_dims:
            mask = rng.random(len(allowed)) < 0.5
            if not mask.any():
                mask[rng.integers(len(allowed))] = True
            dims = tuple(j for j, keep in zip(allowed, mask) if keep)
        elif self.dim_reduction:
            dims, _, _ = select_dimensions(
                box, points, n_total, allowed, int(self.n_simulations), float(self.alpha), rng, self.test_rule
            )
        if not dims:
            return None
        if self.max_split_dims is not None and len(dims) > int(self.max_split_dims):
            x_all, _ = find_breakpoint(box, points, dims, n_total)
            stats = [dimension_statistic(box, points, x_all, j, n_total, dims) for j in dims]
            order = np.argsort(-np.asarray(stats), kind="stable")[: int(self.max_split_dims)]
            dims = tuple(sorted(dims[k] for k in order))
        x, loss = find_breakpoint(box, points, dims, n_total)
        f = points.shape[0] / n_total
        parent_loss = -f * f / np.prod(box.sides)
        if not loss < parent_loss - LOSS_TOL:
            return None
        return x, tuple(dims)

    def fit(self, X, y=None):
        """Grow the tree on pseudo-observations ``X`` and project its weights."""
        self._check_params()
        X = check_pseudo_obs(X, closed=True)
        n, d = X.shape
        seed = self.random_state
        if seed is None or isinstance(seed, np.random.Generator):
            seed = draw_seed(make_rng(seed))
        seed = int(seed)
        root = CortNode(np.zeros(d), np.ones(d), dims=tuple(range(d)))
        frontier = [(root, (), np.arange(n))]
        depth = 0
        while frontier:
            nxt = []
            for node, path, idx in frontier:
                plan = None
                if self.max_depth is None or depth < int(self.max_depth):
                    plan = self._split_plan(node, path, X[idx], n, seed)
                if plan is None:
                    continue
                x, dims = plan
                node.x = x
                lows, ups = child_bounds(node.lower, node.upper, x, dims)
                k = child_index(X[idx], x, dims)
                node.children = [CortNode(lo, up, dims=dims) for lo, up in zip(lows, ups)]
                # the node's own dims now record the split
                node.dims = dims
                for c, child in enumerate(node.children):
                    nxt.append((child, path + (c,), idx[k == c]))
            frontier = nxt
            depth += 1
        leaves = list(root.leaves())
        for i, leaf in enumerate(leaves):
            leaf.leaf = i
            leaf.dims = ()
        partition = Partition([l.lower for l in leaves], [l.upper for l in leaves], check=len(leaves) <= 2000)
        counts = np.bincount(root.route(X), minlength=len(leaves))
        freqs = counts / n
        self.tree_ = root
        self.seed_ = seed
        self.n_features_in_ = d
        self.n_samples_fit_ = n
        self.frequencies_ = freqs
        self.partition_ = partition
        solution = solve_weights(partition, freqs, QpOptions(feasibility_tol=float(self.qp_tol), max_iter=int(self.qp_max_iter)))
        self.qp_ = solution
        weights = solution.p_star / solution.p_star.sum()
        self.copula_ = PiecewiseLinearCopula(partition, weights)
        self.constraint_influence_ = float(np.sum((self.copula_.weights - freqs) ** 2 / partition.volumes))
        if not solution.converged:
            raise QpConvergenceError(
                f"weight projection did not converge (feasibility {solution.feasibility:.3g})", solution
            )
        return self

    # -- evaluation -----------------------------------------------------------

    @property
    def n_leaves_(self) -> int:
        check_is_fitted(self, "copula_")
        return self.copula_.n_leaves

    @property
    def weights_(self) -> np.ndarray:
        check_is_fitted(self, "copula_")
        return self.copula_.weights

    @property
    def dim(self) -> int:
        check_is_fitted(self, "copula_")
        return self.n_features_in_

    def locate(self, X) -> np.ndarray:
        check_is_fitted(self, "copula_")
        return self.tree_.route(check_points(X, self.n_features_in_))

    def pdf(self, X) -> np.ndarray:
        idx = self.locate(X)
        return self.copula_.weights[idx] / self.partition_.volumes[idx]

    density = pdf

    def cdf(self, X) -> np.ndarray:
        check_is_fitted(self, "copula_")
        return self.copula_.cdf(check_points(X, self.n_features_in_))

    def sample(self, n_samples: int, random_state=None) -> np.ndarray:
        check_is_fitted(self, "copula_")
        return self.copula_.sample(n_samples, random_state)

    def l2_norm_sq(self) -> float:
        check_is_fitted(self, "copula_")
        return self.copula_.l2_norm_sq()

    def inner_product(self, other) -> float:
        check_is_fitted(self, "copula_")
        return self.copula_.inner_product(_as_plc(other))

    def kendall_tau(self) -> float:
        return self.copula_.kendall_tau()

    def spearman_rho(self) -> float:
        return self.copula_.spearman_rho()

    def pairwise_measures(self, i: int, j: int):
        check_is_fitted(self, "copula_")
        return self.copula_.pairwise_measures(i, j)

    def is_copula(self, tolerance: float = 1e-8):
        check_is_fitted(self, "copula_")
        return self.copula_.is_copula(tolerance)

    def unconstrained_density(self) -> PiecewiseLinearCopula:
        """Piecewise constant density with the raw leaf frequencies as weights."""
        check_is_fitted(self, "copula_")
        return PiecewiseLinearCopula(self.partition_, self.frequencies_)

    def eise(self, X) -> float:
        """Empirical integrated square error ``|c|^2 - 2 mean(c(X))``."""
        return float(self.l2_norm_sq() - 2 * np.mean(self.pdf(X)))

    def score(self, X, y=None) -> float:
        """Negated empirical integrated square error (higher is better)."""
        return -self.eise(X)

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "copula_")
        return {
            "kind": self.kind,
            "dim": self.n_features_in_,
            "n": self.n_samples_fit_,
            "seed": self.seed_,
            "params": self.get_params(),
            "constraint_influence": self.constraint_influence_,
            "tree": self.tree_.to_dict(self.copula_.weights, self.frequencies_),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> Cort:
        if doc.get("kind") != cls.kind:
            raise ValueError(f"not a {cls.kind} model: kind={doc.get('kind')!r}")
        model = cls(**doc.get("params", {}))
        root = CortNode.from_dict(doc["tree"])
        leaves_doc = []
        stack = [doc["tree"]]
        while stack:
            node = stack.pop()
            if "children" in node:
                stack.extend(reversed(node["children"]))
            else:
                leaves_doc.append(node["leaf"])
        leaves = list(root.leaves())
        for i, leaf in enumerate(leaves):
            leaf.leaf = i
        partition = Partition([l.lower for l in leaves], [l.upper for l in leaves], check=len(leaves) <= 2000)
        if partition.dim != doc["dim"]:
            raise ValueError("leaf bounds disagree with the declared dimension")
        model.tree_ = root
        model.partition_ = partition
        model.frequencies_ = np.array([l["freq"] for l in leaves_doc], dtype=float)
        model.copula_ = PiecewiseLinearCopula(partition, [l["weight"] for l in leaves_doc])
        model.n_features_in_ = int(doc["dim"])
        model.n_samples_fit_ = int(doc.get("n", 0))
        model.seed_ = doc.get("seed")
        model.constraint_influence_ = float(
            np.sum((model.copula_.weights - model.frequencies_) ** 2 / partition.volumes)
        )
        return model


def _as_plc(model) -> PiecewiseLinearCopula:
    if isinstance(model, PiecewiseLinearCopula):
        return model
    copula = getattr(model, "copula_", None)
    if isinstance(copula, PiecewiseLinearCopula):
        return copula
    raise TypeError(f"{type(model).__name__} is not a piecewise linear copula")
