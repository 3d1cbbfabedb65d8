"""Projection of leaf frequencies onto the set of copula weights.

For a partition with leaf volumes ``lam`` the weights minimising the
empirical integrated square error under the copula constraints solve::

    min_p  sum((p - f)**2 / lam)   s.t.  B p = g,  p >= 0

where ``B p = g`` states that every univariate margin is uniform and that
the weights sum to one. In the variables ``q = p / sqrt(lam)`` this is a
Euclidean projection, solved by a Mehrotra predictor-corrector interior
point method. The support it identifies is then polished by an exact
equality-constrained solve, which gives weights with true zeros.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import lsq_linear

from cortkit.partition import Partition

logger = logging.getLogger(__name__)


@dataclass
class ConstraintSystem:
    """Linear equality system ``B p = g``; the last row is the total-mass row."""

    B: np.ndarray
    g: np.ndarray
    tags: list


@dataclass
class QpOptions:
    feasibility_tol: float = 1e-9
    kkt_tol: float = 1e-8
    max_iter: int = 500


@dataclass
class QpSolution:
    p_star: np.ndarray
    kkt_residual: float
    iterations: int
    status: str
    feasibility: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class QpConvergenceError(RuntimeError):
    def __init__(self, message, solution: QpSolution):
        super().__init__(message)
        self.solution = solution


def _cdf_rows(partition: Partition, dim: int, points) -> np.ndarray:
    lo = partition.lower[:, dim]
    side = partition.upper[:, dim] - lo
    return np.clip(np.asarray(points)[:, None] - lo, 0.0, side) / side


def breakpoints(partition: Partition, dim: int) -> np.ndarray:
    """Sorted distinct leaf bounds along ``dim``, including 0 and 1."""
    return np.unique(np.concatenate([[0.0, 1.0], partition.lower[:, dim], partition.upper[:, dim]]))


def build_constraints(partition: Partition, exact: bool = False) -> ConstraintSystem:
    """Marginal-uniformity rows at every leaf midpoint plus the total-mass row.

    Row ``(l, i)`` evaluates the ``i``-th marginal distribution function at
    the ``i``-th coordinate of leaf ``l``'s midpoint. With ``exact=True``
    one extra row per interior breakpoint of each margin is appended before
    the total-mass row; together these force every margin to be uniform.
    """
    mids = partition.midpoints
    blocks, rhs, tags = [], [], []
    for i in range(partition.dim):
        blocks.append(_cdf_rows(partition, i, mids[:, i]))
        rhs.append(mids[:, i])
        tags += [("midpoint", leaf, i) for leaf in range(len(partition))]
    if exact:
        for i in range(partition.dim):
            z = breakpoints(partition, i)[1:-1]
            blocks.append(_cdf_rows(partition, i, z))
            rhs.append(z)
            tags += [("breakpoint", i, float(v)) for v in z]
    blocks.append(np.ones((1, len(partition))))
    rhs.append([1.0])
    tags.append(("total",))
    return ConstraintSystem(np.vstack(blocks), np.concatenate(rhs), tags)


def interval_system(partition: Partition) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse system equivalent to exact uniformity of every margin.

    For each dimension, one row per elementary interval between consecutive
    breakpoints stating that the marginal density equals one there (the last
    interval is implied by the total-mass row).
    """
    L = len(partition)
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for i in range(partition.dim):
        z = breakpoints(partition, i)
        lo = partition.lower[:, i]
        up = partition.upper[:, i]
        first = np.searchsorted(z, lo)
        last = np.searchsorted(z, up)
        span = last - first
        leaf = np.repeat(np.arange(L), span)
        offset = np.arange(span.sum()) - np.repeat(np.cumsum(span) - span, span)
        interval = np.repeat(first, span) + offset
        keep = interval < z.size - 2
        rows.append(r + interval[keep])
        cols.append(leaf[keep])
        vals.append(1.0 / (up - lo)[leaf[keep]])
        rhs.append(np.ones(z.size - 2))
        r += z.size - 2
    rows.append(np.full(L, r))
    cols.append(np.arange(L))
    vals.append(np.ones(L))
    rhs.append([1.0])
    B = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r + 1, L)
    )
    return B, np.concatenate(rhs)


def _solve_spd(M, rhs):
    try:
        return spla.splu(M, permc_spec="MMD_AT_PLUS_A").solve(rhs)
    except RuntimeError:
        return spla.lsqr(M, rhs, atol=1e-15, btol=1e-15)[0]


def _interior_point(Bs, g, t, options):
    """Mehrotra predictor-corrector for ``min |q - t|^2 / 2, Bs q = g, q >= 0``."""
    n = t.size
    BsT = Bs.T.tocsr()
    q = np.ones(n)
    y = np.zeros(Bs.shape[0])
    s = np.ones(n)
    delta = 1e-12
    eye = sp.identity(Bs.shape[0], format="csc")
    scale_p = 1.0 + np.abs(g).max()
    scale_d = 1.0 + np.abs(t).max()
    it = 0
    for it in range(1, options.max_iter + 1):
        r_d = q - t - BsT @ y - s
        r_p = Bs @ q - g
        mu = q @ s / n
        if (
            np.abs(r_p).max() <= 1e-13 * scale_p
            and np.abs(r_d).max() <= 1e-12 * scale_d
            and mu <= 1e-14 * scale_d
        ):
            break
        D = q / (q + s)
        M = (Bs @ sp.diags(D) @ BsT).tocsc()
        lu = spla.splu(M + delta * max(1.0, M.diagonal().max()) * eye, permc_spec="MMD_AT_PLUS_A")

        def direction(r_c):
            rhs = -r_p + Bs @ (D * (r_d + r_c / q))
            dy = lu.solve(rhs)
            for _ in range(2):
                dy = dy + lu.solve(rhs - M @ dy)
            dq = D * (-r_d - r_c / q + BsT @ dy)
            ds = (-r_c - s * dq) / q
            return dq, dy, ds

        def max_step(x, dx):
            neg = dx < 0
            return min(1.0, float(np.min(-x[neg] / dx[neg]))) if neg.any() else 1.0

        dq, dy, ds = direction(q * s)
        a_p, a_d = max_step(q, dq), max_step(s, ds)
        mu_aff = (q + a_p * dq) @ (s + a_d * ds) / n
        sigma = (mu_aff / mu) ** 3
        dq, dy, ds = direction(q * s + dq * ds - sigma * mu)
        a_p = 0.995 * max_step(q, dq)
        a_d = 0.995 * max_step(s, ds)
        q = q + a_p * dq
        y = y + a_d * dy
        s = s + a_d * ds
    return q, y, s, it


def _polish(Bs, g, t, q, s):
    """Exact minimiser on a support guessed from the interior point, or ``None``."""
    scale = 1.0 + float(np.abs(t).max())
    for free in (q > s, q > 1e-10 * scale, q > 1e-12 * scale, q > 1e-8 * scale):
        if free.any():
            out = _polish_on(Bs, g, t, q, free)
            if out is not None:
                return out
    return None


def _polish_on(Bs, g, t, q, free):
    Bf = Bs[:, free].tocsc()
    M = (Bf @ Bf.T).tocsc()
    M = M + 1e-14 * max(1.0, M.diagonal().max(initial=0.0)) * sp.identity(M.shape[0], format="csc")
    rhs = Bf @ t[free] - g
    w = _solve_spd(M, rhs)
    for _ in range(3):
        w = w + _solve_spd(M, rhs - (Bf @ (Bf.T @ w)))
    qf = t[free] - Bf.T @ w
    if np.any(qf < 0) or np.abs(Bf @ qf - g).max() > 1e-10:
        return None
    out = np.zeros_like(t)
    out[free] = qf
    if np.sum((out - t) ** 2) > np.sum((np.maximum(q, 0) - t) ** 2) + 1e-12 * (1 + t @ t):
        return None
    return out


def solve_weights(partition: Partition, frequencies, options: QpOptions | None = None) -> QpSolution:
    """Copula weights closest to ``frequencies`` in the leaf-volume metric.

    Works in the rescaled variables ``q = p / sqrt(volume)`` where the
    objective becomes a plain Euclidean distance.
    """
    options = options or QpOptions()
    f = np.asarray(frequencies, dtype=float).reshape(-1)
    if f.size != len(partition):
        raise ValueError(f"{f.size} frequencies for {len(partition)} leaves")
    if np.any(f < 0) or abs(f.sum() - 1) > 1e-9:
        raise ValueError("frequencies must be non-negative and sum to one")
    lam = partition.volumes
    B, g = interval_system(partition)
    root = np.sqrt(lam)
    if np.abs(B @ f - g).max() <= 1e-15:
        return QpSolution(f.copy(), 0.0, 0, "converged", float(np.abs(B @ f - g).max()))
    Bs = (B @ sp.diags(root)).tocsr()
    t = f / root
    q, y, s, it = _interior_point(Bs, g, t, options)
    polished = _polish(Bs, g, t, q, s)
    if polished is not None:
        q = polished
    p = np.maximum(q, 0.0) * root
    feas = float(np.abs(B @ p - g).max())
    status = "converged" if feas <= options.feasibility_tol else "max-iterations"
    residual = _stationarity(Bs, t, np.maximum(q, 0.0), y)
    if status != "converged":
        logger.warning("copula weight projection stopped at feasibility %.3g", feas)
    return QpSolution(p, residual, it, status, feas)


def _stationarity(Bs, t, q, y) -> float:
    """Relative KKT residual in the rescaled variables.

    The interior-point multipliers are corrected by a least-squares step on
    the support of ``q``, then dual feasibility is measured off the support.
    """
    free = q > 0
    r = q - t - Bs.T @ y
    if free.any():
        y = y + spla.lsqr(Bs[:, free].T, r[free], atol=1e-15, btol=1e-15, iter_lim=10_000)[0]
        r = q - t - Bs.T @ y
    scale = max(1.0, float(np.abs(q - t).max()))
    stat = np.abs(r[free]).max(initial=0.0)
    dual_infeas = max(0.0, float(-r[~free].min(initial=0.0)))
    return float(max(stat, dual_infeas) / scale)


@dataclass
class KktReport:
    stationarity: float
    complementarity: float
    feasibility: float
    nonnegativity: float

    @property
    def residual(self) -> float:
        return max(self.stationarity, self.complementarity, self.feasibility, self.nonnegativity)


def check_kkt(partition: Partition, frequencies, candidate) -> KktReport:
    """Independent optimality check of ``candidate`` by bounded least squares.

    Looks for multipliers ``y`` (free) and ``mu >= 0`` supported on the zero
    entries of the candidate with ``A (p - f) = B'y + mu``. Stationarity is
    reported relative to ``max(1, |A (p - f)|_inf)``.
    """
    f = np.asarray(frequencies, dtype=float)
    p = np.asarray(candidate, dtype=float)
    lam = partition.volumes
    system = build_constraints(partition, exact=True)
    B, g = system.B, system.g
    grad = (p - f) / lam
    zero = np.flatnonzero(p <= 0)
    n_y = B.shape[0]
    design = np.hstack([B.T, np.eye(len(p))[:, zero]])
    lb = np.concatenate([np.full(n_y, -np.inf), np.zeros(zero.size)])
    fit = lsq_linear(design, grad, bounds=(lb, np.inf), method="bvls", tol=1e-14, lsmr_tol=None)
    scale = max(1.0, float(np.abs(grad).max()))
    resid = design @ fit.x - grad
    mu = np.zeros(len(p))
    mu[zero] = fit.x[n_y:]
    return KktReport(
        stationarity=float(np.abs(resid).max() / scale),
        complementarity=float(np.abs(mu * p).max() / scale),
        feasibility=float(np.abs(B @ p - g).max()),
        nonnegativity=float(max(0.0, -p.min())),
    )
