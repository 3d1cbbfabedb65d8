import numpy as np
import pytest

from cortkit.partition import Partition, child_bounds
from cortkit.plc import PiecewiseLinearCopula

# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE = []


def random_partition(rng, d, n_splits):
    """Partition grown by random simple splits of random leaves."""
    lows, ups = [np.zeros(d)], [np.ones(d)]
    for _ in range(n_splits):
        k = int(rng.integers(len(lows)))
        lo, up = lows.pop(k), ups.pop(k)
        dims = [j for j in range(d) if rng.random() < 0.7] or [int(rng.integers(d))]
        x = lo + rng.uniform(0.2, 0.8, d) * (up - lo)
        L, U = child_bounds(lo, up, x, dims)
        lows += list(L)
        ups += list(U)
    return Partition(lows, ups)


def random_frequencies(rng, partition, n_points=200):
    """Leaf frequencies of a sample from a random mixture of leaves."""
    raw = rng.dirichlet(np.full(len(partition), 0.5))
    counts = rng.multinomial(n_points, raw)
    return counts / n_points


def quadrants(weights):
    """2 x 2 grid model with leaves ordered (LL, LR, UL, UR)."""
    return PiecewiseLinearCopula(Partition.grid(2, 2), weights)


def batch_se(values_fn, data, n_batches=20):
    """Mean and standard error of a statistic over equal batches of the rows."""
    stats = np.array([values_fn(b) for b in np.array_split(data, n_batches)])
    return float(stats.mean()), float(stats.std(ddof=1) / np.sqrt(n_batches))


def refined_cells(models, dim=2):
    """Cells of the common refinement of several piecewise constant models."""
    edges = []
    for j in range(dim):
        z = [np.array([0.0, 1.0])]
        for m in models:
            p = m.partition if hasattr(m, "partition") else m.partition_
            z += [p.lower[:, j], p.upper[:, j]]
        edges.append(np.unique(np.concatenate(z)))
    grids = np.meshgrid(*[(e[1:] + e[:-1]) / 2 for e in edges], indexing="ij")
    widths = np.meshgrid(*[np.diff(e) for e in edges], indexing="ij")
    centres = np.column_stack([g.ravel() for g in grids])
    area = np.prod(np.column_stack([w.ravel() for w in widths]), axis=1)
    return centres, area


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
