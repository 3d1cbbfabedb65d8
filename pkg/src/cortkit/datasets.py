"""Seeded generators for the benchmark datasets and the rank transform.

All generators draw from :func:`cortkit._rng.make_rng`, so a given seed
produces bitwise-identical data on every platform numpy supports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from cortkit._rng import make_rng
from cortkit.partition import Partition
from cortkit.plc import PiecewiseLinearCopula


@dataclass
class Dataset:
    """An ``n x d`` matrix of pseudo-observations and its provenance."""

    data: np.ndarray
    generator: str
    seed: int | None

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def metadata(self) -> dict:
        return {"generator": self.generator, "seed": self.seed, "n": self.n, "d": self.d}

    def to_csv(self, path, sidecar: bool = True) -> None:
        write_csv(path, self.data)
        if sidecar:
            Path(str(path) + ".json").write_text(json.dumps(self.metadata(), indent=2) + "\n", encoding="utf-8")


def write_csv(path, data: np.ndarray, prefix: str = "u") -> None:
    """CSV with a ``u1,...,ud`` header and 17 significant digits (exact round trip)."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    header = ",".join(f"{prefix}{j + 1}" for j in range(data.shape[1]))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g", encoding="utf-8")


def read_csv(path) -> np.ndarray:
    """Read a numeric CSV with one header row."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise ValueError(f"{path}: empty file")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header.split(",")):
        raise ValueError(f"{path}: header has {len(header.split(','))} columns, data has {data.shape[1]}")
    return data


def pseudo_obs(raw) -> np.ndarray:
    """Column-wise ranks divided by ``n + 1``; ties keep their input order."""
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if raw.ndim != 2:
        raise ValueError("expected a matrix")
    n = raw.shape[0]
    return rankdata(raw, method="ordinal", axis=0) / (n + 1)


def h1(u: np.ndarray) -> np.ndarray:
    u1, u2 = u[:, 0], u[:, 1]
    shift = (u1 <= 0.25) + 2.0 * (u1 <= 0.5) + (u1 >= 0.75)
    return np.column_stack([u1, (u2 + shift) / 4])


def h2(u: np.ndarray) -> np.ndarray:
    u1, u2 = u[:, 0], u[:, 1]
    outside = (u1 < 1 / 3) | (u1 >= 2 / 3)
    return np.column_stack([u1, u2 / 2 + 0.5 * outside])


def h3(u: np.ndarray) -> np.ndarray:
    u1, u2, u3 = u[:, 0], u[:, 1], u[:, 2]
    second = np.sin(2 * np.pi * u1) - u2 / np.pi
    branch = np.where(u1 <= 0.25, u3 / 2, -np.sin(np.pi**u1))
    third = (1 + u3 / np.pi**2) * branch
    return np.column_stack([u1, second, third])


def _uniform(rng, n, d):
    # (0, 1]: avoids an exact zero coordinate
    return 1.0 - rng.random((n, d))


def gen_dataset1(seed, n: int = 500, rank: bool = False) -> Dataset:
    """Four-block piecewise linear copula (``h1`` applied to uniforms)."""
    data = h1(_uniform(make_rng(seed), n, 2))
    return Dataset(pseudo_obs(data) if rank else data, "dataset1", seed)


def gen_dataset2(seed, n: int = 200) -> Dataset:
    """Ternary band structure (``h2`` applied to uniforms), then ranked."""
    return Dataset(pseudo_obs(h2(_uniform(make_rng(seed), n, 2))), "dataset2", seed)


def clayton_sample(theta: float, d: int, count: int, seed=None) -> np.ndarray:
    """Clayton copula draws by gamma frailty (Marshall-Olkin)."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    if d < 2:
        raise ValueError("need d >= 2")
    rng = make_rng(seed)
    shape = 1.0 / theta
    # boost for small shapes, Gamma(a) = Gamma(a + 1) * W**(1/a), kept in logs
    # so that the frailty cannot underflow to zero
    log_frailty = np.log(rng.gamma(shape + 1.0, 1.0, size=(count, 1)))
    log_frailty += np.log(1.0 - rng.random((count, 1))) / shape
    expo = rng.standard_exponential((count, d))
    return np.exp(-np.logaddexp(0.0, np.log(expo) - log_frailty) / theta)


def gen_dataset3(seed, n: int = 200, theta: float = 7.0, rank: bool = False) -> Dataset:
    """Clayton columns 1, 3, 4, an independent uniform column 2, column 3 flipped."""
    rng = make_rng(seed)
    clay = clayton_sample(theta, 3, n, rng)
    data = np.column_stack([clay[:, 0], _uniform(rng, n, 1)[:, 0], 1.0 - clay[:, 1], clay[:, 2]])
    return Dataset(pseudo_obs(data) if rank else data, "dataset3", seed)


def gen_dataset4(seed, n: int = 500) -> Dataset:
    """Functional dependence (``h3`` applied to uniforms), then ranked."""
    return Dataset(pseudo_obs(h3(_uniform(make_rng(seed), n, 3))), "dataset4", seed)


GENERATORS = {1: gen_dataset1, 2: gen_dataset2, 3: gen_dataset3, 4: gen_dataset4}


def generate(dataset: int, seed, n: int | None = None) -> Dataset:
    if dataset not in GENERATORS:
        raise ValueError(f"unknown dataset {dataset}; choose from {sorted(GENERATORS)}")
    return GENERATORS[dataset](seed) if n is None else GENERATORS[dataset](seed, n=n)


def dataset1_truth() -> PiecewiseLinearCopula:
    """The copula of dataset 1: mass 1/4 on four blocks of a 4 x 4 grid."""
    grid = Partition.grid(4, 2)
    cells = {(0, 3), (1, 2), (2, 0), (3, 1)}
    cols = np.rint(grid.lower * 4).astype(int)
    weights = np.array([0.25 if (a, b) in cells else 0.0 for a, b in cols])
    return PiecewiseLinearCopula(grid, weights)


def dataset2_truth() -> PiecewiseLinearCopula:
    """The copula of dataset 2 after ranking: three blocks of mass 1/3."""
    t = 1 / 3
    lower = [[0, 0], [t, 0], [2 * t, 0], [0, t], [t, t], [2 * t, t]]
    upper = [[t, t], [2 * t, t], [1, t], [t, 1], [2 * t, 1], [1, 1]]
    weights = [0, t, 0, t, 0, 1 - 2 * t]
    return PiecewiseLinearCopula(Partition(lower, upper), weights)
