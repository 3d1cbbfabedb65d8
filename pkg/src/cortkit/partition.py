"""Half-open hyper-rectangles in the unit cube and the partitions they tile."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

import numpy as np

TILING_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Box:
    """The half-open box ``(lower, upper]`` inside ``[0, 1]^d``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).reshape(-1)
        upper = np.array(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or lower.size == 0:
            raise ValueError("lower and upper must be non-empty vectors of equal length")
        if np.any(lower < 0) or np.any(upper > 1):
            raise ValueError(f"box ({lower}, {upper}] leaves the unit cube")
        if np.any(lower >= upper):
            raise ValueError(f"box ({lower}, {upper}] has a non-positive side")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dim: int) -> Box:
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def sides(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def midpoint(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    def contains(self, points) -> np.ndarray:
        return box_contains(self.lower, self.upper, np.atleast_2d(points))

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        sides = " x ".join(f"({a:.6g}, {b:.6g}]" for a, b in zip(self.lower, self.upper))
        return f"Box({sides})"


def box_contains(lower: np.ndarray, upper: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Membership of ``points`` (n, d) in the half-open box; a zero lower face is closed."""
    above = (points > lower) | ((lower == 0) & (points >= 0))
    return np.all(above & (points <= upper), axis=-1)


def volume(box: Box) -> float:
    return float(np.prod(box.sides))


def lambda_ratio(box: Box, point) -> float:
    """Fraction of the box volume lying in ``[0, point]``."""
    u = np.asarray(point, dtype=float)
    covered = np.clip(u - box.lower, 0.0, box.sides)
    return float(np.prod(covered / box.sides))


def intersect(x: Box, y: Box) -> Box | None:
    """Intersection of two boxes, or ``None`` when it has no volume."""
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: {x.dim} vs {y.dim}")
    lower = np.maximum(x.lower, y.lower)
    upper = np.minimum(x.upper, y.upper)
    if np.any(upper <= lower):
        return None
    return Box(lower, upper)


def g_integral(a: float, b: float, c: float, d: float) -> float:
    """Integral over ``u`` in ``[a, b]`` of the length of ``[0, u] ∩ [c, d]``.

    Every sub-range is clamped so that empty integration ranges contribute
    nothing; the result lies in ``[0, (b - a)(d - c)]``.
    """
    if not (0 <= a < b <= 1 and 0 <= c < d <= 1):
        raise ValueError(f"need 0 <= a < b <= 1 and 0 <= c < d <= 1, got {(a, b, c, d)}")
    return float(g_integral_array(a, b, c, d))


def g_integral_array(a, b, c, d):
    """Broadcasting version of :func:`g_integral` without argument checks."""
    lo = np.maximum(a, c)
    hi = np.maximum(np.minimum(b, d), lo)
    ramp = (hi * hi - lo * lo) / 2 - c * (hi - lo)
    plateau = (d - c) * np.maximum(b - np.maximum(a, d), 0.0)
    return ramp + plateau


def child_bounds(lower, upper, x, dims: Sequence[int]):
    """Bounds of the ``2^|dims|`` children of a simple split.

    Child ``k`` lies on the upper side of ``x`` in ``dims[t]`` iff bit ``t``
    of ``k`` is set, so the first listed dimension varies fastest.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dims = list(dims)
    k = 1 << len(dims)
    lows = np.tile(lower, (k, 1))
    ups = np.tile(upper, (k, 1))
    for t, j in enumerate(dims):
        high = ((np.arange(k) >> t) & 1).astype(bool)
        lows[high, j] = x[j]
        ups[~high, j] = x[j]
    return lows, ups


def simple_split(box: Box, x, dims: Iterable[int]) -> list[Box]:
    """Split ``box`` at breakpoint ``x`` along every dimension in ``dims``.

    Dimensions are zero-based. ``x`` must lie strictly inside the box along
    each splitting dimension.
    """
    x = np.asarray(x, dtype=float)
    dims = sorted(set(int(j) for j in dims))
    if not dims:
        raise ValueError("at least one splitting dimension is required")
    if dims[0] < 0 or dims[-1] >= box.dim:
        raise ValueError(f"splitting dimensions {dims} out of range for d={box.dim}")
    if x.size != box.dim:
        raise ValueError("breakpoint dimension does not match the box")
    inside = (x[dims] > box.lower[dims]) & (x[dims] < box.upper[dims])
    if not np.all(inside):
        raise ValueError(f"breakpoint {x} is not strictly inside {box} along {dims}")
    lows, ups = child_bounds(box.lower, box.upper, x, dims)
    return [Box(lo, up) for lo, up in zip(lows, ups)]


class Partition:
    """A finite collection of disjoint boxes tiling the unit cube.

    Boxes are held as two ``(L, d)`` arrays for vectorised evaluation.
    """

    def __init__(self, lower, upper, check: bool = True):
        lower = np.array(lower, dtype=float, ndmin=2)
        upper = np.array(upper, dtype=float, ndmin=2)
        if lower.shape != upper.shape:
            raise ValueError("lower and upper bounds must have the same shape")
        self.lower = lower
        self.upper = upper
        self.lower.setflags(write=False)
        self.upper.setflags(write=False)
        if check:
            self.validate()

    @classmethod
    def from_boxes(cls, boxes: Sequence[Box], check: bool = True) -> Partition:
        return cls([b.lower for b in boxes], [b.upper for b in boxes], check=check)

    @classmethod
    def unit(cls, dim: int) -> Partition:
        return cls(np.zeros((1, dim)), np.ones((1, dim)))

    @classmethod
    def grid(cls, m: int, dim: int) -> Partition:
        """Regular grid of ``m^dim`` cubes of side ``1/m``; dimension 0 varies fastest."""
        edges = np.linspace(0.0, 1.0, m + 1)
        idx = np.array(list(product(range(m), repeat=dim)))[:, ::-1]
        return cls(edges[idx], edges[idx + 1], check=False)

    def __len__(self) -> int:
        return self.lower.shape[0]

    def __iter__(self):
        return (Box(lo, up) for lo, up in zip(self.lower, self.upper))

    def __getitem__(self, i) -> Box:
        return Box(self.lower[i], self.upper[i])

    @property
    def dim(self) -> int:
        return self.lower.shape[1]

    @property
    def sides(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volumes(self) -> np.ndarray:
        return np.prod(self.sides, axis=1)

    @property
    def midpoints(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    def validate(self) -> None:
        if len(self) == 0:
            raise ValueError("a partition needs at least one box")
        if np.any(self.lower < 0) or np.any(self.upper > 1):
            raise ValueError("partition boxes leave the unit cube")
        if np.any(self.sides <= 0):
            raise ValueError("partition boxes must have positive volume")
        total = self.volumes.sum()
        if abs(total - 1.0) > TILING_TOL * max(1, len(self)):
            raise ValueError(f"boxes do not tile the unit cube (total volume {float(total)!r})")
        if len(self) <= 2000:
            lo = np.maximum(self.lower[:, None, :], self.lower[None, :, :])
            up = np.minimum(self.upper[:, None, :], self.upper[None, :, :])
            overlap = np.all(up > lo, axis=2)
            np.fill_diagonal(overlap, False)
            if overlap.any():
                raise ValueError("partition boxes overlap")

    def locate(self, points) -> np.ndarray:
        """Index of the box containing each point, ``-1`` when none does."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(points.shape[0], -1, dtype=np.intp)
        chunk = max(1, 2_000_000 // max(1, len(self) * self.dim))
        for start in range(0, points.shape[0], chunk):
            block = points[start:start + chunk, None, :]
            inside = box_contains(self.lower[None], self.upper[None], block)
            hit = inside.any(axis=1)
            out[start:start + chunk] = np.where(hit, inside.argmax(axis=1), -1)
        return out

    def counts(self, points) -> np.ndarray:
        idx = self.locate(points)
        if np.any(idx < 0):
            raise ValueError("some points fall outside the partition")
        return np.bincount(idx, minlength=len(self))

    def project(self, dims: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        dims = list(dims)
        return self.lower[:, dims], self.upper[:, dims]
