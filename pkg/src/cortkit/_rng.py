"""Random streams.

Every stochastic routine draws from a Philox-4x64 counter-based generator
(``numpy.random.Philox``). Independent sub-streams are keyed by a path of
integers, e.g. ``(seed, tree_index)``, through ``numpy.random.SeedSequence``,
so results do not depend on the order in which tasks are executed.
"""

from __future__ import annotations

import numpy as np


def make_rng(random_state=None) -> np.random.Generator:
    if isinstance(random_state, np.random.Generator):
        return random_state
    if isinstance(random_state, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(random_state))
    if random_state is None:
        return np.random.Generator(np.random.Philox())
    if isinstance(random_state, (int, np.integer)):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(random_state))))
    raise TypeError(f"cannot build a generator from {random_state!r}")


def derive_rng(seed, *path: int) -> np.random.Generator:
    """Generator for the sub-stream ``path`` of master ``seed``."""
    if seed is None:
        return make_rng(None)
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    entropy = [int(seed)] + [int(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**63))
