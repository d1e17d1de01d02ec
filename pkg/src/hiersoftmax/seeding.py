"""Named random streams derived from one root seed.

Each consumer (parameter init, shuffling, dropout masks, fold assignment, ...)
draws from its own stream, so changing how much randomness one of them uses
never shifts the numbers another sees. This is what lets a flat and a
hierarchical run share data order, encoder initialization and dropout masks.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "init.encoder": 1,
    "init.output": 2,
    "shuffle": 3,
    "dropout": 4,
    "folds": 5,
    "data": 6,
    "embeddings": 7,
    "holdout": 8,
    "gradcheck": 9,
}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng([int(seed), STREAMS[name], *map(int, extra)])
