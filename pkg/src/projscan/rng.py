"""Independent, reproducible random streams (one per purpose)."""

import numpy as np

STREAMS = {"init": 1, "dropout": 2, "augment": 3, "shuffle": 4, "phantom": 5, "ablation": 6}


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[purpose], *(int(e) for e in extra)])
