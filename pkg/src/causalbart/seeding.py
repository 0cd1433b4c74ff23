"""Deterministic seed derivation for nested fits."""

import numpy as np


def child_seed(seed: int, *tags: int) -> int:
    """Stable substream seed mixed from a parent seed and integer tags."""
    return int(np.random.SeedSequence((seed,) + tags).generate_state(1)[0])
