"""Balanced random partitions for cross-fitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of 0..n-1 into K folds with sizes differing by at most 1."""

    fold_of: np.ndarray
    K: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "fold_of", np.asarray(self.fold_of, np.int64))

    @property
    def n(self) -> int:
        return len(self.fold_of)

    def test_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def train_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def iter_folds(self):
        for k in range(self.K):
            yield k, self.train_indices(k), self.test_indices(k)


def make_folds(n: int, K: int, seed: int) -> FoldAssignment:
    """Uniform random balanced partition, deterministic per seed."""
    if K < 2:
        raise ValueError("K must be >= 2")
    if n < K:
        raise ValueError(f"cannot split {n} units into {K} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_of = np.empty(n, np.int64)
    fold_of[perm] = np.arange(n) % K
    return FoldAssignment(fold_of, K, seed)
