"""Interval estimates and per-estimator effect reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class IntervalEstimate:
    """Point estimate with an equal-tailed interval."""

    mean: float
    lower: float
    upper: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def length(self) -> float:
        return self.upper - self.lower


@dataclass
class IntervalSummary:
    """Vector of per-target means and interval bounds."""

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def at(self, i: int) -> IntervalEstimate:
        return IntervalEstimate(float(self.mean[i]), float(self.lower[i]),
                                float(self.upper[i]))

    def __len__(self) -> int:
        return len(self.mean)


@dataclass
class EffectReport:
    """ATE interval plus per-unit CATE intervals from one estimator run."""

    estimator: str
    ate: IntervalEstimate
    cate_mean: np.ndarray
    cate_lower: np.ndarray
    cate_upper: np.ndarray
    ate_draws: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_units(self) -> int:
        return len(self.cate_mean)

    def check(self) -> None:
        """Assert the interval ordering invariant on every unit and the ATE."""
        if not (self.ate.lower <= self.ate.mean <= self.ate.upper):
            raise AssertionError("ATE interval out of order")
        bad = ~((self.cate_lower <= self.cate_mean)
                & (self.cate_mean <= self.cate_upper))
        if bad.any():
            raise AssertionError(
                f"CATE interval out of order at units {np.flatnonzero(bad)[:5]}")

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "ate": {"mean": self.ate.mean, "lower": self.ate.lower,
                    "upper": self.ate.upper},
            "cate_mean": self.cate_mean.tolist(),
            "cate_lower": self.cate_lower.tolist(),
            "cate_upper": self.cate_upper.tolist(),
            "diagnostics": {k: v for k, v in self.diagnostics.items()
                            if isinstance(v, (int, float, str, bool))},
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    def to_csv(self, path) -> None:
        """One row per unit; the ATE columns repeat so the file stays flat."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "unit", "cate_mean", "cate_lower",
                        "cate_upper", "ate_mean", "ate_lower", "ate_upper"])
            for i in range(self.n_units):
                w.writerow([self.estimator, i,
                            repr(float(self.cate_mean[i])),
                            repr(float(self.cate_lower[i])),
                            repr(float(self.cate_upper[i])),
                            repr(self.ate.mean), repr(self.ate.lower),
                            repr(self.ate.upper)])


def report_from_draws(estimator: str, tau_draws: np.ndarray, level: float = 0.95,
                      diagnostics: Optional[dict] = None) -> EffectReport:
    """Build a report whose ATE draws are the per-draw means over units."""
    from .bart import summarize  # local import avoids a cycle

    cate = summarize(tau_draws, level)
    ate_draws = tau_draws.mean(axis=1)
    ate = summarize(ate_draws[:, None], level)
    return EffectReport(
        estimator=estimator,
        ate=ate.at(0),
        cate_mean=cate.mean,
        cate_lower=cate.lower,
        cate_upper=cate.upper,
        ate_draws=ate_draws,
        diagnostics=diagnostics or {},
    )
