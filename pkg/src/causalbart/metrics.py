"""Replication scoring, Monte Carlo aggregation, and the heterogeneity
percentile analysis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .data import GroundTruth
from .reports import EffectReport

METRIC_COLUMNS = ["estimator", "scenario", "replication", "ate_err",
                  "ate_covered", "ate_length", "cate_rmse", "cate_cover",
                  "cate_length", "relative_sd", "error"]

AGGREGATE_COLUMNS = ["estimator", "scenario", "n_reps", "n_failures",
                     "ate_rmse", "ate_cover", "ate_length", "cate_rmse",
                     "cate_cover", "cate_length"]


@dataclass(frozen=True)
class MetricsRow:
    """Scores of one estimator on one replication."""

    estimator: str
    scenario: str
    replication: int
    ate_err: float
    ate_covered: bool
    ate_length: float
    cate_rmse: float
    cate_cover: float
    cate_length: float
    relative_sd: float
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


def relative_sd(tau: np.ndarray) -> float:
    """Heterogeneity index: SD of the unit effects over |mean effect|."""
    tau = np.asarray(tau, float)
    mean = abs(float(tau.mean()))
    sd = float(tau.std())
    if mean == 0.0:
        return math.inf if sd > 0 else 0.0
    return sd / mean


def score_replication(report: EffectReport, truth: GroundTruth,
                      scenario: str = "", replication: int = 0) -> MetricsRow:
    """Score one report against the oracle effects."""
    tau = truth.tau
    if report.n_units != len(tau):
        raise ValueError(
            f"report covers {report.n_units} units, truth {len(tau)}")
    errs = report.cate_mean - tau
    cate_rmse = float(np.sqrt(np.mean(errs ** 2)))
    covered = (report.cate_lower <= tau) & (tau <= report.cate_upper)
    cate_cover = float(covered.mean())
    cate_length = float(np.mean(report.cate_upper - report.cate_lower))
    ate_true = float(tau.mean())
    return MetricsRow(
        estimator=report.estimator,
        scenario=scenario,
        replication=replication,
        ate_err=report.ate.mean - ate_true,
        ate_covered=report.ate.contains(ate_true),
        ate_length=report.ate.length,
        cate_rmse=cate_rmse,
        cate_cover=cate_cover,
        cate_length=cate_length,
        relative_sd=relative_sd(tau),
    )


def failure_row(estimator: str, scenario: str, replication: int,
                message: str) -> MetricsRow:
    nan = float("nan")
    return MetricsRow(estimator, scenario, replication, nan, False, nan, nan,
                      nan, nan, nan, error=message)


@dataclass(frozen=True)
class AggregateRow:
    """One (estimator, scenario) cell of the benchmark table."""

    estimator: str
    scenario: str
    n_reps: int
    n_failures: int
    ate_rmse: float
    ate_cover: float
    ate_length: float
    cate_rmse: float
    cate_cover: float
    cate_length: float


def aggregate(rows: Sequence[MetricsRow]) -> list[AggregateRow]:
    """Benchmark-table semantics: the ATE error aggregates as the root of the
    mean squared per-replication error; covers and lengths are means, and the
    per-unit RMSE column is the mean of per-replication RMSEs."""
    if not rows:
        raise ValueError("no rows to aggregate")
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.scenario, row.estimator), []).append(row)
    out = []
    for (scenario, estimator), members in sorted(groups.items()):
        ok = [r for r in members if not r.failed]
        n_fail = len(members) - len(ok)
        if not ok:
            nan = float("nan")
            out.append(AggregateRow(estimator, scenario, 0, n_fail, nan, nan,
                                    nan, nan, nan, nan))
            continue
        ate_errs = np.array([r.ate_err for r in ok])
        out.append(AggregateRow(
            estimator=estimator,
            scenario=scenario,
            n_reps=len(ok),
            n_failures=n_fail,
            ate_rmse=float(np.sqrt(np.mean(ate_errs ** 2))),
            ate_cover=float(np.mean([r.ate_covered for r in ok])),
            ate_length=float(np.mean([r.ate_length for r in ok])),
            cate_rmse=float(np.mean([r.cate_rmse for r in ok])),
            cate_cover=float(np.mean([r.cate_cover for r in ok])),
            cate_length=float(np.mean([r.cate_length for r in ok])),
        ))
    return out


@dataclass(frozen=True)
class PercentileBucket:
    bucket: int
    relative_sd_mean: float
    replications: tuple
    rows: tuple  # AggregateRow per estimator


def percentile_report(rows: Sequence[MetricsRow], n_buckets: int = 10
                      ) -> list[PercentileBucket]:
    """Bucket replications by their heterogeneity index (ties broken by
    replication id), then aggregate each bucket separately."""
    ok = [r for r in rows if not r.failed]
    reps: dict = {}
    for r in ok:
        reps.setdefault((r.scenario, r.replication), r.relative_sd)
    if len(reps) < n_buckets:
        raise ValueError(
            f"{len(reps)} replications cannot fill {n_buckets} buckets")
    ordered = sorted(reps, key=lambda key: (reps[key], key))
    out = []
    for b, chunk in enumerate(np.array_split(np.arange(len(ordered)), n_buckets)):
        members = [ordered[i] for i in chunk]
        member_set = set(members)
        bucket_rows = [r for r in ok
                       if (r.scenario, r.replication) in member_set]
        out.append(PercentileBucket(
            bucket=b,
            relative_sd_mean=float(np.mean([reps[m] for m in members])),
            replications=tuple(members),
            rows=tuple(aggregate(bucket_rows)),
        ))
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in sorted(rows, key=lambda r: (r.scenario, r.replication,
                                             r.estimator)):
            w.writerow([_fmt(getattr(r, c)) for c in METRIC_COLUMNS])


def read_metrics_csv(path) -> list[MetricsRow]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(MetricsRow(
                estimator=rec["estimator"],
                scenario=rec["scenario"],
                replication=int(rec["replication"]),
                ate_err=float(rec["ate_err"]),
                ate_covered=rec["ate_covered"] == "True",
                ate_length=float(rec["ate_length"]),
                cate_rmse=float(rec["cate_rmse"]),
                cate_cover=float(rec["cate_cover"]),
                cate_length=float(rec["cate_length"]),
                relative_sd=float(rec["relative_sd"]),
                error=rec.get("error", "") or "",
            ))
    return out


def write_aggregate_csv(rows: Sequence[AggregateRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in AGGREGATE_COLUMNS])


def write_percentile_csv(buckets: Sequence[PercentileBucket], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket", "relative_sd_mean"] + AGGREGATE_COLUMNS)
        for b in buckets:
            for r in b.rows:
                w.writerow([b.bucket, _fmt(b.relative_sd_mean)]
                           + [_fmt(getattr(r, c)) for c in AGGREGATE_COLUMNS])


def write_json_summary(agg_rows: Sequence[AggregateRow],
                       buckets: Optional[Sequence[PercentileBucket]],
                       path) -> None:
    payload: dict = {"aggregate": {}}
    for r in agg_rows:
        payload["aggregate"].setdefault(r.scenario, {})[r.estimator] = asdict(r)
    if buckets is not None:
        payload["percentiles"] = [
            {"bucket": b.bucket, "relative_sd_mean": b.relative_sd_mean,
             "rows": [asdict(r) for r in b.rows]}
            for b in buckets]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
