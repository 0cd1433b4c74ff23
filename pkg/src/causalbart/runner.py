"""Replication orchestration: configuration, seeding, execution, emission.

Replications may run in parallel processes; per-replication seeds are derived
up front and results are ordered by replication id, so output files are
byte-identical regardless of scheduling or the parallelism degree.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .bart import BartConfig
from .bcf import BcfConfig, bcf_fit
from .data import Dataset, GroundTruth, load_ihdp_realizations
from .dgp import SyntheticScenario, gen_surrogate_realizations, gen_synthetic
from .kfold import AblationConfig, kfold_causal_bart
from .learners import bart_f0_f1, dr_learner, ps_bart, s_learner, x_learner
from .metrics import (MetricsRow, aggregate, failure_row, percentile_report,
                      score_replication, write_aggregate_csv,
                      write_json_summary, write_metrics_csv,
                      write_percentile_csv)
from .seeding import child_seed

logger = logging.getLogger(__name__)

SYNTHETIC_SCENARIOS = ("linear_homogeneous", "linear_heterogeneous",
                       "nonlinear_homogeneous", "nonlinear_heterogeneous")

# fixed registry order so each estimator's seed never depends on which
# other estimators are requested
ESTIMATOR_ORDER = ("kfold_causal_bart", "s_learner", "bart_f0_f1", "ps_bart",
                   "dr_learner", "x_learner", "bcf")

ABLATION_VARIANTS = (
    ("kfold_causal_bart", AblationConfig()),
    ("without_stage2", AblationConfig(skip_stage2=True)),
    ("without_partialling_out", AblationConfig(skip_partialling_out=True)),
    ("without_kfold_stage2", AblationConfig(no_kfold_stage2=True)),
    ("without_kfold_stage1", AblationConfig(no_kfold_stage1=True)),
)

OUT_DIR_ENV = "CAUSALBART_OUT"


@dataclass
class ExperimentConfig:
    scenario: str
    estimators: list = field(default_factory=lambda: ["kfold_causal_bart"])
    n: int = 250
    replications: int = 100
    base_seed: int = 0
    K: int = 5
    inflation: float = 1.5
    noise_sd: float = 1.0
    jobs: int = 1
    out_dir: Optional[str] = None
    ihdp_path: Optional[str] = None
    bart: dict = field(default_factory=dict)
    estimator_overrides: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)
    expected_covariates: int = 25
    percentile_buckets: int = 10

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.estimators:
            raise ValueError("estimators must be non-empty")
        known = set(ESTIMATOR_ORDER)
        unknown = [e for e in self.estimators if e not in known]
        if unknown:
            raise ValueError(f"unknown estimators {unknown}; "
                             f"choose from {sorted(known)}")
        if (self.scenario not in SYNTHETIC_SCENARIOS
                and self.scenario not in ("ihdp", "ihdp_surrogate")):
            raise ValueError(f"unknown scenario '{self.scenario}'")
        if self.scenario == "ihdp" and not self.ihdp_path:
            raise ValueError("the ihdp scenario needs ihdp_path")

    def resolve_out_dir(self) -> Path:
        out = self.out_dir or os.environ.get(OUT_DIR_ENV) or "results"
        return Path(out)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**payload)


def bart_config_for(config: ExperimentConfig, estimator: str) -> BartConfig:
    overrides = dict(config.bart)
    overrides.update(config.estimator_overrides.get(estimator, {}))
    return BartConfig(**overrides)


def _data_seed(config: ExperimentConfig, rep: int) -> int:
    return child_seed(config.base_seed, rep)


def _estimator_seed(config: ExperimentConfig, rep: int, estimator: str) -> int:
    return child_seed(config.base_seed, rep, ESTIMATOR_ORDER.index(estimator))


def make_replication_data(config: ExperimentConfig, rep: int
                          ) -> tuple[Dataset, GroundTruth]:
    """Dataset and oracle for one replication (synthetic scenarios only;
    loaded benchmarks are sliced in run())."""
    if config.scenario in SYNTHETIC_SCENARIOS:
        response, effect = config.scenario.split("_")
        scen = SyntheticScenario(response, effect, config.n,
                                 noise_sd=config.noise_sd)
        return gen_synthetic(scen, _data_seed(config, rep))
    raise ValueError(f"scenario {config.scenario} is not generated per-rep")


def run_estimator(name: str, dataset: Dataset, config: ExperimentConfig,
                  seed: int, ablation: Optional[AblationConfig] = None,
                  label: Optional[str] = None):
    bcfg = bart_config_for(config, name)
    if name == "kfold_causal_bart":
        return kfold_causal_bart(
            dataset, bcfg, ablation or AblationConfig(**config.ablation),
            seed=seed, K=config.K, inflation=config.inflation,
            label=label or name)
    if name == "s_learner":
        return s_learner(dataset, bcfg, seed)
    if name == "bart_f0_f1":
        return bart_f0_f1(dataset, bcfg, seed)
    if name == "ps_bart":
        return ps_bart(dataset, bcfg, seed)
    if name == "dr_learner":
        return dr_learner(dataset, bcfg, seed, n_folds=config.K)
    if name == "x_learner":
        return x_learner(dataset, bcfg, seed)
    if name == "bcf":
        bcf_cfg = BcfConfig(
            mu_forest=dataclasses.replace(bcfg, m=200, alpha=0.95, beta=2.0),
            tau_forest=dataclasses.replace(bcfg, m=50, alpha=0.25, beta=3.0),
            burn_in=bcfg.burn_in, n_draws=bcfg.n_draws, thinning=bcfg.thinning)
        return bcf_fit(dataset, bcf_cfg, seed)
    raise ValueError(f"unknown estimator '{name}'")


def _run_replication(payload) -> list[MetricsRow]:
    config, rep, dataset, truth, variants = payload
    rows = []
    for name, ablation, label in variants:
        seed = _estimator_seed(config, rep, name)
        try:
            report = run_estimator(name, dataset, config, seed,
                                   ablation=ablation, label=label)
            row = score_replication(report, truth, scenario=config.scenario,
                                    replication=rep)
            if label:
                row = dataclasses.replace(row, estimator=label)
        except Exception as exc:  # failure rows keep the batch going
            logger.warning("rep %d %s failed: %s", rep, label or name, exc)
            row = failure_row(label or name, config.scenario, rep, str(exc))
        rows.append(row)
    return rows


@dataclass
class RunResult:
    status: int
    rows: list
    out_dir: Path


def _prepare_data(config: ExperimentConfig) -> list:
    if config.scenario in SYNTHETIC_SCENARIOS:
        return [make_replication_data(config, r)
                for r in range(config.replications)]
    if config.scenario == "ihdp_surrogate":
        return gen_surrogate_realizations(
            config.replications, config.base_seed, n=config.n,
            d=config.expected_covariates, noise_sd=config.noise_sd)
    realizations = load_ihdp_realizations(config.ihdp_path,
                                          config.expected_covariates)
    if len(realizations) < config.replications:
        logger.warning("only %d realizations available (%d requested)",
                       len(realizations), config.replications)
    return realizations[:config.replications]


def _execute(config: ExperimentConfig, variants) -> list[MetricsRow]:
    data = _prepare_data(config)
    payloads = [(config, r, ds, gt, variants)
                for r, (ds, gt) in enumerate(data)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chunks = list(pool.map(_run_replication, payloads))
    else:
        chunks = [_run_replication(p) for p in payloads]
    return [row for chunk in chunks for row in chunk]


def _emit(config: ExperimentConfig, rows: list[MetricsRow]) -> RunResult:
    out = config.resolve_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out / "metrics.csv")
    agg = aggregate(rows)
    write_aggregate_csv(agg, out / "aggregate.csv")
    buckets = None
    reps = {(r.scenario, r.replication) for r in rows if not r.failed}
    if len(reps) >= config.percentile_buckets:
        buckets = percentile_report(rows, config.percentile_buckets)
        write_percentile_csv(buckets, out / "percentiles.csv")
    write_json_summary(agg, buckets, out / "summary.json")

    payload = config.to_dict()
    canonical = json.dumps(payload, sort_keys=True)
    manifest = {
        "config": payload,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "version": __version__,
        "data_seeds": [_data_seed(config, r)
                       for r in range(config.replications)],
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    failures = [r for r in rows if r.failed]
    for f in failures:
        logger.error("FAILED %s rep %d: %s", f.estimator, f.replication,
                     f.error)
    return RunResult(1 if failures else 0, rows, out)


def run(config: ExperimentConfig) -> RunResult:
    """Run every estimator on every replication and write the result files."""
    variants = [(name, None, None) for name in config.estimators]
    rows = _execute(config, variants)
    return _emit(config, rows)


def ablate(config: ExperimentConfig) -> RunResult:
    """Run the full model plus its four single-component ablations with
    shared seeds, so differences isolate the ablated component."""
    variants = [("kfold_causal_bart", abl, label)
                for label, abl in ABLATION_VARIANTS]
    rows = _execute(config, variants)
    return _emit(config, rows)
