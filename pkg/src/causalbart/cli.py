"""Command-line experiment runner.

Subcommands: ``simulate`` (synthetic scenarios), ``ihdp`` (benchmark
realization files), ``ablate`` (component-removal batch), ``report``
(re-aggregate an existing metrics.csv).  A JSON config file supplies any
field of the experiment configuration; explicit flags win over the file.
The CAUSALBART_OUT environment variable sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .metrics import (aggregate, percentile_report, read_metrics_csv,
                      write_aggregate_csv, write_json_summary,
                      write_percentile_csv)
from .runner import (ESTIMATOR_ORDER, SYNTHETIC_SCENARIOS, ExperimentConfig,
                     ablate, run)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--reps", type=int, default=None,
                   help="number of replications")
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.add_argument("--estimators", default=None,
                   help=f"comma-separated subset of {','.join(ESTIMATOR_ORDER)}")
    p.add_argument("--folds", type=int, default=None,
                   help="K for every cross-fitted component")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel replications")
    p.add_argument("--inflation", type=float, default=None,
                   help="interval inflation factor for the two-stage CATE")
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--skip-stage2", action="store_true", default=None)
    p.add_argument("--skip-partialling-out", action="store_true", default=None)
    p.add_argument("--no-kfold-stage2", action="store_true", default=None)
    p.add_argument("--no-kfold-stage1", action="store_true", default=None)


def _build_config(args, scenario: str, ihdp_path=None) -> ExperimentConfig:
    payload = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            payload = json.load(fh)
    payload["scenario"] = scenario
    if ihdp_path is not None:
        payload["ihdp_path"] = ihdp_path
    overrides = {
        "n": args.n, "replications": args.reps, "base_seed": args.seed,
        "K": args.folds, "out_dir": args.out, "jobs": args.jobs,
        "inflation": args.inflation, "noise_sd": args.noise_sd,
    }
    for key, val in overrides.items():
        if val is not None:
            payload[key] = val
    if args.estimators is not None:
        payload["estimators"] = [e.strip() for e in args.estimators.split(",")
                                 if e.strip()]
    ablation = dict(payload.get("ablation", {}))
    for flag in ("skip_stage2", "skip_partialling_out", "no_kfold_stage2",
                 "no_kfold_stage1"):
        val = getattr(args, flag)
        if val is not None:
            ablation[flag] = val
    if ablation:
        payload["ablation"] = ablation
    return ExperimentConfig.from_dict(payload)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="causalbart",
        description="Tree-ensemble causal effect benchmark runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run synthetic scenarios")
    p_sim.add_argument("--scenario", required=True,
                       choices=list(SYNTHETIC_SCENARIOS) + ["ihdp_surrogate"])
    _add_common(p_sim)

    p_ihdp = sub.add_parser("ihdp", help="run on benchmark realization files")
    p_ihdp.add_argument("--path", required=True,
                        help="realization file or directory")
    _add_common(p_ihdp)

    p_abl = sub.add_parser("ablate", help="full model plus its 4 ablations")
    p_abl.add_argument("--scenario", required=True,
                       choices=list(SYNTHETIC_SCENARIOS) + ["ihdp_surrogate",
                                                            "ihdp"])
    p_abl.add_argument("--path", default=None,
                       help="realization path for the ihdp scenario")
    _add_common(p_abl)

    p_rep = sub.add_parser("report", help="re-aggregate an existing run")
    p_rep.add_argument("--rows", required=True, help="metrics.csv to read")
    p_rep.add_argument("--out", required=True, help="output directory")
    p_rep.add_argument("--buckets", type=int, default=10)

    args = parser.parse_args(argv)

    if args.command == "report":
        from pathlib import Path
        rows = read_metrics_csv(args.rows)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        agg = aggregate(rows)
        write_aggregate_csv(agg, out / "aggregate.csv")
        buckets = None
        reps = {(r.scenario, r.replication) for r in rows if not r.failed}
        if len(reps) >= args.buckets:
            buckets = percentile_report(rows, args.buckets)
            write_percentile_csv(buckets, out / "percentiles.csv")
        write_json_summary(agg, buckets, out / "summary.json")
        return 0

    if args.command == "simulate":
        config = _build_config(args, args.scenario)
        return run(config).status
    if args.command == "ihdp":
        config = _build_config(args, "ihdp", ihdp_path=args.path)
        return run(config).status
    # ablate
    scenario = args.scenario
    config = _build_config(args, scenario,
                           ihdp_path=args.path if scenario == "ihdp" else None)
    return ablate(config).status


if __name__ == "__main__":
    sys.exit(main())
