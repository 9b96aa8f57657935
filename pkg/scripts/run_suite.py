#!/usr/bin/env python3
"""Desk-scale experiment suite on a config file.

    python3 scripts/run_suite.py --config scripts/configs/synth50.json --suite rates
    python3 scripts/run_suite.py --config scripts/configs/smoke.json --suite all --out runs/smoke

Suites:
  rates     GinAR at each missing rate, median MAE per rate (degradation curve)
  ablation  full model vs. w/o ia / pg / ag at the config's rate
  impute    zero-filled MLP vs. IA + MLP at the config's rate
  baseline  GinAR vs. the zero-filled MLP at the config's rate

Every suite writes its per-run artifacts under --out and a summary.csv.
"""

from __future__ import annotations

import argparse
import csv
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from ginar.experiment import ExperimentConfig, run_ablation, run_experiment, run_impute_eval

log = logging.getLogger("suite")


def rates_suite(cfg, out, rates):
    rows = []
    for r in rates:
        rep = run_experiment(replace(cfg, rate=r), out / f"rate{r:g}", snapshot=False)
        rows.append({"suite": "rates", "name": f"{r:g}", "median_mae": rep.median_mae(), "mean_mae": rep.mean.mae})
    return rows


def ablation_suite(cfg, out, _):
    return [
        {"suite": "ablation", "name": name, "median_mae": rep.median_mae(), "mean_mae": rep.mean.mae}
        for name, rep in run_ablation(cfg, out / "ablation").items()
    ]


def impute_suite(cfg, out, _):
    rows = []
    for rate, cols in run_impute_eval(cfg, [cfg.rate], out / "impute").items():
        for col, rep in cols.items():
            rows.append({"suite": "impute", "name": f"{col}@{rate:g}", "median_mae": rep.median_mae(),
                         "mean_mae": rep.mean.mae})
    return rows


def baseline_suite(cfg, out, _):
    g = run_experiment(cfg, out / "ginar")
    m = run_experiment(replace(cfg, model="mlp"), out / "mlp", snapshot=False)
    return [
        {"suite": "baseline", "name": "ginar", "median_mae": g.median_mae(), "mean_mae": g.mean.mae},
        {"suite": "baseline", "name": "zero-fill mlp", "median_mae": m.median_mae(), "mean_mae": m.mean.mae},
        {"suite": "baseline", "name": "ratio", "median_mae": g.median_mae() / m.median_mae(), "mean_mae": np.nan},
    ]


SUITES = {"rates": rates_suite, "ablation": ablation_suite, "impute": impute_suite, "baseline": baseline_suite}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True)
    p.add_argument("--suite", choices=[*SUITES, "all"], default="all")
    p.add_argument("--rates", default="0.25,0.5,0.75,0.9")
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.from_json(args.config)
    out = Path(args.out or cfg.out or "runs/suite")
    out.mkdir(parents=True, exist_ok=True)
    rates = [float(r) for r in args.rates.split(",")]
    names = list(SUITES) if args.suite == "all" else [args.suite]

    rows = []
    for name in names:
        log.info("suite %s", name)
        rows += SUITES[name](cfg, out, rates)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["suite", "name", "median_mae", "mean_mae"])
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['suite']:9s} {r['name']:16s} median {r['median_mae']:.4f}")


if __name__ == "__main__":
    main()
