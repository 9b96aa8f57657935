"""Command line entry point: ``ginar train|eval|ablate|impute-eval|synth``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import save_dataset, synth_generate
from .experiment import (
    ExperimentConfig,
    evaluate_checkpoints,
    run_ablation,
    run_experiment,
    run_impute_eval,
)

log = logging.getLogger("ginar")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ginar", description="Forecasting with missing variables.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON file with ExperimentConfig keys")
        sp.add_argument("--rate", type=float, help="missing rate override")
        sp.add_argument("--seeds", type=_int_list, help="comma separated seeds, e.g. 0,1,2")
        sp.add_argument("--epochs", type=int, help="training epochs override")
        sp.add_argument("--no-ia", action="store_true", help="drop interpolation attention")
        sp.add_argument("--no-pg", action="store_true", help="drop the predefined graph")
        sp.add_argument("--no-ag", action="store_true", help="drop the adaptive graph")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("train", help="train one model per seed and write reports"))
    ev = sub.add_parser("eval", help="score saved checkpoints on the test split")
    common(ev)
    ev.add_argument("--checkpoints", help="directory holding checkpoint_seed*.npz (default: --out)")
    common(sub.add_parser("ablate", help="full model against w/o ia, w/o pg, w/o ag"))
    imp = sub.add_parser("impute-eval", help="zero-filled MLP against IA + MLP")
    common(imp)
    imp.add_argument("--rates", type=_float_list, help="comma separated missing rates")
    syn = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    common(syn, config_required=False)
    syn.add_argument("--n", type=int, default=20)
    syn.add_argument("--t", type=int, default=2000)
    syn.add_argument("--graph-seed", type=int, default=0)
    syn.add_argument("--noise", type=float, default=0.1)
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config)
    changes = {}
    if args.rate is not None:
        changes["rate"] = args.rate
    if args.seeds:
        changes["seeds"] = args.seeds
    if args.epochs is not None:
        changes["train"] = replace(cfg.train, epochs=args.epochs)
    if args.no_ia:
        changes["use_ia"] = False
    if args.no_pg:
        changes["use_pg"] = False
    if args.no_ag:
        changes["use_ag"] = False
    if args.out:
        changes["out"] = args.out
    return replace(cfg, **changes) if changes else cfg


def _summary(name: str, report) -> str:
    m = report.mean
    mape = "n/a" if np.isnan(m.mape) else f"{m.mape:.2f}%"
    return f"{name}: MAE {m.mae:.4f}  RMSE {m.rmse:.4f}  MAPE {mape}  (seeds {[s.seed for s in report.seeds]})"


def cmd_synth(args) -> int:
    if args.config:
        cfg = load_config(args)
        spec = dict(cfg.synth or {})
        out = Path(args.out or cfg.out or ".")
    else:
        spec = {"n": args.n, "t": args.t, "graph_seed": args.graph_seed, "noise": args.noise}
        out = Path(args.out or ".")
    n, t = int(spec.pop("n", 20)), int(spec.pop("t", 2000))
    s = synth_generate(n, t, **spec)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(s.dataset, out / "synth.csv")
    np.savetxt(out / "synth_distances.csv", s.dataset.distances, delimiter=",")
    np.savetxt(out / "synth_coords.csv", s.dataset.coords, delimiter=",")
    np.savetxt(out / "synth_adjacency.csv", s.A, delimiter=",", fmt="%g")
    print(f"wrote {n} x {t} series to {out / 'synth.csv'}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "synth":
        return cmd_synth(args)
    cfg = load_config(args)
    out = Path(cfg.out) if cfg.out else None
    if args.command == "train":
        print(_summary("test", run_experiment(cfg, out)))
    elif args.command == "eval":
        ckpt = args.checkpoints or cfg.out
        if not ckpt:
            print("eval needs --checkpoints or --out", file=sys.stderr)
            return 2
        print(_summary("test", evaluate_checkpoints(cfg, ckpt, out)))
    elif args.command == "ablate":
        for name, rep in run_ablation(cfg, out).items():
            print(_summary(name, rep))
    elif args.command == "impute-eval":
        for rate, cols in run_impute_eval(cfg, args.rates, out).items():
            for col, rep in cols.items():
                print(_summary(f"rate {rate:g} {col}", rep))
    if out is not None:
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
