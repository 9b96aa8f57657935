"""Experiment orchestration: multi-seed runs, ablations, imputation comparison,
reports and spatial snapshots."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import MLPConfig, MLPForecaster
from .data import (
    MaskSpec,
    PreparedData,
    TimeSeriesDataset,
    gen_mask,
    load_dataset,
    prepare,
    split,
    synth_generate,
)
from .graph import build_adjacency_distance, build_adjacency_pearson, load_adjacency_csv, normalize_predefined
from .metrics import Metrics, compute_metrics, horizon_average, per_horizon
from .model import GinAR, ModelConfig, load_checkpoint_arrays, save_checkpoint
from .training import TrainConfig, evaluate, fit, hyperparams_for_rate

log = logging.getLogger(__name__)

MODEL_KINDS = ("ginar", "mlp", "ia_mlp")
ABLATIONS = {
    "full": {},
    "w/o ia": {"use_ia": False},
    "w/o pg": {"use_pg": False},
    "w/o ag": {"use_ag": False},
}


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    distances: str | None = None
    adjacency: str | None = None
    synth: dict | None = None  # {"n", "t", "graph_seed", "noise"}
    graph: str = "auto"  # auto | distance | pearson | identity
    distance_threshold: float | None = None
    rate: float = 0.5
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train: TrainConfig = field(default_factory=TrainConfig)
    model: str = "ginar"
    hidden: int | None = None
    embed: int | None = None
    layers: int | None = None
    decoder_hidden: int = 64
    dropout: float = 0.15
    use_ia: bool = True
    use_pg: bool = True
    use_ag: bool = True
    ia_k: int | None = None
    ia_dense: bool = False
    pairwise_scores: bool = False
    sigmoid_gates: bool = False
    mlp_hidden: int = 64
    ia_mlp_hidden: int = 8
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    time_channel: bool = False
    zero_raw: bool = False
    dtype: str = "float32"
    snapshot_index: int = 0
    snapshot_horizon: int = 0
    out: str | None = None

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.seeds = [int(s) for s in self.seeds]
        self.split = tuple(float(r) for r in self.split)
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not (self.use_pg or self.use_ag):
            raise ValueError("cannot ablate both the predefined and the adaptive graph")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}")
        if self.graph not in ("auto", "distance", "pearson", "identity"):
            raise ValueError(f"unknown graph kind {self.graph!r}")
        if (self.dataset is None) == (self.synth is None):
            raise ValueError("give exactly one of dataset or synth")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        d["train"]["milestones"] = list(self.train.milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def sizes(self) -> tuple[int, int, int]:
        h, e, n = hyperparams_for_rate(self.rate)
        return self.hidden or h, self.embed or e, self.layers or n


# ---------------------------------------------------------------- building blocks


def load_data(cfg: ExperimentConfig) -> TimeSeriesDataset:
    if cfg.synth is not None:
        s = dict(cfg.synth)
        return synth_generate(int(s.pop("n", 20)), int(s.pop("t", 2000)), **s).dataset
    return load_dataset(cfg.dataset, cfg.distances)


def build_graph(cfg: ExperimentConfig, ds: TimeSeriesDataset, data: PreparedData) -> np.ndarray:
    """Normalized predefined graph for one mask."""
    kind = cfg.graph
    if cfg.adjacency:
        return normalize_predefined(load_adjacency_csv(cfg.adjacency))
    if kind == "auto":
        kind = "distance" if ds.distances is not None else "pearson"
    if kind == "identity":
        return np.eye(ds.n)
    if kind == "distance":
        if ds.distances is None:
            raise ValueError("distance graph requested but the dataset has no distances")
        sigma = _distance_sigma(ds.distances)
        thr = cfg.distance_threshold if cfg.distance_threshold is not None else sigma * math.sqrt(math.log(10.0))
        return normalize_predefined(build_adjacency_distance(ds.distances, thr, sigma))
    train = ds.values[:, data.ranges[0].start : data.ranges[0].stop]
    return normalize_predefined(build_adjacency_pearson(train, exclude=data.mask.indices))


def _distance_sigma(dist: np.ndarray) -> float:
    off = dist[~np.eye(dist.shape[0], dtype=bool)]
    return float(off.std()) if off.size and off.std() > 0 else 1.0


def build_model(cfg: ExperimentConfig, n: int, A_pre: np.ndarray, seed: int):
    c_in = 2 if cfg.time_channel else 1
    if cfg.model == "ginar":
        h, e, layers = cfg.sizes()
        mc = ModelConfig(
            n_vars=n, c_in=c_in, hidden=h, embed=e, n_layers=layers, decoder_hidden=cfg.decoder_hidden,
            dropout=cfg.dropout, ia_k=cfg.ia_k, ia_dense=cfg.ia_dense, pairwise_scores=cfg.pairwise_scores,
            use_ia=cfg.use_ia, use_pg=cfg.use_pg, use_ag=cfg.use_ag, sigmoid_gates=cfg.sigmoid_gates,
            dtype=cfg.dtype,
        )
        return GinAR(mc, A_pre, seed=seed)
    _, e, _ = cfg.sizes()
    mc = MLPConfig(
        n_vars=n, c_in=c_in, hidden=cfg.mlp_hidden, use_ia=cfg.model == "ia_mlp", ia_hidden=cfg.ia_mlp_hidden,
        embed=e, ia_k=cfg.ia_k, dtype=cfg.dtype,
    )
    return MLPForecaster(mc, seed=seed)


# ---------------------------------------------------------------- reports


@dataclass
class SeedResult:
    seed: int
    mask: MaskSpec
    metrics: Metrics
    horizons: list[Metrics]
    variable_mae: list[float]
    masked_mae: float
    normal_mae: float
    best_epoch: int
    epoch_seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mask": list(self.mask.indices),
            **self.metrics.as_dict(),
            "masked_mae": _nan_none(self.masked_mae),
            "normal_mae": _nan_none(self.normal_mae),
            "best_epoch": self.best_epoch,
            "per_horizon": [m.as_dict() for m in self.horizons],
            "per_variable_mae": self.variable_mae,
        }


def _nan_none(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


@dataclass
class MetricsReport:
    config: ExperimentConfig
    seeds: list[SeedResult]
    predictions: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def mean(self) -> Metrics:
        return Metrics(*(float(np.mean([getattr(s.metrics, k) for s in self.seeds])) for k in ("mae", "rmse", "mape")))

    @property
    def std(self) -> Metrics:
        return Metrics(*(float(np.std([getattr(s.metrics, k) for s in self.seeds])) for k in ("mae", "rmse", "mape")))

    def maes(self) -> list[float]:
        return [s.metrics.mae for s in self.seeds]

    def median_mae(self) -> float:
        return float(np.median(self.maes()))

    def as_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config.digest(),
            "seeds": [s.as_dict() for s in self.seeds],
            "mean": self.mean.as_dict(),
            "std": self.std.as_dict(),
        }

    def rows(self) -> list[dict]:
        out = []
        for s in self.seeds:
            out.append({"seed": s.seed, **s.metrics.as_dict(), "masked_mae": _nan_none(s.masked_mae),
                        "normal_mae": _nan_none(s.normal_mae)})
        out.append({"seed": "mean", **self.mean.as_dict(), "masked_mae": None, "normal_mae": None})
        return out

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.as_dict(), indent=2))
        _write_csv(out / "report.csv", self.rows())


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def score_seed(seed: int, mask: MaskSpec, pred: np.ndarray, Y: np.ndarray, best_epoch: int) -> SeedResult:
    mi, no = list(mask.indices), list(mask.normal)
    var_mae = np.abs(pred - Y).mean(axis=(0, 2))
    return SeedResult(
        seed=seed,
        mask=mask,
        metrics=horizon_average(pred, Y),
        horizons=per_horizon(pred, Y),
        variable_mae=[float(v) for v in var_mae],
        masked_mae=float(var_mae[mi].mean()) if mi else float("nan"),
        normal_mae=float(var_mae[no].mean()) if no else float("nan"),
        best_epoch=best_epoch,
    )


# ---------------------------------------------------------------- runs


def run_seed(cfg: ExperimentConfig, ds: TimeSeriesDataset, seed: int, out: Path | None = None):
    mask = gen_mask(ds.n, cfg.rate, seed)
    data = prepare(ds, mask, cfg.split, train_stride=cfg.train.train_stride, time_channel=cfg.time_channel,
                   zero_raw=cfg.zero_raw)
    A_pre = build_graph(cfg, ds, data)
    model = build_model(cfg, ds.n, A_pre, seed)
    t0 = time.perf_counter()
    res = fit(model, data, replace(cfg.train, seed=seed))
    secs = (time.perf_counter() - t0) / max(1, cfg.train.epochs)
    _, pred = evaluate(model, data.test, mask.indices, data.normalizer, cfg.train.eval_batch)
    result = score_seed(seed, mask, pred, data.test.Y, res.best_epoch)
    result.epoch_seconds = secs
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        extra = {
            "seed": seed,
            "mask": json.loads(mask.to_json()),
            "best_epoch": res.best_epoch,
            "experiment": cfg.to_dict(),
            "config_hash": cfg.digest(),
        }
        save_checkpoint(model, out / f"checkpoint_seed{seed}", extra)
        hist = [{"seed": seed, **r.row()} for r in res.history]
        for h in hist:
            h["val_mape"] = _nan_none(h["val_mape"])
        _append_csv(out / "history.csv", hist)
    return result, pred, data, model


def _append_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, snapshot: bool = True) -> MetricsReport:
    """Train and test one model per seed; aggregate and (optionally) write artifacts."""
    ds = load_data(cfg)
    split(ds.t, cfg.split)  # fail on a too-short series before any training
    out = Path(out or cfg.out) if (out or cfg.out) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.csv").unlink(missing_ok=True)
    results, preds, timing = [], {}, {}
    first = None
    for seed in cfg.seeds:
        log.info("rate %.2f seed %d model %s", cfg.rate, seed, cfg.model)
        r, pred, data, _ = run_seed(cfg, ds, seed, out)
        results.append(r)
        preds[seed] = pred
        timing[seed] = r.epoch_seconds
        if first is None:
            first = (data, pred)
    report = MetricsReport(cfg, results, preds)
    if out is not None:
        report.write(out)
        (out / "timing.json").write_text(json.dumps({"mean_epoch_seconds": timing}, indent=2))
        if snapshot and first is not None:
            data, pred = first
            export_spatial_snapshot(ds, data, pred, out, cfg.snapshot_index, cfg.snapshot_horizon)
    return report


def evaluate_checkpoints(
    cfg: ExperimentConfig, ckpt_dir: str | Path, out: str | Path | None = None, snapshot: bool = True
) -> MetricsReport:
    """Score saved per-seed checkpoints on the test split without training."""
    ckpt_dir = Path(ckpt_dir)
    ds = load_data(cfg)
    split(ds.t, cfg.split)
    results, preds, first = [], {}, None
    for seed in cfg.seeds:
        manifest, state = load_checkpoint_arrays(ckpt_dir / f"checkpoint_seed{seed}")
        if manifest.get("config_hash") not in (None, cfg.digest()):
            log.warning("checkpoint for seed %d was trained with a different config", seed)
        mask = gen_mask(ds.n, cfg.rate, seed)
        if "mask" in manifest and tuple(manifest["mask"]["indices"]) != mask.indices:
            raise ValueError(f"seed {seed}: checkpoint mask differs from the configured one")
        data = prepare(ds, mask, cfg.split, time_channel=cfg.time_channel, zero_raw=cfg.zero_raw)
        model = build_model(cfg, ds.n, build_graph(cfg, ds, data), seed)
        model.load_state_dict(state)
        _, pred = evaluate(model, data.test, mask.indices, data.normalizer, cfg.train.eval_batch)
        results.append(score_seed(seed, mask, pred, data.test.Y, int(manifest.get("best_epoch", -1))))
        preds[seed] = pred
        if first is None:
            first = (data, pred)
    report = MetricsReport(cfg, results, preds)
    if out is not None:
        out = Path(out)
        report.write(out)
        if snapshot and first is not None:
            export_spatial_snapshot(ds, *first, out, cfg.snapshot_index, cfg.snapshot_horizon)
    return report


def variant(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)


def run_ablation(cfg: ExperimentConfig, out: str | Path | None = None) -> dict[str, MetricsReport]:
    """Full model against w/o ia / pg / ag, paired on seeds (hence masks and shuffles)."""
    out = Path(out or cfg.out) if (out or cfg.out) else None
    reports = {}
    for name, changes in ABLATIONS.items():
        sub = out / name.replace("/", "").replace(" ", "_") if out else None
        reports[name] = run_experiment(variant(cfg, model="ginar", **changes), sub, snapshot=False)
    if out is not None:
        rows = []
        for name, rep in reports.items():
            for s in rep.seeds:
                rows.append({"variant": name, "seed": s.seed, **s.metrics.as_dict()})
            rows.append({"variant": name, "seed": "mean", **rep.mean.as_dict()})
        _write_csv(out / "ablation.csv", rows)
    return reports


def run_impute_eval(
    cfg: ExperimentConfig, rates: list[float] | None = None, out: str | Path | None = None
) -> dict[float, dict[str, MetricsReport]]:
    """Zero-filled MLP vs. interpolation attention + the same MLP, per missing rate."""
    out = Path(out or cfg.out) if (out or cfg.out) else None
    rates = rates or [cfg.rate]
    table: dict[float, dict[str, MetricsReport]] = {}
    for rate in rates:
        table[rate] = {}
        for col, kind in (("zero-fill", "mlp"), ("IA", "ia_mlp")):
            sub = out / f"rate{rate:g}_{kind}" if out else None
            table[rate][col] = run_experiment(variant(cfg, rate=rate, model=kind), sub, snapshot=False)
    if out is not None:
        rows = [{"rate": r, "zero-fill": t["zero-fill"].mean.mae, "IA": t["IA"].mean.mae} for r, t in table.items()]
        _write_csv(out / "impute.csv", rows)
    return table


# ---------------------------------------------------------------- spatial snapshot


def snapshot_rows(ds: TimeSeriesDataset, data: PreparedData, pred: np.ndarray, index: int, horizon: int) -> list[dict]:
    """One row per variable for test window ``index`` at forecast step ``horizon``."""
    masked = set(data.mask.indices)
    x_last = data.normalizer.invert(data.test.X[index, :, -1, 0], axis=0)
    rows = []
    for i in range(ds.n):
        row = {"variable": ds.ids[i]}
        if ds.coords is not None:
            row["x"], row["y"] = float(ds.coords[i, 0]), float(ds.coords[i, 1])
        row.update(
            input=0.0 if i in masked else float(x_last[i]),
            predicted=float(pred[index, i, horizon]),
            true=float(data.test.Y[index, i, horizon]),
            masked=int(i in masked),
        )
        rows.append(row)
    return rows


def export_spatial_snapshot(ds, data, pred, out, index: int = 0, horizon: int = 0) -> list[dict]:
    out = Path(out)
    rows = snapshot_rows(ds, data, pred, index, horizon)
    _write_csv(out / "snapshot.csv", rows)
    if ds.coords is not None:
        (out / "snapshot.svg").write_text(snapshot_svg(rows))
    return rows


def _color(v: float, lo: float, hi: float) -> str:
    t = 0.5 if hi <= lo else (v - lo) / (hi - lo)
    r, b = int(255 * t), int(255 * (1 - t))
    return f"#{r:02x}40{b:02x}"


def snapshot_svg(rows: list[dict], size: int = 240, pad: int = 16) -> str:
    """Three panels (input, predicted, true); hollow markers are masked variables."""
    vals = [r[k] for r in rows for k in ("input", "predicted", "true")]
    lo, hi = min(vals), max(vals)
    xs = [r["x"] for r in rows]
    ys = [r["y"] for r in rows]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)

    def px(v, a, b):
        return pad + (size - 2 * pad) * (0.5 if b <= a else (v - a) / (b - a))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{3 * size}" height="{size + 20}">']
    for p, key in enumerate(("input", "predicted", "true")):
        ox = p * size
        parts.append(f'<text x="{ox + pad}" y="14" font-size="12">{key}</text>')
        for r in rows:
            cx = ox + px(r["x"], x0, x1)
            cy = 20 + px(r["y"], y0, y1)
            fill = _color(r[key], lo, hi)
            stroke = ' stroke="black" stroke-width="1.5"' if r["masked"] else ""
            parts.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="6" fill="{fill}"{stroke}>'
                         f'<title>{r["variable"]}: {r[key]:.4g}</title></circle>')
    parts.append("</svg>")
    return "\n".join(parts)
