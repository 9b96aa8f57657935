"""Datasets, splits, normalization, windowing, variable masks and synthetic data."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

HISTORY = 12
HORIZON = 12
MIN_STEPS = 24
MASK_RATES = (0.0, 0.25, 0.5, 0.75, 0.9)


class DatasetError(ValueError):
    pass


@dataclass
class TimeSeriesDataset:
    values: np.ndarray  # N x T
    ids: list[str] = field(default_factory=list)
    granularity: int = 300  # seconds per step
    coords: np.ndarray | None = None  # N x 2
    distances: np.ndarray | None = None  # N x N

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DatasetError(f"values must be N x T, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DatasetError("dataset contains NaN or Inf")
        if not self.ids:
            self.ids = [f"v{i}" for i in range(self.n)]
        if self.distances is None and self.coords is not None:
            diff = self.coords[:, None, :] - self.coords[None, :, :]
            self.distances = np.sqrt((diff**2).sum(-1))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> int:
        return self.values.shape[1]


def load_dataset(path, distances_path=None, granularity: int = 300) -> TimeSeriesDataset:
    """Read a CSV whose header holds variable ids and whose rows are time steps."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    n = len(header)
    if n < 2:
        raise DatasetError(f"{path}: need N>=2 variables, found {n}")
    if len(body) <= MIN_STEPS:
        raise DatasetError(f"{path}: T<={MIN_STEPS} (found {len(body)} rows)")
    vals = np.empty((len(body), n))
    for i, row in enumerate(body):
        if len(row) != n:
            raise DatasetError(f"{path}: ragged row {i + 2}: {len(row)} cells, header has {n}")
        try:
            vals[i] = [float(c) for c in row]
        except ValueError as e:
            raise DatasetError(f"{path}: non-numeric cell in row {i + 2}: {e}") from None
    dist = np.loadtxt(distances_path, delimiter=",", ndmin=2) if distances_path else None
    return TimeSeriesDataset(vals.T.copy(), ids=[h.strip() for h in header], granularity=granularity, distances=dist)


def save_dataset(ds: TimeSeriesDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ds.ids)
        for row in ds.values.T:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------- splits


def split(t: int, ratios=(0.7, 0.1, 0.2), min_len: int = HISTORY + HORIZON) -> tuple[range, range, range]:
    """Chronological train/val/test ranges over ``t`` steps."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    a = int(round(t * ratios[0]))
    b = int(round(t * (ratios[0] + ratios[1])))
    parts = (range(0, a), range(a, b), range(b, t))
    for name, r in zip(("train", "val", "test"), parts):
        if len(r) < min_len:
            raise ValueError(f"{name} split has {len(r)} steps, needs at least {min_len}")
    return parts


# ---------------------------------------------------------------- normalization


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train_values: np.ndarray, missing=()) -> Normalizer:
        """Per-variable z-score statistics; masked variables get (0, 1)."""
        x = np.asarray(train_values, dtype=np.float64)
        mean = x.mean(axis=1)
        std = x.std(axis=1)
        const = std <= 1e-12
        if const.any():
            log.warning("constant series %s: using std=1", np.flatnonzero(const).tolist())
            std[const] = 1.0
        idx = np.asarray(list(missing), dtype=np.intp)
        mean[idx] = 0.0
        std[idx] = 1.0
        return cls(mean, std)

    def apply(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        """Normalize; ``axis`` is the variable axis (1 for window batches)."""
        return (x - self._b(x, self.mean, axis)) / self._b(x, self.std, axis)

    def invert(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        return x * self._b(x, self.std, axis) + self._b(x, self.mean, axis)

    @staticmethod
    def _b(x: np.ndarray, v: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * np.ndim(x)
        shape[axis] = v.shape[0]
        return v.reshape(shape)


# ---------------------------------------------------------------- windows


def make_windows(values: np.ndarray, history: int = HISTORY, horizon: int = HORIZON, stride: int = 1):
    """Slide over ``values`` (N x T); returns X (W x N x H) and Y (W x N x L)."""
    values = np.asarray(values)
    n, t = values.shape
    if t < history + horizon:
        raise ValueError(f"segment of length {t} shorter than history+horizon={history + horizon}")
    starts = np.arange(0, t - history - horizon + 1, stride)
    X = np.stack([values[:, s : s + history] for s in starts])
    Y = np.stack([values[:, s + history : s + history + horizon] for s in starts])
    return X, Y


@dataclass
class WindowBatch:
    X: np.ndarray  # B x N x H x C, normalized and masked
    Y: np.ndarray  # B x N x L, original units

    def __len__(self) -> int:
        return self.X.shape[0]

    def batches(self, size: int, rng: np.random.Generator | None = None):
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for s in range(0, len(order), size):
            idx = order[s : s + size]
            yield WindowBatch(self.X[idx], self.Y[idx])


# ---------------------------------------------------------------- masks


@dataclass(frozen=True)
class MaskSpec:
    rate: float
    seed: int
    indices: tuple[int, ...]
    n: int

    def to_json(self) -> str:
        return json.dumps({"rate": self.rate, "seed": self.seed, "indices": list(self.indices), "n": self.n})

    @classmethod
    def from_json(cls, text: str) -> MaskSpec:
        d = json.loads(text)
        return cls(float(d["rate"]), int(d["seed"]), tuple(int(i) for i in d["indices"]), int(d.get("n", 0)))

    @property
    def normal(self) -> tuple[int, ...]:
        m = set(self.indices)
        return tuple(i for i in range(self.n) if i not in m)


def n_masked(n: int, rate: float) -> int:
    m = int(round(rate * n))
    if m >= n:
        log.warning("mask rate %.3f on N=%d would hide every variable; clamping to %d", rate, n, n - 1)
        m = n - 1
    return m


def gen_mask(n: int, rate: float, seed: int) -> MaskSpec:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"mask rate must lie in [0, 1), got {rate}")
    m = n_masked(n, rate)
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=m, replace=False) if m else np.array([], dtype=int)
    return MaskSpec(float(rate), int(seed), tuple(sorted(int(i) for i in idx)), n)


def apply_mask(X: np.ndarray, mask: MaskSpec | tuple | list) -> np.ndarray:
    """Zero the whole history of masked variables; X is ``... x N x H [x C]`` with N at axis 1."""
    idx = list(mask.indices if isinstance(mask, MaskSpec) else mask)
    out = np.array(X, copy=True)
    if idx:
        out[:, idx] = 0.0
    return out


def time_of_day(t_index: np.ndarray, granularity: int) -> np.ndarray:
    steps = max(1, 86400 // granularity)
    return (np.asarray(t_index) % steps) / steps


@dataclass
class PreparedData:
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch
    normalizer: Normalizer
    mask: MaskSpec
    ranges: tuple[range, range, range]


def prepare(
    ds: TimeSeriesDataset,
    mask: MaskSpec,
    ratios=(0.7, 0.1, 0.2),
    history: int = HISTORY,
    horizon: int = HORIZON,
    train_stride: int = 1,
    time_channel: bool = False,
    zero_raw: bool = False,
) -> PreparedData:
    """Split, fit the normalizer on train, window each split and zero masked histories."""
    ranges = split(ds.t, ratios, history + horizon)
    train_vals = ds.values[:, ranges[0].start : ranges[0].stop]
    norm = Normalizer.fit(train_vals, mask.indices)
    raw = ds.values
    if zero_raw and mask.indices:
        raw = raw.copy()
        raw[list(mask.indices)] = 0.0
    normed = norm.apply(raw)
    tod = time_of_day(np.arange(ds.t), ds.granularity)
    out = []
    for r, stride in zip(ranges, (train_stride, 1, 1)):
        X, _ = make_windows(normed[:, r.start : r.stop], history, horizon, stride)
        _, Y = make_windows(ds.values[:, r.start : r.stop], history, horizon, stride)
        X = X[..., None]
        if time_channel:
            T, _ = make_windows(np.broadcast_to(tod[r.start : r.stop], (ds.n, len(r))), history, horizon, stride)
            X = np.concatenate([X, T[..., None]], axis=-1)
        X = apply_mask(X, mask)
        out.append(WindowBatch(X, Y))
    return PreparedData(*out, normalizer=norm, mask=mask, ranges=ranges)


# ---------------------------------------------------------------- synthetic data


@dataclass
class SynthData:
    dataset: TimeSeriesDataset
    A: np.ndarray  # ground-truth adjacency used for diffusion


def synth_generate(
    n: int,
    t: int,
    graph_seed: int = 0,
    noise: float = 0.1,
    signal_seed: int | None = None,
    periods=(12.0, 31.0, 72.0),
    alpha: float = 0.5,
    radius: float = 0.35,
    wavenumber: float = 0.15,
) -> SynthData:
    """Spatially correlated series on a random geometric graph.

    Each variable mixes shared sinusoids whose phase drifts slowly with
    position (travelling waves). The mixture is diffused over the graph,
    ``x_t = alpha s_t + (1 - alpha) A_row x_{t-1} + noise eps_t``, so a missing
    variable is recoverable from its neighbours.
    """
    if n < 4:
        raise ValueError("synthetic data needs N >= 4")
    rng = np.random.default_rng(graph_seed)
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    dist = np.sqrt(((coords[:, None] - coords[None]) ** 2).sum(-1))
    A = (dist <= radius).astype(float)
    nearest = np.argsort(dist + np.eye(n) * 1e9, axis=1)[:, :2]
    for i in range(n):
        A[i, nearest[i]] = 1.0
    A = np.maximum(A, A.T)
    np.fill_diagonal(A, 0.0)
    A_row = A / A.sum(axis=1, keepdims=True)

    srng = np.random.default_rng(graph_seed if signal_seed is None else signal_seed + 7919)
    tt = np.arange(t)
    s = np.zeros((n, t))
    for p in periods:
        direction = srng.normal(size=2)
        direction /= np.linalg.norm(direction)
        phase = 2 * np.pi * wavenumber * coords @ direction + srng.uniform(0, 2 * np.pi)
        amp = srng.uniform(0.6, 1.2) * (1.0 + 0.2 * np.sin(2 * np.pi * coords @ srng.normal(size=2) * 0.5))
        s += amp[:, None] * np.sin(2 * np.pi * tt[None, :] / p + phase[:, None])
    x = np.zeros((n, t))
    prev = s[:, 0]
    eps = srng.normal(size=(n, t))
    for k in range(t):
        prev = alpha * s[:, k] + (1 - alpha) * A_row @ prev + noise * eps[:, k]
        x[:, k] = prev
    ds = TimeSeriesDataset(x, ids=[f"s{i}" for i in range(n)], granularity=300, coords=coords)
    return SynthData(ds, A)
