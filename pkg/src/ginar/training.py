"""L1 loss, Adam, MultiStepLR schedule, global-norm clipping and the epoch loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Normalizer, PreparedData, WindowBatch
from .metrics import Metrics, horizon_average

log = logging.getLogger(__name__)

# (hidden C', variable embedding d, layers n) keyed by missing rate
RATE_HYPERPARAMS = {0.25: (32, 16, 2), 0.5: (32, 16, 2), 0.75: (16, 8, 3), 0.9: (16, 8, 3)}


def hyperparams_for_rate(rate: float) -> tuple[int, int, int]:
    """Table-driven sizes; rates between columns take the nearest column at or above."""
    for r in sorted(RATE_HYPERPARAMS):
        if rate <= r + 1e-9:
            return RATE_HYPERPARAMS[r]
    return RATE_HYPERPARAMS[0.9]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 0.006
    milestones: tuple[int, ...] = (1, 15, 40, 70, 90)
    gamma: float = 0.5
    clip_norm: float = 5.0
    batch: int = 16
    epochs: int = 100
    seed: int = 0
    train_stride: int = 1
    eval_batch: int = 64

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing: {self.milestones}")
        if self.lr0 < 0 or self.gamma <= 0 or self.clip_norm <= 0 or self.batch < 1 or self.epochs < 0:
            raise ValueError("training hyperparameters must be positive")


def l1_loss(y_hat: Tensor, y) -> Tensor:
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=y_hat.dtype))
    if y_hat.shape != y.shape:
        raise ad.ShapeError("l1_loss", y_hat.shape, y.shape)
    return ad.mean(ad.abs(y_hat - y))


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    crossed = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.lr0 * cfg.gamma**crossed


def global_grad_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))


def clip_gradients(params, max_norm: float = 5.0) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``; returns the factor."""
    params = list(params)
    norm = global_grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / (norm + 1e-12)
    for p in params:
        if p.grad is not None:
            p.grad *= factor
    return factor


@dataclass
class Adam:
    params: list[Tensor]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.params = list(self.params)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)


def denormalize(pred: Tensor, norm: Normalizer) -> Tensor:
    """Model output (B x N x L, normalized units) -> original units inside the graph."""
    std = norm.std.astype(pred.dtype)[:, None]
    mean = norm.mean.astype(pred.dtype)[:, None]
    return pred * std + mean


def predict(model, X: np.ndarray, missing, norm: Normalizer, batch: int = 64) -> np.ndarray:
    """Forecasts in original units for every window of ``X``."""
    outs = []
    with ad.no_grad():
        for s in range(0, X.shape[0], batch):
            xb = X[s : s + batch].astype(model.cfg.dtype)
            outs.append(denormalize(model.forward(xb, missing), norm).data)
    return np.concatenate(outs, axis=0)


def evaluate(model, data: WindowBatch, missing, norm: Normalizer, batch: int = 64) -> tuple[Metrics, np.ndarray]:
    pred = predict(model, data.X, missing, norm, batch)
    return horizon_average(pred, data.Y), pred


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val: Metrics

    def row(self) -> dict:
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "train_loss": self.train_loss,
            "val_mae": self.val.mae,
            "val_rmse": self.val.rmse,
            "val_mape": self.val.mape,
        }


def train_epoch(model, data: PreparedData, cfg: TrainConfig, opt: Adam, epoch: int) -> EpochRecord:
    """Shuffle, then forward / L1 / backward / clip / Adam for every batch."""
    lr = lr_at_epoch(cfg, epoch)
    rng = np.random.default_rng([cfg.seed, epoch, 0])
    drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
    missing = data.mask.indices
    params = list(model.parameters().values())
    losses = []
    for b, batch in enumerate(data.train.batches(cfg.batch, rng)):
        opt.zero_grad()
        try:
            out = model.forward(batch.X.astype(model.cfg.dtype), missing, training=True, rng=drop_rng)
            loss = l1_loss(denormalize(out, data.normalizer), batch.Y)
        except ad.NonFiniteError as e:
            raise TrainingError(f"epoch {epoch} batch {b}: non-finite loss ({e})") from e
        if not math.isfinite(loss.item()):
            raise TrainingError(f"epoch {epoch} batch {b}: non-finite loss")
        ad.backward(loss, params)
        clip_gradients(params, cfg.clip_norm)
        opt.step(lr)
        losses.append(loss.item())
    val, _ = evaluate(model, data.val, missing, data.normalizer, cfg.eval_batch)
    return EpochRecord(epoch, lr, float(np.mean(losses)) if losses else float("nan"), val)


@dataclass
class FitResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int  # -1 means the untrained model
    history: list[EpochRecord]
    initial_val: Metrics

    @property
    def best_val_mae(self) -> float:
        if self.best_epoch < 0:
            return self.initial_val.mae
        return self.history[self.best_epoch].val.mae


def fit(model, data: PreparedData, cfg: TrainConfig, progress: bool = False) -> FitResult:
    """Train for ``cfg.epochs`` and restore the parameters with the lowest validation MAE."""
    opt = Adam(list(model.parameters().values()))
    init_val, _ = evaluate(model, data.val, data.mask.indices, data.normalizer, cfg.eval_batch)
    best_state, best_epoch, best_mae = model.state_dict(), -1, math.inf
    history: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        rec = train_epoch(model, data, cfg, opt, epoch)
        history.append(rec)
        if progress:
            log.info("epoch %d lr %.2e loss %.4f val_mae %.4f", epoch, rec.lr, rec.train_loss, rec.val.mae)
        if rec.val.mae < best_mae:
            best_mae, best_epoch, best_state = rec.val.mae, epoch, model.state_dict()
    model.load_state_dict(best_state)
    return FitResult(best_state, best_epoch, history, init_val)
