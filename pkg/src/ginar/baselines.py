"""Reference forecasters: a per-variable MLP on zero-filled input, and the same
MLP behind interpolation attention (trained end to end)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .ia import IAState, apply_ia, plan_neighbors


@dataclass
class MLPConfig:
    n_vars: int
    c_in: int = 1
    history: int = 12
    horizon: int = 12
    hidden: int = 64
    use_ia: bool = False
    ia_hidden: int = 8  # C' per step when IA is on
    embed: int = 16
    ia_k: int | None = None
    dtype: str = "float64"


def _uniform(rng, shape, fan, dtype):
    b = 1.0 / np.sqrt(fan)
    return Tensor(rng.uniform(-b, b, size=shape).astype(dtype), requires_grad=True)


class MLPForecaster:
    """Shared two-layer MLP applied to each variable's flattened history."""

    def __init__(self, cfg: MLPConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        dt = np.dtype(cfg.dtype)
        width = cfg.c_in
        self.ia = None
        if cfg.use_ia:
            self.ia = IAState.init(cfg.n_vars, cfg.c_in, cfg.ia_hidden, cfg.embed, rng, k=cfg.ia_k, dtype=dt)
            width = cfg.ia_hidden
        fan = width * cfg.history
        self.W1 = _uniform(rng, (fan, cfg.hidden), fan, dt)
        self.b1 = _uniform(rng, (cfg.hidden,), fan, dt)
        self.W2 = _uniform(rng, (cfg.hidden, cfg.horizon), cfg.hidden, dt)
        self.b2 = _uniform(rng, (cfg.horizon,), cfg.hidden, dt)

    def parameters(self) -> dict[str, Tensor]:
        out = {"mlp.W1": self.W1, "mlp.b1": self.b1, "mlp.W2": self.W2, "mlp.b2": self.b2}
        if self.ia is not None:
            out.update({f"ia.{k}": v for k, v in self.ia.parameters().items()})
        return out

    def forward(self, x, missing=(), training: bool = False, rng=None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.cfg.dtype))
        b, n, h, c = x.shape
        keep = np.ones(n, dtype=x.dtype)
        keep[list(missing)] = 0.0
        if self.ia is None:
            flat = Tensor((x.data * keep[:, None, None]).reshape(b, n, h * c))
        else:
            plan = plan_neighbors(self.ia, missing)
            steps = [apply_ia(self.ia, Tensor(x.data[:, :, t, :]), missing, plan=plan) for t in range(h)]
            flat = ad.concat(steps, axis=-1)
        return ad.relu(flat @ self.W1 + self.b1) @ self.W2 + self.b2

    __call__ = forward

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state) -> None:
        for k, p in self.parameters().items():
            p.data[...] = state[k]
