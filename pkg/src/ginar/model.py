"""GinAR encoder-decoder.

Each cell is an SRU whose dense layers are replaced by interpolation attention
(input side) and adaptive graph convolution (gates and candidate). Layers run
the cell left to right over the history window; the last hidden state of every
layer is concatenated and decoded to all horizons at once by a two-layer MLP.

Tensors inside the model are batched: ``B x N x H x C`` in, ``B x N x L`` out.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import AdaptiveGraphState, adaptive_adjacency, fuse_embedding
from .ia import IAState, apply_ia, identity_projection, plan_neighbors

GATES = ("f", "r", "c")


@dataclass
class ModelConfig:
    n_vars: int
    c_in: int = 1
    hidden: int = 32  # embedding size C'
    embed: int = 16  # variable embedding size d
    n_layers: int = 2
    history: int = 12
    horizon: int = 12
    decoder_hidden: int = 64
    dropout: float = 0.15
    ia_k: int | None = None
    ia_dense: bool = False
    pairwise_scores: bool = False
    use_ia: bool = True
    use_pg: bool = True
    use_ag: bool = True
    sigmoid_gates: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        if not (self.use_pg or self.use_ag):
            raise ValueError("cannot ablate both the predefined and the adaptive graph")
        if self.n_layers < 1:
            raise ValueError("need at least one layer")


def _uniform(rng, shape, fan, dtype):
    b = 1.0 / np.sqrt(fan)
    return Tensor(rng.uniform(-b, b, size=shape).astype(dtype), requires_grad=True)


@dataclass
class GinARCellParams:
    ia: IAState
    ag: AdaptiveGraphState
    # per gate: W1, b1, W2, b2 (candidate has no biases), ln_gain, ln_bias
    gates: dict[str, dict[str, Tensor]] = field(default_factory=dict)

    @classmethod
    def init(cls, cfg: ModelConfig, c_in: int, rng: np.random.Generator) -> GinARCellParams:
        dt = np.dtype(cfg.dtype)
        h = cfg.hidden
        ia = IAState.init(
            cfg.n_vars, c_in, h, cfg.embed, rng, k=cfg.ia_k, pairwise_scores=cfg.pairwise_scores,
            dense=cfg.ia_dense, dtype=dt,
        )
        ag = AdaptiveGraphState.init(cfg.n_vars, h, cfg.embed, rng, dtype=dt)
        gates = {}
        for g in GATES:
            p = {"W1": _uniform(rng, (h, h), h, dt), "W2": _uniform(rng, (h, h), h, dt)}
            if g != "c":
                p["b1"] = _uniform(rng, (h,), h, dt)
                p["b2"] = _uniform(rng, (h,), h, dt)
            p["ln_gain"] = Tensor(np.ones(h, dtype=dt), requires_grad=True)
            p["ln_bias"] = Tensor(np.zeros(h, dtype=dt), requires_grad=True)
            gates[g] = p
        return cls(ia, ag, gates)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"ia.{k}": v for k, v in self.ia.parameters().items()}
        out.update({f"ag.{k}": v for k, v in self.ag.parameters().items()})
        for g, p in self.gates.items():
            out.update({f"{g}.{k}": v for k, v in p.items()})
        return out


def agcn_apply(
    x_ia: Tensor,
    A_pre,
    A_adap,
    W1: Tensor,
    b1: Tensor | None,
    W2: Tensor,
    b2: Tensor | None,
    ln: tuple[Tensor, Tensor] | None = None,
    use_pg: bool = True,
    use_ag: bool = True,
    layer_norm: bool = True,
) -> Tensor:
    """``LN(A_pre X W1 + b1 + A_adap X W2 + b2)``; ablated graph terms drop out.

    ``layer_norm=False`` returns the pre-normalization sum.
    """
    if not (use_pg or use_ag):
        raise ValueError("agcn_apply: both graph terms ablated, no propagation path")
    z = None
    if use_pg:
        z = _lift_graph(A_pre, x_ia) @ x_ia @ W1
    if use_ag:
        t = _lift_graph(A_adap, x_ia) @ x_ia @ W2
        z = t if z is None else z + t
    for b in (b1, b2):
        if b is not None:
            z = z + b
    if not layer_norm:
        return z
    gain, bias = ln if ln is not None else (None, None)
    return ad.layer_norm(z, gain, bias)


def _lift_graph(A, like: Tensor) -> Tensor:
    if isinstance(A, Tensor):
        return A
    return Tensor(np.asarray(A, dtype=like.dtype))


class _LayerContext:
    """Per-forward constants for one layer: neighbor plan and fused gate weights."""

    def __init__(self, cell: GinARCellParams, cfg: ModelConfig, missing):
        self.missing = np.asarray(sorted(int(i) for i in missing), dtype=np.intp)
        self.plan = plan_neighbors(cell.ia, self.missing) if cfg.use_ia else None
        g = cell.gates
        h = cfg.hidden
        self.W1 = ad.concat([g["f"]["W1"], g["r"]["W1"], g["c"]["W1"]], axis=1)
        self.W2 = ad.concat([g["f"]["W2"], g["r"]["W2"], g["c"]["W2"]], axis=1)
        # biases stay even when their graph term is ablated; candidate has none
        zeros = Tensor(np.zeros(h, dtype=np.dtype(cfg.dtype)))
        bf = g["f"]["b1"] + g["f"]["b2"]
        br = g["r"]["b1"] + g["r"]["b2"]
        self.bias = ad.reshape(ad.concat([bf, br, zeros]), (3, h))
        self.gain = ad.concat([ad.reshape(g[k]["ln_gain"], (1, h)) for k in GATES], axis=0)
        self.shift = ad.concat([ad.reshape(g[k]["ln_bias"], (1, h)) for k in GATES], axis=0)


def _gate_inputs(
    cell: GinARCellParams, cfg: ModelConfig, A_pre: Tensor, x: Tensor, ctx: _LayerContext
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Recovered input, forget gate, highway gate and candidate for ``... x N x C`` input.

    None of these depend on the previous cell state, so any number of leading
    axes (batch, time) are processed in one pass.
    """
    h = cfg.hidden
    if cfg.use_ia:
        x_ia = apply_ia(cell.ia, x, ctx.missing, plan=ctx.plan)
    else:
        x_ia = identity_projection(cell.ia, x, ctx.missing)
    z = None
    if cfg.use_pg:
        z = (A_pre @ x_ia) @ ctx.W1
    if cfg.use_ag:
        A_adap = adaptive_adjacency(fuse_embedding(x_ia, cell.ag))
        t = (A_adap @ x_ia) @ ctx.W2
        z = t if z is None else z + t
    lead = z.shape[:-1]
    z = ad.reshape(z, lead + (3, h)) + ctx.bias
    z = ad.layer_norm(z, ctx.gain, ctx.shift)
    squash = ad.sigmoid if cfg.sigmoid_gates else ad.gelu
    return x_ia, squash(z[..., 0, :]), squash(z[..., 1, :]), z[..., 2, :]


def cell_step(
    cell: GinARCellParams,
    cfg: ModelConfig,
    A_pre: Tensor,
    x_t: Tensor,
    c_prev: Tensor,
    missing=(),
    ctx: _LayerContext | None = None,
    force_gates: dict[str, float] | None = None,
) -> tuple[Tensor, Tensor]:
    """One recurrent step: ``x_t`` (B x N x C) and ``c_prev`` (B x N x C') -> (h_t, c_t).

    ``force_gates`` pins ``f`` and/or ``r`` to a constant, for probing the
    memory and highway limits.
    """
    if ctx is None:
        ctx = _LayerContext(cell, cfg, missing)
    if x_t.shape[-1] != cell.ia.W.shape[0] or c_prev.shape[-1] != cfg.hidden:
        raise ad.ShapeError("cell_step", x_t.shape, c_prev.shape)
    x_ia, f, r, cand = _gate_inputs(cell, cfg, A_pre, x_t, ctx)
    if force_gates:
        if "f" in force_gates:
            f = Tensor(np.full(f.shape, force_gates["f"], dtype=f.dtype))
        if "r" in force_gates:
            r = Tensor(np.full(r.shape, force_gates["r"], dtype=r.dtype))
    c_t = (1.0 - f) * cand + f * c_prev
    h_t = r * ad.elu(c_t) + (1.0 - r) * x_ia
    return h_t, c_t


@dataclass
class DecoderParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, c_in: int, hidden: int, horizon: int, rng, dtype) -> DecoderParams:
        return cls(
            _uniform(rng, (c_in, hidden), c_in, dtype),
            _uniform(rng, (hidden,), c_in, dtype),
            _uniform(rng, (hidden, horizon), hidden, dtype),
            _uniform(rng, (horizon,), hidden, dtype),
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def decode(dec: DecoderParams, h_all: Tensor) -> Tensor:
    """``FC(ReLU(FC(h_all)))`` -> ``... x N x L`` in one shot."""
    if h_all.shape[-1] != dec.W1.shape[0]:
        raise ad.ShapeError("decode", h_all.shape, dec.W1.shape)
    return ad.relu(h_all @ dec.W1 + dec.b1) @ dec.W2 + dec.b2


class GinAR:
    def __init__(self, cfg: ModelConfig, A_pre: np.ndarray | None = None, seed: int = 0):
        self.cfg = cfg
        dt = np.dtype(cfg.dtype)
        n = cfg.n_vars
        if A_pre is None:
            A_pre = np.eye(n)
        A_pre = np.asarray(A_pre)
        if A_pre.shape != (n, n):
            raise ValueError(f"predefined graph must be {n}x{n}, got {A_pre.shape}")
        self.A_pre = Tensor(A_pre.astype(dt))
        rng = np.random.default_rng(seed)
        self.cells = [
            GinARCellParams.init(cfg, cfg.c_in if l == 0 else cfg.hidden, rng) for l in range(cfg.n_layers)
        ]
        self.decoder = DecoderParams.init(cfg.hidden * cfg.n_layers, cfg.decoder_hidden, cfg.horizon, rng, dt)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for l, cell in enumerate(self.cells):
            out.update({f"layers.{l}.{k}": v for k, v in cell.parameters().items()})
        out.update({f"decoder.{k}": v for k, v in self.decoder.parameters().items()})
        return out

    def layer_forward(self, l: int, x_seq: Tensor, missing) -> tuple[Tensor, Tensor]:
        """Run layer ``l`` over ``B x H x N x C`` (time on axis 1).

        Same result as calling :func:`cell_step` once per time step: only the
        cell-state recurrence is sequential, so everything else is computed for
        all steps at once. Returns hidden states ``B x H x N x C'`` and the last
        cell state.
        """
        cell = self.cells[l]
        ctx = _LayerContext(cell, self.cfg, missing)
        if x_seq.shape[-1] != cell.ia.W.shape[0]:
            raise ad.ShapeError("layer_forward", x_seq.shape, cell.ia.W.shape)
        x_ia, f, r, cand = _gate_inputs(cell, self.cfg, self.A_pre, x_seq, ctx)
        c0 = Tensor(np.zeros(cand.shape[:1] + cand.shape[2:], dtype=cand.dtype))
        c = ad.linear_scan((1.0 - f) * cand, f, c0, axis=1)
        h = r * ad.elu(c) + (1.0 - r) * x_ia
        return h, c[:, -1]

    def encode(self, x, missing=(), training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """``B x N x H x C`` -> concatenated last hidden states ``B x N x (C' n)``."""
        x = _as_input(x, self.A_pre.dtype)
        seq = Tensor(np.ascontiguousarray(np.swapaxes(x.data, 1, 2)))
        lasts = []
        for l in range(self.cfg.n_layers):
            seq, _ = self.layer_forward(l, seq, missing)
            lasts.append(seq[:, -1])
            if training and self.cfg.dropout > 0 and l + 1 < self.cfg.n_layers:
                seq = ad.dropout(seq, self.cfg.dropout, rng)
        return lasts[0] if len(lasts) == 1 else ad.concat(lasts, axis=-1)

    def forward(self, x, missing=(), training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return decode(self.decoder, self.encode(x, missing, training, rng))

    __call__ = forward

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr


def _as_input(x, dtype) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=dtype))
    if x.ndim == 3:
        x = Tensor(x.data[None])
    if x.ndim != 4:
        raise ad.ShapeError("model input", x.shape, detail="expected B x N x H x C")
    return x


def save_checkpoint(model, path, extra: dict | None = None) -> Path:
    """Write ``<path>.npz`` (named arrays) and ``<path>.json`` (manifest)."""
    path = Path(path)
    state = model.state_dict()
    np.savez(path.with_suffix(".npz"), **state)
    manifest = {
        "format": "ginar-checkpoint/1",
        "model": type(model).__name__,
        "config": asdict(model.cfg),
        "parameters": {k: list(v.shape) for k, v in state.items()},
    }
    if extra:
        manifest.update(extra)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    return path.with_suffix(".npz")


def load_checkpoint_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    with np.load(path.with_suffix(".npz")) as z:
        state = {k: z[k] for k in z.files}
    return manifest, state
