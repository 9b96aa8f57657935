"""Interpolation attention: rebuild masked variables from normal ones.

A learned correspondence matrix picks, for every masked variable, the normal
variables it may borrow from; attention weights over that set then mix their
projected features. Normal variables only pass through the shared projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_K = 10
_NEG = -1e9


@dataclass
class IAState:
    E1: Tensor  # N x d
    E2: Tensor  # d x N
    W: Tensor  # C x C', shared feature projection
    score_w: Tensor  # C' x 1
    score_b: Tensor  # 1
    k: int = DEFAULT_K
    pairwise_scores: bool = False
    pair_w: Tensor | None = None  # C' x 1, weight on the target row when pairwise
    dense: bool = False

    @classmethod
    def init(
        cls,
        n: int,
        c_in: int,
        c_out: int,
        d: int,
        rng: np.random.Generator,
        k: int | None = None,
        pairwise_scores: bool = False,
        dense: bool = False,
        dtype=np.float64,
    ) -> IAState:
        def u(shape, fan):
            b = 1.0 / np.sqrt(fan)
            return Tensor(rng.uniform(-b, b, size=shape).astype(dtype), requires_grad=True)

        k = min(DEFAULT_K, n - 1) if k is None else k
        return cls(
            E1=u((n, d), d),
            E2=u((d, n), d),
            W=u((c_in, c_out), c_in),
            score_w=u((c_out, 1), c_out),
            score_b=u((1,), c_out),
            k=max(1, min(k, max(n - 1, 1))),
            pairwise_scores=pairwise_scores,
            pair_w=u((c_out, 1), c_out) if pairwise_scores else None,
            dense=dense,
        )

    @property
    def n(self) -> int:
        return self.E1.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        out = {"E1": self.E1, "E2": self.E2, "W": self.W, "score_w": self.score_w, "score_b": self.score_b}
        if self.pair_w is not None:
            out["pair_w"] = self.pair_w
        return out


def build_correspondence(state: IAState) -> Tensor:
    """``I + row_softmax(ReLU(E1 E2))``."""
    n = state.n
    return ad.softmax(ad.relu(state.E1 @ state.E2), axis=-1) + np.eye(n, dtype=state.E1.dtype)


def neighbor_set(A_IA, i: int, k: int, candidates=None) -> np.ndarray:
    """Indices of the ``k`` largest off-diagonal entries of row ``i``.

    Ties go to the lower index. ``candidates`` restricts the pool (e.g. to
    normal variables); ``k`` is clamped to the pool size.
    """
    if k < 1:
        raise ValueError("neighbor cap k must be >= 1")
    row = np.asarray(A_IA.data if isinstance(A_IA, Tensor) else A_IA)[i]
    n = row.shape[0]
    pool = np.arange(n) if candidates is None else np.asarray(sorted(set(int(c) for c in candidates)), dtype=np.intp)
    pool = pool[pool != i]
    k = min(k, pool.size)
    order = np.argsort(-row[pool], kind="stable")
    return pool[order[:k]]


def _scores(state: IAState, proj: Tensor) -> Tensor:
    """Per-variable logits ``LeakyReLU(FC(W h_j))``; ``proj`` is ``... x N x C'``."""
    return ad.leaky_relu(proj @ state.score_w + state.score_b)


def attention_coefficients(state: IAState, features: Tensor, i: int, neighbors) -> Tensor:
    """Attention of masked variable ``i`` over ``neighbors`` (``features`` is N x C)."""
    neighbors = np.asarray(neighbors, dtype=np.intp)
    if neighbors.size == 0:
        raise ValueError(f"variable {i} has an empty neighbor set")
    proj = ad.take(features, neighbors, axis=0) @ state.W
    if state.pairwise_scores:
        own = ad.take(features, [i], axis=0) @ state.W @ state.pair_w
        logits = ad.leaky_relu(proj @ state.score_w + state.score_b + own)
    else:
        logits = _scores(state, proj)
    return ad.softmax(ad.reshape(logits, (neighbors.size,)), axis=0)


def recover_variable(state: IAState, features: Tensor, i: int, alpha: Tensor, neighbors) -> Tensor:
    """``ReLU(sum_j alpha_j W h_j)`` over the neighbor set."""
    neighbors = np.asarray(neighbors, dtype=np.intp)
    proj = ad.take(features, neighbors, axis=0) @ state.W
    mixed = ad.reshape(alpha, (1, neighbors.size)) @ proj
    return ad.relu(ad.reshape(mixed, (state.W.shape[1],)))


@dataclass
class NeighborPlan:
    """Per-mask neighbor structure shared by every sample in a batch."""

    missing: np.ndarray  # bool, N
    select: np.ndarray  # bool, N x N; row i marks N(i) for masked i
    logit_bias: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.logit_bias is None:
            self.logit_bias = np.where(self.select, 0.0, _NEG)


def plan_neighbors(state: IAState, missing_idx) -> NeighborPlan:
    n = state.n
    missing = np.zeros(n, dtype=bool)
    missing[np.asarray(list(missing_idx), dtype=np.intp)] = True
    normal = np.flatnonzero(~missing)
    select = np.zeros((n, n), dtype=bool)
    if missing.any() and normal.size:
        A = build_correspondence_values(state)
        k = normal.size if state.dense else state.k
        for i in np.flatnonzero(missing):
            select[i, neighbor_set(A, i, k, candidates=normal)] = True
    return NeighborPlan(missing, select)


def build_correspondence_values(state: IAState) -> np.ndarray:
    with ad.no_grad():
        return build_correspondence(state).data


def apply_ia(state: IAState, x: Tensor, missing_idx, plan: NeighborPlan | None = None) -> Tensor:
    """Recover masked rows of ``x`` (``N x C`` or ``B x N x C``) -> ``... x N x C'``.

    Masked rows are zeroed on entry, so their raw values never matter. The
    neighbor sets depend only on the correspondence matrix and the mask; pass a
    precomputed ``plan`` to avoid rebuilding it every step.
    """
    if plan is None:
        plan = plan_neighbors(state, missing_idx)
    n = state.n
    if x.shape[-2] != n or x.shape[-1] != state.W.shape[0]:
        raise ad.ShapeError("apply_ia", x.shape, state.W.shape, detail=f"expected ... x {n} x {state.W.shape[0]}")
    keep = (~plan.missing).astype(x.dtype)[:, None]
    proj = (x * keep) @ state.W
    if not plan.missing.any():
        return ad.relu(proj)
    if state.pairwise_scores:
        # e_ij = LeakyReLU(a . W h_j + b + a' . W h_i)
        pre = ad.swapaxes(proj @ state.score_w + state.score_b, -1, -2) + proj @ state.pair_w
        logits = ad.leaky_relu(pre)
    else:
        logits = ad.swapaxes(_scores(state, proj), -1, -2)  # ... x 1 x N, score of source j
    alpha = ad.softmax(logits + plan.logit_bias.astype(x.dtype), axis=-1)
    mix = alpha * plan.missing.astype(x.dtype)[:, None] + np.diag((~plan.missing).astype(x.dtype))
    return ad.relu(mix @ proj)


def identity_projection(state: IAState, x: Tensor, missing_idx) -> Tensor:
    """Ablated stand-in: zero-filled input through the shared projection only."""
    n = state.n
    keep = np.ones(n, dtype=x.dtype)
    keep[np.asarray(list(missing_idx), dtype=np.intp)] = 0.0
    return ad.relu((x * keep[:, None]) @ state.W)
