"""Predefined and adaptive graphs.

Predefined adjacency comes from prior knowledge: a thresholded Gaussian
distance kernel for sensor networks, or absolute Pearson correlation when no
geometry is known. The adaptive graph is rebuilt from learned variable
embeddings fused with the current recovered representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PEARSON_THRESHOLD = 0.1


@dataclass
class Graph:
    A: np.ndarray
    A_pre: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_adjacency(cls, A: np.ndarray) -> Graph:
        return cls(np.asarray(A, dtype=np.float64), normalize_predefined(A))


def build_adjacency_distance(dist: np.ndarray, threshold: float = np.inf, sigma: float | None = None) -> np.ndarray:
    """``exp(-d^2 / sigma^2)`` for pairs closer than ``threshold``, zero diagonal.

    ``sigma`` defaults to the standard deviation of the off-diagonal distances.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError(f"distance table must be square, got {dist.shape}")
    if (dist < 0).any():
        raise ValueError("distances must be nonnegative")
    if not np.allclose(dist, dist.T):
        raise ValueError("distance table must be symmetric")
    n = dist.shape[0]
    if sigma is None:
        off = dist[~np.eye(n, dtype=bool)]
        sigma = float(off.std()) if off.size and off.std() > 0 else 1.0
    A = np.exp(-(dist**2) / sigma**2)
    A[dist >= threshold] = 0.0
    np.fill_diagonal(A, 0.0)
    return A


def pearson_matrix(series: np.ndarray) -> np.ndarray:
    """Correlation matrix where any zero-variance series correlates 0 with everything."""
    x = np.asarray(series, dtype=np.float64)
    xc = x - x.mean(axis=1, keepdims=True)
    norm = np.sqrt((xc * xc).sum(axis=1))
    ok = norm > 1e-12 * max(1.0, float(np.abs(x).max(initial=0.0)))
    safe = np.where(ok, norm, 1.0)
    rho = (xc @ xc.T) / np.outer(safe, safe)
    rho[~ok, :] = 0.0
    rho[:, ~ok] = 0.0
    return np.clip(rho, -1.0, 1.0)


def build_adjacency_pearson(
    series: np.ndarray, threshold: float = PEARSON_THRESHOLD, exclude: np.ndarray | list[int] = ()
) -> np.ndarray:
    """``|rho|`` above ``threshold``; rows/cols listed in ``exclude`` are zero."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[1] < 2:
        raise ValueError(f"need an N x T matrix with T >= 2, got {series.shape}")
    keep = np.ones(series.shape[0], dtype=bool)
    keep[np.asarray(exclude, dtype=np.intp)] = False
    A = np.abs(pearson_matrix(series))
    A[A < threshold] = 0.0
    A[~keep, :] = 0.0
    A[:, ~keep] = 0.0
    np.fill_diagonal(A, 0.0)
    return A


def normalize_predefined(A: np.ndarray) -> np.ndarray:
    """``I + D^-1/2 A D^-1/2`` with isolated nodes left as identity rows."""
    A = np.asarray(A, dtype=np.float64)
    if (A < 0).any():
        raise ValueError("adjacency must be nonnegative")
    deg = A.sum(axis=1)
    d_inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    d_inv_sqrt[nz] = deg[nz] ** -0.5
    return np.eye(A.shape[0]) + d_inv_sqrt[:, None] * A * d_inv_sqrt[None, :]


def load_adjacency_csv(path) -> np.ndarray:
    A = np.loadtxt(path, delimiter=",", ndmin=2)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency file must be square, got {A.shape}")
    return A


@dataclass
class AdaptiveGraphState:
    """Learned pieces of the adaptive graph for one cell.

    ``E_A`` is the static variable embedding; ``W_x`` projects the current
    representation (C' -> d), ``W_e`` the embedding (d -> d), and
    ``fc_w``/``fc_b`` fuse the concatenation (2d -> d).
    """

    E_A: Tensor
    W_x: Tensor
    W_e: Tensor
    fc_w: Tensor
    fc_b: Tensor

    @classmethod
    def init(cls, n: int, c_rep: int, d: int, rng: np.random.Generator, dtype=np.float64) -> AdaptiveGraphState:
        def u(shape, fan):
            b = 1.0 / np.sqrt(fan)
            return Tensor(rng.uniform(-b, b, size=shape).astype(dtype), requires_grad=True)

        return cls(
            E_A=u((n, d), d),
            W_x=u((c_rep, d), c_rep),
            W_e=u((d, d), d),
            fc_w=u((2 * d, d), 2 * d),
            fc_b=u((d,), 2 * d),
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"E_A": self.E_A, "W_x": self.W_x, "W_e": self.W_e, "fc_w": self.fc_w, "fc_b": self.fc_b}

    @property
    def d(self) -> int:
        return self.E_A.shape[1]


def fuse_embedding(x_ia: Tensor, state: AdaptiveGraphState) -> Tensor:
    """``FC(concat(x_ia W_x, E_A W_e))`` for ``... x N x C'`` input."""
    if x_ia.shape[-1] != state.W_x.shape[0] or x_ia.shape[-2] != state.E_A.shape[0]:
        raise ad.ShapeError("fuse_embedding", x_ia.shape, state.W_x.shape, state.E_A.shape)
    left = x_ia @ state.W_x
    right = state.E_A @ state.W_e
    if left.ndim > 2:
        right = ad.Tensor(np.ones(left.shape[:-2] + (1, 1), dtype=left.dtype)) * right
    return ad.concat([left, right], axis=-1) @ state.fc_w + state.fc_b


def adaptive_adjacency(E_n: Tensor) -> Tensor:
    """``I + row_softmax(GeLU(E_n E_n^T))``; leading axes are batch axes."""
    n = E_n.shape[-2]
    sim = E_n @ ad.swapaxes(E_n, -1, -2)
    return ad.softmax(ad.gelu(sim), axis=-1) + np.eye(n, dtype=E_n.dtype)
