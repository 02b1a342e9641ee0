"""Graph builders: the learned backbone/temporal/dynamic graphs and the four
fixed comparison graphs (geography, gravity, DTW similarity, correlation)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .exceptions import ConfigurationError, ContractError
from .tensor import Tensor

EARTH_RADIUS_KM = 6371.0088
GRAVITY_EPS_KM2 = 1.0
STATIC_KINDS = ("geography", "gravity", "dtw", "pcc", "backbone-only")


@dataclass(frozen=True)
class TCNConfig:
    layers: int = 1
    kernel: int = 3
    dilation: int = 1
    out_dim: int = 8

    def __post_init__(self):
        if min(self.layers, self.kernel, self.dilation, self.out_dim) < 1:
            raise ConfigurationError(f"TCN settings must all be positive: {self}")
        if self.layers != 1:
            raise ConfigurationError("only single-layer TCNs are supported")


@dataclass
class GraphSet:
    """Row-stochastic learned graphs. ``a_temp``/``a_dyn`` carry a time axis
    (and optionally a leading window axis)."""

    a_back: Tensor  # (N, N)
    a_temp: Tensor  # (..., T, N, N)
    a_dyn: Tensor  # (..., T, N, N)


@dataclass
class StaticGraph:
    kind: str
    weights: np.ndarray  # (N, N) row-stochastic


# -- learned graphs ---------------------------------------------------------

def init_embedding(n_patches: int, d_ada: int = 32, rng=None) -> Tensor:
    rng = np.random.default_rng(rng)
    bound = 1.0 / np.sqrt(d_ada)
    return Tensor(rng.uniform(-bound, bound, size=(n_patches, d_ada)), requires_grad=True)


def backbone_graph(E: Tensor) -> Tensor:
    """Raw backbone logits ``E E^T``."""
    return tn.matmul(E, E.T)


def temporal_graph(H: Tensor, filters: Tensor, bias: Tensor | None = None,
                   cfg: TCNConfig = TCNConfig()) -> Tensor:
    """Per-step logits ``Z_t Z_t^T`` from a causal TCN over ``H``.

    ``H`` is ``(..., N, T, D_H)``; the result is ``(..., T, N, N)`` and slice
    ``t`` only sees input steps ``<= t``.
    """
    Z = tn.causal_dilated_conv1d(H, filters, cfg.dilation, bias)  # (..., N, T, D_TCN)
    Z = Z.swapaxes(-3, -2)  # (..., T, N, D_TCN)
    return tn.matmul(Z, Z.T)


def fuse_dynamic(back_logits: Tensor, temp_logits: Tensor) -> GraphSet:
    """Double softmax fusion: softmax(softmax(relu(B)) + softmax(relu(T_t)))."""
    a_back = tn.row_softmax(tn.relu(back_logits))
    a_temp = tn.row_softmax(tn.relu(temp_logits))
    a_dyn = tn.row_softmax(a_back + a_temp)
    return GraphSet(a_back, a_temp, a_dyn)


# -- fixed comparison graphs -------------------------------------------------

def row_normalize(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return w / w.sum(axis=1, keepdims=True)


def geography_graph(adjacency) -> StaticGraph:
    """Binary adjacency plus self-loops, rows scaled to sum to one."""
    A = np.asarray(adjacency, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"adjacency must be square, got {A.shape}")
    if not np.array_equal(A, A.T):
        raise ContractError("adjacency must be symmetric")
    W = (A != 0).astype(np.float64)
    np.fill_diagonal(W, 1.0)
    return StaticGraph("geography", row_normalize(W))


def haversine_km(coords: np.ndarray) -> np.ndarray:
    """Pairwise great-circle distances for ``(N, 2)`` lat/lon degrees."""
    lat, lon = np.radians(coords[:, 0]), np.radians(coords[:, 1])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def gravity_weights(population, distance_km) -> np.ndarray:
    """Raw gravity weights ``p_i p_j / max(d_ij^2, eps)`` with a zero diagonal."""
    pop = np.asarray(population, dtype=np.float64)
    d2 = np.maximum(np.asarray(distance_km, dtype=np.float64) ** 2, GRAVITY_EPS_KM2)
    w = np.outer(pop, pop) / d2
    np.fill_diagonal(w, 0.0)
    return w


def gravity_graph(population, coordinates) -> StaticGraph:
    if coordinates is None:
        raise ConfigurationError("gravity graph needs patch coordinates (lat/lon in the metadata file)")
    pop = np.asarray(population, dtype=np.float64)
    if np.any(pop <= 0):
        raise ContractError("populations must be positive")
    w = gravity_weights(pop, haversine_km(np.asarray(coordinates, dtype=np.float64)))
    if len(pop) == 1:
        w = np.ones((1, 1))
    else:
        np.fill_diagonal(w, w.max(axis=1))
    return StaticGraph("gravity", row_normalize(w))


def dtw_distance(x, y) -> float:
    """Classic O(len(x) * len(y)) dynamic time warping with |a - b| cost."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    cost = np.abs(x[:, None] - y[None, :])
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row_prev = acc[i - 1]
        row = acc[i]
        c = cost[i - 1]
        for j in range(1, m + 1):
            row[j] = c[j - 1] + min(row_prev[j], row[j - 1], row_prev[j - 1])
    return float(acc[n, m])


def _zscore(series: np.ndarray) -> np.ndarray:
    mu = series.mean(axis=1, keepdims=True)
    sd = series.std(axis=1, keepdims=True)
    return np.where(sd > 0, (series - mu) / np.where(sd > 0, sd, 1.0), 0.0)


def dtw_graph(series) -> StaticGraph:
    """Gaussian-kernel similarity of pairwise DTW distances on z-scored series."""
    X = np.asarray(series, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ContractError(f"dtw_graph needs an (N, T>=2) array, got {X.shape}")
    Z = _zscore(X)
    N = len(Z)
    D = np.zeros((N, N))
    for i in range(N):
        for j in range(i + 1, N):
            D[i, j] = D[j, i] = dtw_distance(Z[i], Z[j])
    off = D[~np.eye(N, dtype=bool)]
    sigma = off.std() if off.size else 0.0
    S = np.exp(-(D ** 2) / sigma ** 2) if sigma > 0 else np.ones((N, N))
    return StaticGraph("dtw", row_normalize(S))


def pcc_graph(series) -> StaticGraph:
    """Clipped Pearson correlation with unit self-weight."""
    X = np.asarray(series, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ContractError(f"pcc_graph needs an (N, T>=2) array, got {X.shape}")
    C = X - X.mean(axis=1, keepdims=True)
    norms = np.sqrt((C ** 2).sum(axis=1))
    ok = norms > 0
    safe = np.where(ok, norms, 1.0)
    R = (C @ C.T) / np.outer(safe, safe)
    R[~ok, :] = 0.0
    R[:, ~ok] = 0.0
    W = np.clip(R, 0.0, 1.0)
    np.fill_diagonal(W, 1.0)
    return StaticGraph("pcc", row_normalize(W))
