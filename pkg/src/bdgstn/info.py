"""Information diagnostics for learned graphs: histogram entropy, weight
variance and the Kraskov (KSG, algorithm 1) mutual-information estimator."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import ContractError

DEFAULT_BINS = 50
DEFAULT_K = 3
JITTER = 1e-10

_ASYMPTOTIC = (
    (1.0 / 12, 2), (-1.0 / 120, 4), (1.0 / 252, 6), (-1.0 / 240, 8), (1.0 / 132, 10),
    (-691.0 / 32760, 12), (1.0 / 12, 14),
)


def digamma(x):
    """psi(x) for x > 0: shift up to x >= 10 with psi(x) = psi(x+1) - 1/x, then
    the Stirling-type asymptotic series."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ContractError("digamma is only implemented for positive arguments")
    x = x.copy()
    shift = np.zeros_like(x)
    small = x < 10.0
    while np.any(small):
        shift[small] += 1.0 / x[small]
        x[small] += 1.0
        small = x < 10.0
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    power = np.ones_like(x)
    for coef, _ in _ASYMPTOTIC:
        power = power * inv2
        series += coef * power
    out = np.log(x) - 0.5 / x - series - shift
    return out if out.ndim else float(out)


def discrete_entropy(weights, bins: int = DEFAULT_BINS) -> float:
    """Shannon entropy in bits of a ``bins``-bucket histogram over [0, 1]."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ContractError("entropy of an empty weight set is undefined")
    counts, _ = np.histogram(np.clip(w, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    p = counts[counts > 0] / w.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


def weight_variance(weights) -> float:
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ContractError("variance of an empty weight set is undefined")
    if np.all(w == w[0]):
        return 0.0
    return float(np.mean((w - w.mean()) ** 2))


def _jitter(a: np.ndarray, magnitude: float) -> np.ndarray:
    # noise seeded by the array content, so identical inputs get identical
    # noise and the estimate is symmetric in its two arguments
    seed = int.from_bytes(hashlib.sha256(np.ascontiguousarray(a).tobytes()).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    return a + magnitude * rng.uniform(-1.0, 1.0, size=a.shape)


def ksg_mutual_information(x, y, k: int = DEFAULT_K, jitter: float = JITTER) -> float:
    """Kraskov-Stoegbauer-Grassberger estimate of I(X; Y) in nats.

    The radius for sample ``i`` is its max-norm distance to the ``k``-th
    neighbour in the joint space; ``n_x``/``n_y`` count marginal neighbours
    strictly inside that radius.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)
    n = len(x)
    if len(y) != n:
        raise ContractError(f"x and y need equal sample counts, got {n} and {len(y)}")
    if n <= k:
        raise ContractError(f"need more than k={k} samples, got {n}")
    if jitter > 0:
        x, y = _jitter(x, jitter), _jitter(y, jitter)
    joint = np.hstack([x, y])
    dist, _ = cKDTree(joint).query(joint, k=k + 1, p=np.inf)
    radius = np.nextafter(dist[:, k], 0.0)
    nx = cKDTree(x).query_ball_point(x, r=radius, p=np.inf, return_length=True) - 1
    ny = cKDTree(y).query_ball_point(y, r=radius, p=np.inf, return_length=True) - 1
    avg = np.mean(digamma(nx + 1.0) + digamma(ny + 1.0))
    return float(digamma(float(k)) - avg + digamma(float(n)))


@dataclass
class InfoReport:
    h_back: float
    h_time: float
    d_back: float
    d_time: float
    i_back: float
    i_time: float
    bins: int = DEFAULT_BINS
    k: int = DEFAULT_K
    n: int = 0

    @property
    def h_back_below_h_time(self) -> bool:
        return self.h_back < self.h_time

    @property
    def i_back_below_i_time(self) -> bool:
        return self.i_back < self.i_time

    def as_dict(self) -> dict:
        out = asdict(self)
        out["h_back_below_h_time"] = self.h_back_below_h_time
        out["i_back_below_i_time"] = self.i_back_below_i_time
        return out

    def all_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.h_back, self.h_time, self.d_back,
                                               self.d_time, self.i_back, self.i_time))


def dynamic_graph_report(a_back, a_temp, a_dyn, bins: int = DEFAULT_BINS, k: int = DEFAULT_K) -> InfoReport:
    """Entropy, variance and MI of backbone/temporal graphs against the fused one.

    ``a_back`` is ``(N, N)``; ``a_temp`` and ``a_dyn`` share a shape ending in
    ``(T, N, N)``. MI pairs edge weights sample-wise: ``(A_back[i, j],
    A_dyn[..., t, i, j])`` over every window, step and edge.
    """
    a_back = np.asarray(a_back, dtype=np.float64)
    a_temp = np.asarray(a_temp, dtype=np.float64)
    a_dyn = np.asarray(a_dyn, dtype=np.float64)
    if a_temp.shape != a_dyn.shape or a_dyn.shape[-2:] != a_back.shape:
        raise ContractError(f"incompatible graph shapes {a_back.shape}, {a_temp.shape}, {a_dyn.shape}")
    back_b = np.broadcast_to(a_back, a_dyn.shape).ravel()
    dyn = a_dyn.ravel()
    temp = a_temp.ravel()
    return InfoReport(
        h_back=discrete_entropy(a_back, bins),
        h_time=discrete_entropy(temp, bins),
        d_back=weight_variance(a_back),
        d_time=weight_variance(temp),
        i_back=ksg_mutual_information(back_b, dyn, k),
        i_time=ksg_mutual_information(temp, dyn, k),
        bins=bins, k=k, n=int(dyn.size),
    )
