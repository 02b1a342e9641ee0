"""BDGSTN forward pass.

Shapes use ``B`` windows, ``N`` patches, ``T`` input steps, ``L`` horizon.
The forward chain is

    X --embed--> H --+--> TCN --> temporal logits --+
                     |        backbone logits E E^T-+--> A_dyn
                     +--> DLinear --> H_T --GCN(A_dyn)--> H_ST
    H_ST --> neural head --> y_st
    H_ST --> (beta, gamma) --> SIR rollout from the last observed day --> y_phy
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .exceptions import ConfigurationError, ContractError
from .graphs import GraphSet, TCNConfig, backbone_graph, fuse_dynamic, temporal_graph
from .tensor import Tensor

GRAPH_MODES = ("fused", "backbone-only", "temporal-only", "geography", "gravity", "dtw", "pcc")
STATIC_GRAPH_MODES = ("geography", "gravity", "dtw", "pcc")
ABLATIONS = ("none", "temporal-only", "spatial-only", "no-loss", "no-trend")


@dataclass(frozen=True)
class ModelConfig:
    t_in: int = 5
    horizon: int = 5
    d_hidden: int = 32
    d_ada: int = 32
    d_tcn: int = 8
    tcn_kernel: int = 3
    tcn_dilation: int = 1
    d_st: int = 32
    ma_kernel: int = 3
    graph_mode: str = "fused"
    ablation: str = "none"

    def __post_init__(self):
        if self.graph_mode not in GRAPH_MODES:
            raise ConfigurationError(f"graph_mode must be one of {GRAPH_MODES}, got {self.graph_mode!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        for name in ("t_in", "horizon", "d_hidden", "d_ada", "d_tcn", "tcn_kernel", "tcn_dilation", "d_st"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.ma_kernel % 2 == 0 or self.ma_kernel < 1 or self.ma_kernel > 2 * self.t_in - 1:
            raise ConfigurationError(f"ma_kernel must be odd and at most 2*t_in-1, got {self.ma_kernel}")
        if self.ablation == "temporal-only" and self.d_st != self.d_hidden:
            raise ConfigurationError("temporal-only ablation feeds H_T to the heads, so d_st must equal d_hidden")

    @property
    def tcn(self) -> TCNConfig:
        return TCNConfig(1, self.tcn_kernel, self.tcn_dilation, self.d_tcn)

    @property
    def uses_graph(self) -> bool:
        return self.ablation != "temporal-only"

    @property
    def learned_graph(self) -> bool:
        return self.uses_graph and self.graph_mode in ("fused", "backbone-only", "temporal-only")


PARAM_ORDER = (
    "embed_W", "embed_b", "E", "tcn_W", "tcn_b",
    "trend_W", "trend_b", "remainder_W", "remainder_b",
    "gcn_W", "gcn_b", "st_head_W", "st_head_b", "epi_head_W", "epi_head_b",
)


def _affine(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(fan_out,))
    return W, b


def init_params(n_patches: int, cfg: ModelConfig, seed=0) -> dict[str, Tensor]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, fully seeded.

    Every parameter is created regardless of the variant so that checkpoints
    always share one layout; unused ones simply receive no gradient.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    arrays["embed_W"], arrays["embed_b"] = _affine(rng, 3, cfg.d_hidden)
    bound = 1.0 / np.sqrt(cfg.d_ada)
    arrays["E"] = rng.uniform(-bound, bound, size=(n_patches, cfg.d_ada))
    fan = cfg.tcn_kernel * cfg.d_hidden
    bound = 1.0 / np.sqrt(fan)
    arrays["tcn_W"] = rng.uniform(-bound, bound, size=(cfg.tcn_kernel, cfg.d_hidden, cfg.d_tcn))
    arrays["tcn_b"] = rng.uniform(-bound, bound, size=(cfg.d_tcn,))
    arrays["trend_W"], arrays["trend_b"] = _affine(rng, cfg.d_hidden, cfg.d_hidden)
    arrays["remainder_W"], arrays["remainder_b"] = _affine(rng, cfg.d_hidden, cfg.d_hidden)
    arrays["gcn_W"], arrays["gcn_b"] = _affine(rng, cfg.d_hidden, cfg.d_st)
    flat = cfg.t_in * cfg.d_st
    arrays["st_head_W"], arrays["st_head_b"] = _affine(rng, flat, cfg.horizon)
    arrays["epi_head_W"], arrays["epi_head_b"] = _affine(rng, flat, 2)
    return {k: Tensor(arrays[k], requires_grad=True) for k in PARAM_ORDER}


# -- building blocks --------------------------------------------------------

def embed(X, W, b) -> Tensor:
    """Affine lift of the 3 S/I/R features to ``D_H`` at every (patch, step)."""
    return tn.matmul(tn.as_tensor(X), W) + b


def series_decomp(H: Tensor, kernel: int = 3) -> tuple[Tensor, Tensor]:
    trend = tn.moving_average(H, kernel)
    return trend, H - trend


def dlinear(H: Tensor, trend_W, trend_b, remainder_W, remainder_b, kernel: int = 3) -> Tensor:
    trend, remainder = series_decomp(H, kernel)
    return (tn.matmul(trend, trend_W) + trend_b) + (tn.matmul(remainder, remainder_W) + remainder_b)


def gcn_layer(H_T: Tensor, A: Tensor, W, b=None) -> Tensor:
    """``A_t H_T[:, t] W`` for every step, one weight shared across nodes and steps.

    ``H_T`` is ``(..., N, T, D)`` and ``A`` is ``(..., T, N, N)`` or ``(N, N)``.
    """
    Ht = H_T.swapaxes(-3, -2)  # (..., T, N, D)
    agg = tn.matmul(tn.as_tensor(A), Ht)
    out = tn.matmul(agg, W)
    if b is not None:
        out = out + b
    return out.swapaxes(-3, -2)


def _flatten_steps(H_ST: Tensor) -> Tensor:
    shape = H_ST.shape
    return H_ST.reshape(shape[:-2] + (shape[-2] * shape[-1],))


def epi_rates(H_ST: Tensor, W, b) -> tuple[Tensor, Tensor]:
    """Per-patch infection and recovery rates squashed into (0, 1)."""
    logits = tn.matmul(_flatten_steps(H_ST), W) + b
    rates = tn.sigmoid(logits)
    return rates[..., 0], rates[..., 1]


def st_forecast_head(H_ST: Tensor, W, b) -> Tensor:
    return tn.matmul(_flatten_steps(H_ST), W) + b


@dataclass
class SIRState:
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    population: np.ndarray

    def total(self):
        return self.S + self.I + self.R


def _clip(x, lo, hi):
    if isinstance(x, Tensor):
        return tn.clip(x, lo, hi)
    return np.minimum(np.maximum(x, lo), hi)


def sir_update(S, I, R, pop, beta, gamma, infectious=None):
    """One forward-Euler day. Works on numpy arrays and on tensors.

    ``infectious`` replaces ``I`` in the force of infection (used by the
    metapopulation simulator); recoveries always use the local ``I``.
    """
    source = I if infectious is None else infectious
    new_inf = beta * source * S / pop
    new_rec = gamma * I
    S = _clip(S - new_inf, 0.0, pop)
    I = _clip(I + new_inf - new_rec, 0.0, pop)
    R = _clip(R + new_rec, 0.0, pop)
    scale = pop / (S + I + R)
    return S * scale, I * scale, R * scale


def sir_step(state: SIRState, beta, gamma, infectious=None) -> SIRState:
    S, I, R = sir_update(state.S, state.I, state.R, state.population, beta, gamma, infectious)
    return SIRState(S, I, R, state.population)


def sir_rollout(S, I, R, pop, beta, gamma, horizon: int):
    """Iterate ``horizon`` SIR days with fixed rates; returns infected ``(..., L)``.

    Accepts tensors (differentiable path) or arrays.
    """
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    path = []
    for _ in range(horizon):
        S, I, R = sir_update(S, I, R, pop, beta, gamma)
        path.append(I)
    if isinstance(path[0], Tensor):
        return tn.stack(path, axis=-1)
    return np.stack(path, axis=-1)


@dataclass
class ForecastOutput:
    y_st: Tensor  # (B, N, L) normalized
    y_phy: Tensor | None  # (B, N, L) normalized
    y_phy_raw: Tensor | None
    beta: Tensor | None
    gamma: Tensor | None
    graphs: GraphSet | None = None
    extras: dict = field(default_factory=dict)


def model_forward(params: dict[str, Tensor], X, raw_last, population, infected_min, infected_scale,
                  cfg: ModelConfig, static_graph=None) -> ForecastOutput:
    """Run the network on a batch of windows.

    ``X`` is ``(B, N, T, 3)`` normalized; ``raw_last`` is ``(B, N, 3)`` raw S/I/R
    of the final input day; ``population``, ``infected_min`` and
    ``infected_scale`` are length-``N`` arrays used to run the SIR branch in
    count space and map it back to normalized units.
    """
    p = params
    H = embed(X, p["embed_W"], p["embed_b"])

    if cfg.ablation == "spatial-only":
        H_T = H
    elif cfg.ablation == "no-trend":
        H_T = tn.matmul(H, p["trend_W"]) + p["trend_b"]
    else:
        H_T = dlinear(H, p["trend_W"], p["trend_b"], p["remainder_W"], p["remainder_b"], cfg.ma_kernel)

    graphs = None
    if not cfg.uses_graph:
        H_ST = H_T
    else:
        if cfg.graph_mode in STATIC_GRAPH_MODES:
            if static_graph is None:
                raise ConfigurationError(f"graph_mode {cfg.graph_mode!r} needs a precomputed static graph")
            A = Tensor(np.asarray(static_graph, dtype=np.float64))
        else:
            back = backbone_graph(p["E"])
            temp = temporal_graph(H, p["tcn_W"], p["tcn_b"], cfg.tcn)
            graphs = fuse_dynamic(back, temp)
            if cfg.graph_mode == "fused":
                A = graphs.a_dyn
            elif cfg.graph_mode == "backbone-only":
                A = graphs.a_back
            else:
                A = graphs.a_temp
        H_ST = gcn_layer(H_T, A, p["gcn_W"], p["gcn_b"])

    y_st = st_forecast_head(H_ST, p["st_head_W"], p["st_head_b"])
    beta, gamma = epi_rates(H_ST, p["epi_head_W"], p["epi_head_b"])

    raw_last = np.asarray(raw_last, dtype=np.float64)
    pop = np.broadcast_to(np.asarray(population, dtype=np.float64), raw_last.shape[:-1])
    y_phy_raw = sir_rollout(Tensor(raw_last[..., 0]), Tensor(raw_last[..., 1]), Tensor(raw_last[..., 2]),
                            pop, beta, gamma, cfg.horizon)
    y_phy = (y_phy_raw - np.asarray(infected_min)[:, None]) / np.asarray(infected_scale)[:, None]
    return ForecastOutput(y_st, y_phy, y_phy_raw, beta, gamma, graphs)


def joint_loss(y_st: Tensor, y_phy: Tensor | None, y, use_phy: bool = True) -> Tensor:
    """Mean absolute error of both forecasts against the same target.

    With ``use_phy=False`` (the no-loss ablation) only the neural term counts.
    """
    y_st = tn.as_tensor(y_st)
    y = tn.as_tensor(y)
    if y_st.shape != y.shape:
        raise ContractError(f"y_st shape {y_st.shape} != target shape {y.shape}")
    total = (y_st - y).abs()
    if use_phy:
        y_phy = tn.as_tensor(y_phy)
        if y_phy.shape != y.shape:
            raise ContractError(f"y_phy shape {y_phy.shape} != target shape {y.shape}")
        total = total + (y_phy - y).abs()
    return total.mean()
