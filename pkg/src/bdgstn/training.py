"""Joint-loss training loop, split evaluation and the reference baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as tn
from .data import EpidemicDataset, Normalizer, WindowBatch, chrono_split, fit_normalizer, make_windows
from .exceptions import ConfigurationError, ContractError
from .graphs import dtw_graph, geography_graph, gravity_graph, pcc_graph
from .metrics import METRIC_NAMES, evaluate, per_step_metrics
from .model import ModelConfig, init_params, joint_loss, model_forward, sir_rollout, sir_update
from .optim import AdamState, adam_step
from .tensor import Tensor

__all__ = [
    "TrainConfig", "TrainResult", "AdamState", "adam_step", "joint_loss", "optimize", "train",
    "evaluate_split", "predict_windows", "build_static_graph",
    "baseline_persistence", "baseline_sir_fit", "SIR_GRID",
]

log = logging.getLogger(__name__)

HORIZONS = (5, 10, 15, 20)
SIR_GRID = 101


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-4
    t_in: int = 5
    horizon: int = 5
    seed: int = 0
    graph_mode: str = "fused"
    ablation: str = "none"
    d_hidden: int = 32
    d_ada: int = 32
    d_tcn: int = 8
    tcn_kernel: int = 3
    tcn_dilation: int = 1
    d_st: int = 32
    ma_kernel: int = 3
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.horizon not in HORIZONS:
            raise ConfigurationError(f"horizon must be one of {HORIZONS}, got {self.horizon}")
        self.model_config()  # validates the architecture fields

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: getattr(self, k) for k in names})


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    config: TrainConfig
    normalizer: Normalizer
    population: np.ndarray
    splits: tuple[range, range, range]
    static_graph: np.ndarray | None = None
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def build_static_graph(ds: EpidemicDataset, mode: str, train_range: range) -> np.ndarray | None:
    """Fixed adjacency for the comparison graph modes; None for learned ones.

    Series-based graphs only look at the training days.
    """
    if mode == "geography":
        if ds.geo_adjacency is None:
            raise ConfigurationError("graph_mode 'geography' needs an adjacency file")
        return geography_graph(ds.geo_adjacency).weights
    if mode == "gravity":
        if ds.coordinates is None:
            raise ConfigurationError("graph_mode 'gravity' needs patch coordinates")
        return gravity_graph(ds.population, ds.coordinates).weights
    infected = ds.series[:, train_range.start:train_range.stop, 1]
    if mode == "dtw":
        return dtw_graph(infected).weights
    if mode == "pcc":
        return pcc_graph(infected).weights
    return None


def _forward(params, batch: WindowBatch, normalizer: Normalizer, population, cfg: ModelConfig, static_graph):
    return model_forward(params, batch.inputs, batch.raw_last_step, population,
                         normalizer.min_[:, 1], normalizer.scale_[:, 1], cfg, static_graph)


def predict_windows(params, batch: WindowBatch, normalizer: Normalizer, population, cfg: ModelConfig,
                    static_graph=None) -> np.ndarray:
    """Denormalized point forecasts ``(B, N, L)`` from the ST head."""
    with tn.no_grad():
        out = _forward(params, batch, normalizer, population, cfg, static_graph)
    return normalizer.inverse_infected(out.y_st.data)


def _nan_diagnostic(out, batch: WindowBatch, epoch: int) -> str:
    per_window = np.abs(out.y_st.data - batch.targets).sum(axis=(1, 2))
    if out.y_phy is not None:
        per_window = per_window + np.abs(out.y_phy.data - batch.targets).sum(axis=(1, 2))
    bad = np.flatnonzero(~np.isfinite(per_window))
    where = f"window {int(bad[0])} (starting day {int(batch.starts[bad[0]])})" if bad.size else "no single window"
    return f"non-finite training loss at epoch {epoch}, {where}"


def optimize(params: dict[str, Tensor], train_batch: WindowBatch, val_batch: WindowBatch | None,
             normalizer: Normalizer, population, cfg: ModelConfig, static_graph=None,
             epochs: int = 200, learning_rate: float = 1e-4, callback=None) -> tuple[list[dict], int]:
    """Full-batch Adam on the joint loss; restores the best-validation-MAE
    parameters in place (the final ones when there is no validation batch).

    Each history row holds ``epoch``, ``train_loss`` (joint loss before the
    update) and the five validation metrics of the parameters after it.
    """
    state = AdamState()
    use_phy = cfg.ablation != "no-loss"
    history = []
    best = (np.inf, epochs, None)
    for epoch in range(1, epochs + 1):
        tn.parameters_zero_grad(params.values())
        out = _forward(params, train_batch, normalizer, population, cfg, static_graph)
        loss = joint_loss(out.y_st, out.y_phy, train_batch.targets, use_phy=use_phy)
        if not np.isfinite(loss.data):
            raise FloatingPointError(_nan_diagnostic(out, train_batch, epoch))
        loss.backward()
        adam_step(params, state, learning_rate)
        row = {"epoch": epoch, "train_loss": float(loss.data)}
        if val_batch is not None:
            val = evaluate(predict_windows(params, val_batch, normalizer, population, cfg, static_graph),
                           val_batch.raw_targets)
            row.update({f"val_{k}": getattr(val, k) for k in METRIC_NAMES})
            if val.mae < best[0]:
                best = (val.mae, epoch, {k: v.data.copy() for k, v in params.items()})
        history.append(row)
        if callback is not None:
            callback(row)
        log.debug("epoch %d loss %.6g", epoch, row["train_loss"])
    if best[2] is not None:
        for k, arr in best[2].items():
            params[k].data = arr
    return history, best[1]


def train(ds: EpidemicDataset, config: TrainConfig = TrainConfig(), callback=None) -> TrainResult:
    """Chronological split, train-range normalization, then :func:`optimize`."""
    cfg = config.model_config()
    splits = chrono_split(ds, config.split, min_length=config.t_in + config.horizon)
    train_range, val_range, _ = splits
    normalizer = fit_normalizer(ds, train_range)
    tr = make_windows(ds, train_range, config.t_in, config.horizon, normalizer)
    va = make_windows(ds, val_range, config.t_in, config.horizon, normalizer)
    static = build_static_graph(ds, config.graph_mode, train_range) if cfg.uses_graph else None
    pop = np.asarray(ds.population, dtype=np.float64)
    params = init_params(ds.n_patches, cfg, seed=config.seed)
    history, best_epoch = optimize(params, tr, va, normalizer, pop, cfg, static,
                                   config.epochs, config.learning_rate, callback)
    return TrainResult(params, config, normalizer, pop, splits, static, history, best_epoch)


def evaluate_split(result: TrainResult, ds: EpidemicDataset, split: str = "test",
                   per_step: bool = False):
    """Metrics of the ST forecasts on one split, in raw counts.

    Returns a :class:`MetricsReport`, or ``(report, per_step_reports)`` when
    ``per_step`` is set.
    """
    names = ("train", "val", "test")
    if split not in names:
        raise ConfigurationError(f"split must be one of {names}, got {split!r}")
    config = result.config
    batch = make_windows(ds, result.splits[names.index(split)], config.t_in, config.horizon, result.normalizer)
    pred = predict_windows(result.params, batch, result.normalizer, result.population,
                           config.model_config(), result.static_graph)
    report = evaluate(pred, batch.raw_targets)
    if per_step:
        return report, per_step_metrics(pred, batch.raw_targets)
    return report


# -- baselines --------------------------------------------------------------

def _raw_windows(window) -> np.ndarray:
    w = np.asarray(window.raw_inputs if isinstance(window, WindowBatch) else window, dtype=np.float64)
    if w.ndim < 3 or w.shape[-1] != 3:
        raise ContractError(f"expected raw windows shaped (..., N, T_in, 3), got {w.shape}")
    return w


def baseline_persistence(window, horizon: int) -> np.ndarray:
    """Repeat the last observed infected count for every horizon step."""
    w = _raw_windows(window)
    last = w[..., -1, 1]
    return np.repeat(last[..., None], horizon, axis=-1)


def baseline_sir_fit(window, horizon: int, population=None, grid: int = SIR_GRID,
                     return_rates: bool = False):
    """Per-patch grid search for (beta, gamma) on [0, 1]^2, then an SIR rollout.

    The fit minimises one-step-ahead squared error over all three compartments
    inside the input window. ``population`` defaults to the row sums S+I+R of
    the last input day. Ties go to the smallest (beta, gamma).
    """
    w = _raw_windows(window)
    if w.shape[-2] < 2:
        raise ContractError("the SIR fit needs at least two input days")
    pop = w[..., -1, :].sum(axis=-1) if population is None else np.broadcast_to(
        np.asarray(population, dtype=np.float64), w.shape[:-2])
    rates = np.linspace(0.0, 1.0, grid)
    b, g = rates[:, None], rates[None, :]

    lead = w.shape[:-2]
    flat = w.reshape((-1,) + w.shape[-2:])
    pflat = np.broadcast_to(pop, lead).reshape(-1)
    beta_hat = np.empty(len(flat))
    gamma_hat = np.empty(len(flat))
    for n, (series, p) in enumerate(zip(flat, pflat)):
        err = np.zeros((grid, grid))
        for t in range(series.shape[0] - 1):
            S, I, R = series[t]
            nS, nI, nR = sir_update(S, I, R, p, b, g)
            err += (nS - series[t + 1, 0]) ** 2 + (nI - series[t + 1, 1]) ** 2 + (nR - series[t + 1, 2]) ** 2
        i, j = np.unravel_index(np.argmin(err), err.shape)
        beta_hat[n], gamma_hat[n] = rates[i], rates[j]
    beta_hat = beta_hat.reshape(lead)
    gamma_hat = gamma_hat.reshape(lead)
    last = w[..., -1, :]
    forecast = sir_rollout(last[..., 0], last[..., 1], last[..., 2], pop, beta_hat, gamma_hat, horizon)
    if return_rates:
        return forecast, beta_hat, gamma_hat
    return forecast
