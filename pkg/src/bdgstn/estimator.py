"""scikit-learn style wrappers around the network and the two baselines.

Estimators take raw-count windows ``X`` of shape ``(B, N, T_in, 3)`` and raw
infected targets ``y`` of shape ``(B, N, L)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import tensor as tn
from .data import Normalizer, WindowBatch
from .metrics import evaluate
from .model import ModelConfig, init_params, model_forward
from .training import HORIZONS, baseline_persistence, baseline_sir_fit, optimize, predict_windows
from .validation import check_population, check_static_graph, check_targets, check_windows


def _batch(X, y, normalizer: Normalizer) -> WindowBatch:
    if y is None:
        y = np.zeros(X.shape[:2] + (1,))
    return WindowBatch(normalizer.transform(X), normalizer.transform_infected(y), X, y,
                       np.arange(len(X)))


class BDGSTNForecaster(BaseEstimator):
    """Dynamic-graph spatio-temporal forecaster with an SIR branch.

    ``predict`` returns the spatio-temporal head's forecasts in raw counts.
    When no normalizer is given, per-patch min-max scaling is fitted on the
    training windows' inputs.
    """

    def __init__(self, horizon=5, graph_mode="fused", ablation="none", epochs=200, learning_rate=1e-4,
                 d_hidden=32, d_ada=32, d_tcn=8, tcn_kernel=3, tcn_dilation=1, d_st=32, ma_kernel=3,
                 static_graph=None, random_state=0):
        self.horizon = horizon
        self.graph_mode = graph_mode
        self.ablation = ablation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.d_hidden = d_hidden
        self.d_ada = d_ada
        self.d_tcn = d_tcn
        self.tcn_kernel = tcn_kernel
        self.tcn_dilation = tcn_dilation
        self.d_st = d_st
        self.ma_kernel = ma_kernel
        self.static_graph = static_graph
        self.random_state = random_state

    def _model_config(self, t_in: int) -> ModelConfig:
        return ModelConfig(t_in=t_in, horizon=self.horizon, d_hidden=self.d_hidden, d_ada=self.d_ada,
                           d_tcn=self.d_tcn, tcn_kernel=self.tcn_kernel, tcn_dilation=self.tcn_dilation,
                           d_st=self.d_st, ma_kernel=self.ma_kernel, graph_mode=self.graph_mode,
                           ablation=self.ablation)

    def fit(self, X, y, *, population, normalizer: Normalizer | None = None, X_val=None, y_val=None):
        X = check_windows(X)
        y = check_targets(y, X)
        if y.shape[-1] != self.horizon:
            raise ValueError(f"y has horizon {y.shape[-1]}, estimator expects {self.horizon}")
        if self.horizon not in HORIZONS:
            raise ValueError(f"horizon must be one of {HORIZONS}")
        n = X.shape[1]
        pop = check_population(population, n)
        cfg = self._model_config(X.shape[2])
        static = None
        if cfg.uses_graph and not cfg.learned_graph:
            if self.static_graph is None:
                raise ValueError(f"graph_mode {self.graph_mode!r} needs static_graph")
            static = check_static_graph(self.static_graph, n)
        if normalizer is None:
            normalizer = Normalizer(X.min(axis=(0, 2)), X.max(axis=(0, 2)))
        val = None
        if X_val is not None:
            X_val = check_windows(X_val, n)
            val = _batch(X_val, check_targets(y_val, X_val), normalizer)

        params = init_params(n, cfg, seed=self.random_state)
        self.history_, self.best_epoch_ = optimize(params, _batch(X, y, normalizer), val, normalizer, pop, cfg,
                                                   static, self.epochs, self.learning_rate)
        self.params_ = params
        self.normalizer_ = normalizer
        self.population_ = pop
        self.model_config_ = cfg
        self.static_graph_ = static
        self.n_patches_ = n
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_windows(X, self.n_patches_)
        return predict_windows(self.params_, _batch(X, None, self.normalizer_), self.normalizer_,
                               self.population_, self.model_config_, self.static_graph_)

    def predict_components(self, X):
        """Full forward output (normalized ``y_st``/``y_phy``, rates, graphs)."""
        check_is_fitted(self, "params_")
        X = check_windows(X, self.n_patches_)
        b = _batch(X, None, self.normalizer_)
        with tn.no_grad():
            return model_forward(self.params_, b.inputs, b.raw_last_step, self.population_,
                                 self.normalizer_.min_[:, 1], self.normalizer_.scale_[:, 1],
                                 self.model_config_, self.static_graph_)

    def score(self, X, y) -> float:
        """Negative MAE in raw counts (higher is better)."""
        X = check_windows(X)
        return -evaluate(self.predict(X), check_targets(y, X)).mae


class PersistenceBaseline(BaseEstimator):
    """Repeats the last observed infected count."""

    def __init__(self, horizon=5):
        self.horizon = horizon

    def fit(self, X, y=None, **_):
        self.n_patches_ = check_windows(X).shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "n_patches_")
        return baseline_persistence(check_windows(X, self.n_patches_), self.horizon)

    def score(self, X, y) -> float:
        X = check_windows(X)
        return -evaluate(self.predict(X), check_targets(y, X)).mae


class SIRBaseline(BaseEstimator):
    """Per-window, per-patch grid-searched SIR rollout. Fitting is a no-op:
    rates are re-estimated from each input window."""

    def __init__(self, horizon=5, grid=101):
        self.horizon = horizon
        self.grid = grid

    def fit(self, X, y=None, *, population=None, **_):
        X = check_windows(X)
        self.n_patches_ = X.shape[1]
        self.population_ = None if population is None else check_population(population, self.n_patches_)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "n_patches_")
        X = check_windows(X, self.n_patches_)
        return baseline_sir_fit(X, self.horizon, self.population_, self.grid)

    def score(self, X, y) -> float:
        X = check_windows(X)
        return -evaluate(self.predict(X), check_targets(y, X)).mae
