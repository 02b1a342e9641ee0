"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError


def check_windows(X, n_patches: int | None = None) -> np.ndarray:
    """Validate raw window inputs shaped ``(B, N, T_in, 3)``."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False, input_name="X")
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise DimensionError(f"X must be (windows, patches, steps, 3), got {X.shape}")
    if n_patches is not None and X.shape[1] != n_patches:
        raise DimensionError(f"X has {X.shape[1]} patches, model was fitted on {n_patches}")
    if np.any(X < 0):
        raise ValueError("X holds negative counts")
    return X


def check_targets(y, X: np.ndarray) -> np.ndarray:
    """Validate raw infected targets shaped ``(B, N, L)`` against ``X``."""
    y = check_array(y, allow_nd=True, dtype=np.float64, ensure_2d=False, input_name="y")
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3 or y.shape[:2] != X.shape[:2]:
        raise DimensionError(f"y must be (windows, patches, horizon) matching X {X.shape}, got {y.shape}")
    return y


def check_population(population, n_patches: int) -> np.ndarray:
    pop = np.asarray(population, dtype=np.float64).reshape(-1)
    if pop.shape != (n_patches,):
        raise DimensionError(f"population must have {n_patches} entries, got {pop.shape}")
    if np.any(pop <= 0) or not np.all(np.isfinite(pop)):
        raise ValueError("population entries must be positive and finite")
    return pop


def check_static_graph(graph, n_patches: int) -> np.ndarray:
    A = np.asarray(graph, dtype=np.float64)
    if A.shape != (n_patches, n_patches):
        raise DimensionError(f"static graph must be ({n_patches}, {n_patches}), got {A.shape}")
    if np.any(A < 0) or not np.allclose(A.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("static graph must be nonnegative and row-stochastic")
    return A
