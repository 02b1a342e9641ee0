"""Small synthetic instances shared by several test modules."""

import numpy as np

from bdgstn.data import Normalizer
from bdgstn.model import ModelConfig, init_params

SMALL = dict(d_hidden=4, d_ada=3, d_tcn=2, d_st=4)


def sir_windows(B=2, N=3, T=5, L=2, seed=0):
    """Random raw windows with S+I+R = population, plus normalized copies."""
    rng = np.random.default_rng(seed)
    pop = rng.uniform(500, 2000, size=N)
    I = rng.uniform(5, 100, size=(B, N, T))
    R = rng.uniform(0, 200, size=(B, N, T))
    raw = np.stack([pop[:, None] - I - R, I, R], axis=-1)
    y_raw = rng.uniform(5, 100, size=(B, N, L))
    norm = Normalizer(raw.min(axis=(0, 2)), raw.max(axis=(0, 2)))
    return raw, y_raw, pop, norm


def instance(graph_mode="fused", ablation="none", seed=0, small=True, **kw):
    raw, y_raw, pop, norm = sir_windows(**kw)
    cfg = ModelConfig(t_in=raw.shape[2], horizon=y_raw.shape[-1], graph_mode=graph_mode, ablation=ablation,
                      **(SMALL if small else {}))
    params = init_params(raw.shape[1], cfg, seed=seed)
    return cfg, params, raw, y_raw, pop, norm
