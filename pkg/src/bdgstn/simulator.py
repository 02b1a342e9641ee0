"""Synthetic metapopulation SIR data with known dynamics."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .data import EpidemicDataset, save_dataset
from .exceptions import ConfigurationError
from .graphs import gravity_weights, haversine_km, row_normalize
from .model import sir_update


@dataclass(frozen=True)
class SimConfig:
    n_patches: int = 10
    days: int = 200
    pop_range: tuple[float, float] = (1e4, 1e6)
    beta_range: tuple[float, float] = (0.2, 0.4)
    gamma_range: tuple[float, float] = (0.05, 0.15)
    noise_sigma: float = 0.05
    travel_fraction: float = 0.1
    initial_fraction: float = 1e-3
    lat_range: tuple[float, float] = (30.0, 45.0)
    lon_range: tuple[float, float] = (-120.0, -75.0)
    adjacency_neighbors: int = 3
    start_date: str = "2020-05-01"
    seed: int = 0

    def __post_init__(self):
        if self.n_patches < 1 or self.days < 1:
            raise ConfigurationError("n_patches and days must be positive")
        lo, hi = self.pop_range
        if not 0 < lo <= hi:
            raise ConfigurationError(f"bad population range {self.pop_range}")
        for name in ("beta_range", "gamma_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi < 1:
                raise ConfigurationError(f"{name} must lie in (0, 1), got {(lo, hi)}")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be nonnegative")
        if not 0 <= self.travel_fraction <= 1:
            raise ConfigurationError(f"travel_fraction must lie in [0, 1], got {self.travel_fraction}")


@dataclass
class SimulationResult:
    dataset: EpidemicDataset
    latent: np.ndarray  # (N, days, 3) noiseless states
    mobility: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray


def knn_adjacency(coords: np.ndarray, k: int) -> np.ndarray:
    """Symmetrised k-nearest-neighbour graph as a stand-in for shared borders."""
    N = len(coords)
    A = np.zeros((N, N))
    if N < 2 or k < 1:
        return A
    D = haversine_km(coords)
    np.fill_diagonal(D, np.inf)
    for i in range(N):
        for j in np.argsort(D[i], kind="stable")[:min(k, N - 1)]:
            A[i, j] = A[j, i] = 1.0
    return A


def mobility_matrix(population, coords, travel_fraction: float) -> np.ndarray:
    """Row-stochastic ``(1 - m) I + m G`` where ``G`` spreads the travelling
    share over the other patches in proportion to gravity weights."""
    N = len(population)
    M = (1.0 - travel_fraction) * np.eye(N)
    if N > 1:
        M += travel_fraction * row_normalize(gravity_weights(population, haversine_km(coords)))
    else:
        M += travel_fraction
    return M


def run_dynamics(S0, I0, R0, population, beta, gamma, mobility, days: int) -> np.ndarray:
    """Deterministic coupled SIR; returns ``(N, days, 3)`` starting at day 0.

    Patch ``i`` sees infection pressure ``beta_i * sum_j M_ij I_j / N_j``.
    It is passed to the single-patch update as an effective infected count
    ``sum_j M_ij I_j N_i / N_j`` so that ``M = I`` reproduces it bit for bit.
    """
    pop = np.asarray(population, dtype=np.float64)
    ratio = np.asarray(mobility, dtype=np.float64) * (pop[:, None] / pop[None, :])
    S, I, R = (np.asarray(v, dtype=np.float64).copy() for v in (S0, I0, R0))
    out = np.empty((len(pop), days, 3))
    for t in range(days):
        out[:, t] = np.stack([S, I, R], axis=1)
        if t == days - 1:
            break
        S, I, R = sir_update(S, I, R, pop, beta, gamma, infectious=ratio @ I)
    return out


def simulate(cfg: SimConfig = SimConfig(), return_details: bool = False):
    """Generate an :class:`EpidemicDataset` (or a :class:`SimulationResult`).

    One random patch starts with ``initial_fraction`` of its population
    infected. Observed infections carry multiplicative log-normal noise; counts
    are rounded to whole people and S is recomputed so S+I+R equals the
    population exactly in every row.
    """
    rng = np.random.default_rng(cfg.seed)
    N = cfg.n_patches
    lo, hi = np.log(cfg.pop_range[0]), np.log(cfg.pop_range[1])
    population = np.round(np.exp(rng.uniform(lo, hi, size=N)))
    coords = np.column_stack([rng.uniform(*cfg.lat_range, size=N), rng.uniform(*cfg.lon_range, size=N)])
    beta = rng.uniform(*cfg.beta_range, size=N)
    gamma = rng.uniform(*cfg.gamma_range, size=N)
    mobility = mobility_matrix(population, coords, cfg.travel_fraction)

    I0 = np.zeros(N)
    seed_patch = rng.integers(N)
    I0[seed_patch] = cfg.initial_fraction * population[seed_patch]
    R0 = np.zeros(N)
    S0 = population - I0
    latent = run_dynamics(S0, I0, R0, population, beta, gamma, mobility, cfg.days)

    noise = np.exp(cfg.noise_sigma * rng.standard_normal(size=(N, cfg.days))) if cfg.noise_sigma > 0 else 1.0
    R_obs = np.round(latent[:, :, 2])
    I_obs = np.minimum(np.round(latent[:, :, 1] * noise), population[:, None] - R_obs)
    S_obs = population[:, None] - I_obs - R_obs
    series = np.stack([S_obs, I_obs, R_obs], axis=2)

    start = dt.date.fromisoformat(cfg.start_date)
    dates = [start + dt.timedelta(days=t) for t in range(cfg.days)]
    width = len(str(N - 1))
    ids = [f"P{n:0{width}d}" for n in range(N)]
    ds = EpidemicDataset(ids, dates, series, population, coords,
                         knn_adjacency(coords, cfg.adjacency_neighbors))
    if return_details:
        return SimulationResult(ds, latent, mobility, beta, gamma)
    return ds


def export(ds: EpidemicDataset, directory) -> dict[str, str]:
    """Write the dataset in the loader's CSV formats."""
    return save_dataset(ds, directory)
