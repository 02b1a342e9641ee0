"""Epidemic datasets: CSV loading, chronological splits, scaling, windows.

File formats
------------
series CSV    ``date,patch,susceptible,infected,recovered`` one row per patch-day
metadata CSV  ``patch,population,lat,lon`` (lat/lon may be blank)
adjacency CSV ``src,dst`` undirected edge list
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DataFormatError

logger = logging.getLogger(__name__)

SERIES_HEADER = ["date", "patch", "susceptible", "infected", "recovered"]
META_HEADER = ["patch", "population", "lat", "lon"]
ADJACENCY_HEADER = ["src", "dst"]
FEATURES = ("susceptible", "infected", "recovered")
INFECTED = 1


@dataclass
class EpidemicDataset:
    """Daily S/I/R counts for ``N`` patches over ``T`` consecutive days."""

    patch_ids: list[str]
    dates: list[dt.date]
    series: np.ndarray  # (N, T, 3)
    population: np.ndarray  # (N,)
    coordinates: np.ndarray | None = None  # (N, 2) lat, lon degrees
    geo_adjacency: np.ndarray | None = None  # (N, N) binary

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        self.population = np.asarray(self.population, dtype=np.float64)
        self.validate()

    @property
    def n_patches(self) -> int:
        return len(self.patch_ids)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def infected(self) -> np.ndarray:
        return self.series[:, :, INFECTED]

    def validate(self) -> None:
        N, T = len(self.patch_ids), len(self.dates)
        if self.series.shape != (N, T, 3):
            raise DataFormatError(f"series shape {self.series.shape} != ({N}, {T}, 3)")
        if self.population.shape != (N,) or np.any(self.population <= 0):
            raise DataFormatError("population must be a positive length-N vector")
        if np.any(self.series < 0) or not np.all(np.isfinite(self.series)):
            raise DataFormatError("series contains negative or non-finite counts")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise DataFormatError(f"dates not consecutive daily: {a} -> {b}")
        totals = self.series.sum(axis=2)
        over = totals > self.population[:, None] * (1 + 1e-9)
        if over.any():
            i, t = np.argwhere(over)[0]
            warnings.warn(
                f"S+I+R exceeds population for {over.sum()} patch-days "
                f"(first: {self.patch_ids[i]} on {self.dates[t]})", stacklevel=3)
        if self.coordinates is not None:
            self.coordinates = np.asarray(self.coordinates, dtype=np.float64)
            if self.coordinates.shape != (N, 2):
                raise DataFormatError(f"coordinates shape {self.coordinates.shape} != ({N}, 2)")
        if self.geo_adjacency is not None:
            A = np.asarray(self.geo_adjacency, dtype=np.float64)
            if A.shape != (N, N) or not np.array_equal(A, A.T) or np.any(np.diag(A) != 0):
                raise DataFormatError("geo_adjacency must be symmetric N x N with zero diagonal")
            self.geo_adjacency = A


# -- loading / saving -------------------------------------------------------

def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if [c.strip() for c in first] != header:
            raise DataFormatError(f"{path}:1: expected header {','.join(header)}, got {','.join(first)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def _number(text, path, lineno, name):
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: non-numeric {name} {text!r}") from None
    if not math.isfinite(value):
        raise DataFormatError(f"{path}:{lineno}: non-finite {name} {text!r}")
    return value


def load_dataset(series_path, meta_path, adjacency_path=None) -> EpidemicDataset:
    """Read the three CSV files into a validated :class:`EpidemicDataset`."""
    patch_ids, population, coords = [], [], []
    for lineno, (patch, pop, lat, lon) in _read_rows(meta_path, META_HEADER):
        if patch in patch_ids:
            raise DataFormatError(f"{meta_path}:{lineno}: duplicate patch {patch!r}")
        p = _number(pop, meta_path, lineno, "population")
        if p <= 0:
            raise DataFormatError(f"{meta_path}:{lineno}: population must be positive")
        patch_ids.append(patch)
        population.append(p)
        if lat and lon:
            coords.append((_number(lat, meta_path, lineno, "lat"), _number(lon, meta_path, lineno, "lon")))
        else:
            coords.append(None)
    if not patch_ids:
        raise DataFormatError(f"{meta_path}: no patches")
    index = {p: i for i, p in enumerate(patch_ids)}

    records: dict[tuple[int, dt.date], tuple[float, float, float]] = {}
    seen_dates: set[dt.date] = set()
    for lineno, (date_s, patch, s, i, r) in _read_rows(series_path, SERIES_HEADER):
        try:
            day = dt.date.fromisoformat(date_s)
        except ValueError:
            raise DataFormatError(f"{series_path}:{lineno}: bad ISO date {date_s!r}") from None
        if patch not in index:
            raise DataFormatError(f"{series_path}:{lineno}: unknown patch {patch!r}")
        vals = tuple(_number(v, series_path, lineno, n) for v, n in zip((s, i, r), FEATURES))
        if min(vals) < 0:
            raise DataFormatError(f"{series_path}:{lineno}: negative count")
        key = (index[patch], day)
        if key in records:
            raise DataFormatError(f"{series_path}:{lineno}: duplicate row for {patch} on {day}")
        records[key] = vals
        seen_dates.add(day)
    if not seen_dates:
        raise DataFormatError(f"{series_path}: no rows")

    start, stop = min(seen_dates), max(seen_dates)
    dates = [start + dt.timedelta(days=k) for k in range((stop - start).days + 1)]
    series = np.empty((len(patch_ids), len(dates), 3))
    for t, day in enumerate(dates):
        for n, patch in enumerate(patch_ids):
            try:
                series[n, t] = records[(n, day)]
            except KeyError:
                raise DataFormatError(
                    f"{series_path}: missing date {day.isoformat()} for patch {patch!r}") from None

    coordinates = None
    if all(c is not None for c in coords):
        coordinates = np.array(coords, dtype=np.float64)

    adjacency = None
    if adjacency_path is not None:
        adjacency = np.zeros((len(patch_ids), len(patch_ids)))
        for lineno, (src, dst) in _read_rows(adjacency_path, ADJACENCY_HEADER):
            for name in (src, dst):
                if name not in index:
                    raise DataFormatError(f"{adjacency_path}:{lineno}: unknown patch {name!r}")
            if src == dst:
                raise DataFormatError(f"{adjacency_path}:{lineno}: self-loop on {src!r}")
            adjacency[index[src], index[dst]] = adjacency[index[dst], index[src]] = 1.0

    return EpidemicDataset(patch_ids, dates, series, np.array(population), coordinates, adjacency)


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def save_dataset(ds: EpidemicDataset, directory) -> dict[str, str]:
    """Write ``series.csv``, ``meta.csv`` and (if present) ``adjacency.csv``.

    Numbers are written with round-trip precision so that :func:`load_dataset`
    recovers the arrays exactly.
    """
    os.makedirs(directory, exist_ok=True)
    paths = {
        "series": os.path.join(directory, "series.csv"),
        "meta": os.path.join(directory, "meta.csv"),
    }
    try:
        with open(paths["series"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SERIES_HEADER)
            for t, day in enumerate(ds.dates):
                iso = day.isoformat()
                for n, patch in enumerate(ds.patch_ids):
                    w.writerow([iso, patch, *(_fmt(v) for v in ds.series[n, t])])
        with open(paths["meta"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(META_HEADER)
            for n, patch in enumerate(ds.patch_ids):
                lat = lon = ""
                if ds.coordinates is not None:
                    lat, lon = (_fmt(v) for v in ds.coordinates[n])
                w.writerow([patch, _fmt(ds.population[n]), lat, lon])
        if ds.geo_adjacency is not None:
            paths["adjacency"] = os.path.join(directory, "adjacency.csv")
            with open(paths["adjacency"], "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(ADJACENCY_HEADER)
                for i, j in zip(*np.nonzero(np.triu(ds.geo_adjacency))):
                    w.writerow([ds.patch_ids[i], ds.patch_ids[j]])
    except OSError as exc:
        raise OSError(f"cannot write dataset to {directory}: {exc}") from exc
    return paths


# -- splits and scaling -----------------------------------------------------

def chrono_split(ds, ratios=(0.6, 0.2, 0.2), min_length: int = 1) -> tuple[range, range, range]:
    """Contiguous train/val/test day ranges.

    Train and validation lengths are ``floor(ratio * T)``; test takes the rest.
    ``ds`` may be a dataset or a day count. Every split must hold at least
    ``min_length`` days (``T_in + L`` when windows are cut afterwards).
    """
    T = ds if isinstance(ds, (int, np.integer)) else ds.n_days
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    n_train = int(math.floor(ratios[0] * T + 1e-9))
    n_val = int(math.floor(ratios[1] * T + 1e-9))
    splits = (range(0, n_train), range(n_train, n_train + n_val), range(n_train + n_val, T))
    for name, rng in zip(("train", "val", "test"), splits):
        if len(rng) < min_length:
            raise ConfigurationError(f"{name} split has {len(rng)} days, needs at least {min_length}")
    return splits


@dataclass
class Normalizer:
    """Per-patch, per-feature min-max scaling fitted on a day range."""

    min_: np.ndarray  # (N, 3)
    max_: np.ndarray  # (N, 3)
    eps: float = 1e-8

    @property
    def scale_(self) -> np.ndarray:
        return self.max_ - self.min_ + self.eps

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Scale ``(..., N, T, 3)`` arrays."""
        return (x - self.min_[:, None, :]) / self.scale_[:, None, :]

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale_[:, None, :] + self.min_[:, None, :]

    def transform_infected(self, y: np.ndarray) -> np.ndarray:
        """Scale ``(..., N, L)`` infected-count arrays."""
        return (y - self.min_[:, INFECTED, None]) / self.scale_[:, INFECTED, None]

    def inverse_infected(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale_[:, INFECTED, None] + self.min_[:, INFECTED, None]


def fit_normalizer(ds: EpidemicDataset, train_range: range, eps: float = 1e-8) -> Normalizer:
    if len(train_range) == 0:
        raise ConfigurationError("normalizer needs a nonempty training range")
    block = ds.series[:, train_range.start:train_range.stop, :]
    return Normalizer(block.min(axis=1), block.max(axis=1), eps)


@dataclass
class WindowBatch:
    """Sliding windows cut from one chronological split."""

    inputs: np.ndarray  # (B, N, T_in, 3) normalized
    targets: np.ndarray  # (B, N, L) normalized infected
    raw_inputs: np.ndarray  # (B, N, T_in, 3)
    raw_targets: np.ndarray  # (B, N, L)
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def raw_last_step(self) -> np.ndarray:
        return self.raw_inputs[:, :, -1, :]

    def __len__(self) -> int:
        return self.inputs.shape[0]


def make_windows(ds: EpidemicDataset, day_range: range, t_in: int = 5, horizon: int = 5,
                 normalizer: Normalizer | None = None) -> WindowBatch:
    """Stride-1 windows whose inputs and targets both lie inside ``day_range``."""
    if t_in < 1 or horizon < 1:
        raise ConfigurationError(f"t_in and horizon must be positive, got {t_in}, {horizon}")
    length = len(day_range)
    if length < t_in + horizon:
        raise ConfigurationError(
            f"range of {length} days cannot hold a window of {t_in} inputs + {horizon} targets")
    starts = np.arange(day_range.start, day_range.stop - t_in - horizon + 1)
    raw_inputs = np.stack([ds.series[:, s:s + t_in, :] for s in starts])
    raw_targets = np.stack([ds.series[:, s + t_in:s + t_in + horizon, INFECTED] for s in starts])
    if normalizer is None:
        inputs, targets = raw_inputs.copy(), raw_targets.copy()
    else:
        inputs = normalizer.transform(raw_inputs)
        targets = normalizer.transform_infected(raw_targets)
    return WindowBatch(inputs, targets, raw_inputs, raw_targets, starts)
