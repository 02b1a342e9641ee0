import datetime as dt
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bdgstn.data import (ADJACENCY_HEADER, META_HEADER, SERIES_HEADER, EpidemicDataset, Normalizer,
                         chrono_split, fit_normalizer, load_dataset, make_windows, save_dataset)
from bdgstn.exceptions import ConfigurationError, DataFormatError


def small_dataset(N=3, T=30, seed=0, coords=True, adjacency=True):
    rng = np.random.default_rng(seed)
    pop = rng.integers(1000, 5000, size=N).astype(float)
    I = rng.integers(0, 100, size=(N, T)).astype(float)
    R = rng.integers(0, 100, size=(N, T)).astype(float)
    S = pop[:, None] - I - R
    series = np.stack([S, I, R], axis=2)
    dates = [dt.date(2021, 1, 1) + dt.timedelta(days=t) for t in range(T)]
    xy = rng.uniform([30, -120], [45, -75], size=(N, 2)) if coords else None
    A = None
    if adjacency:
        A = np.zeros((N, N))
        A[0, 1] = A[1, 0] = 1
    return EpidemicDataset([f"X{i}" for i in range(N)], dates, series, pop, xy, A)


def assert_same(a, b):
    assert a.patch_ids == b.patch_ids and a.dates == b.dates
    np.testing.assert_array_equal(a.series, b.series)
    np.testing.assert_array_equal(a.population, b.population)
    if a.coordinates is None:
        assert b.coordinates is None
    else:
        np.testing.assert_array_equal(a.coordinates, b.coordinates)
    if a.geo_adjacency is not None:
        np.testing.assert_array_equal(a.geo_adjacency, b.geo_adjacency)


def test_round_trip_exact(tmp_path):
    ds = small_dataset()
    ds.series = ds.series * (1 - 1e-3 * np.random.default_rng(1).uniform(size=ds.series.shape))  # non-integers
    paths = save_dataset(ds, tmp_path)
    back = load_dataset(paths["series"], paths["meta"], paths["adjacency"])
    assert_same(ds, back)


def test_headers(tmp_path):
    paths = save_dataset(small_dataset(), tmp_path)
    first = lambda p: open(p).readline().strip()  # noqa: E731
    assert first(paths["series"]) == ",".join(SERIES_HEADER) == "date,patch,susceptible,infected,recovered"
    assert first(paths["meta"]) == ",".join(META_HEADER) == "patch,population,lat,lon"
    assert first(paths["adjacency"]) == ",".join(ADJACENCY_HEADER) == "src,dst"


def test_empty_coordinates_allowed(tmp_path):
    ds = small_dataset(coords=False, adjacency=False)
    paths = save_dataset(ds, tmp_path)
    back = load_dataset(paths["series"], paths["meta"])
    assert back.coordinates is None


def _write(tmp_path, series_rows, meta_rows=("A,100,,",)):
    s = tmp_path / "s.csv"
    m = tmp_path / "m.csv"
    s.write_text("date,patch,susceptible,infected,recovered\n" + "\n".join(series_rows) + "\n")
    m.write_text("patch,population,lat,lon\n" + "\n".join(meta_rows) + "\n")
    return s, m


def test_missing_date_named(tmp_path):
    s, m = _write(tmp_path, ["2021-01-01,A,90,10,0", "2021-01-03,A,80,10,10"])
    with pytest.raises(DataFormatError, match="2021-01-02"):
        load_dataset(s, m)


@pytest.mark.parametrize("rows,match", [
    (["2021-01-01,A,90,x,0"], "non-numeric"),
    (["2021-01-01,B,90,10,0"], "unknown patch"),
    (["2021-01-01,A,90,-1,0"], "negative"),
    (["2021-01-01,A,90,10,0", "2021-01-01,A,90,10,0"], "duplicate"),
    (["01/01/2021,A,90,10,0"], "date"),
])
def test_loader_errors(tmp_path, rows, match):
    s, m = _write(tmp_path, rows)
    with pytest.raises(DataFormatError, match=match):
        load_dataset(s, m)


def test_bad_header(tmp_path):
    s, m = _write(tmp_path, ["2021-01-01,A,90,10,0"])
    s.write_text("day,patch,s,i,r\n2021-01-01,A,90,10,0\n")
    with pytest.raises(DataFormatError, match="expected header"):
        load_dataset(s, m)


def test_population_overflow_warns_only():
    ds = small_dataset()
    ds.series[0, 0, 0] += 1e6
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ds.validate()
    assert caught


def test_asymmetric_adjacency_rejected():
    ds = small_dataset()
    ds.geo_adjacency[0, 2] = 1
    with pytest.raises(DataFormatError):
        ds.validate()


@pytest.mark.parametrize("T,expected", [(245, (147, 49, 49)), (151, (90, 30, 31)), (200, (120, 40, 40))])
def test_chrono_split(T, expected):
    splits = chrono_split(T)
    assert tuple(len(r) for r in splits) == expected
    assert splits[0].start == 0 and splits[-1].stop == T
    assert splits[0].stop == splits[1].start and splits[1].stop == splits[2].start


def test_chrono_split_too_short():
    with pytest.raises(ConfigurationError, match="val"):
        chrono_split(100, (1.0, 0.0, 0.0), min_length=25)


def test_normalizer_endpoints_and_constant():
    ds = small_dataset(T=40)
    ds.series[1, :, 1] = 7.0
    norm = fit_normalizer(ds, range(0, 30))
    z = norm.transform(ds.series[:, :30])
    np.testing.assert_allclose(z[0].min(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z[0].max(axis=0), 1.0, atol=1e-6)
    np.testing.assert_allclose(z[1, :, 1], 0.0, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_normalizer_round_trip(seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-5, 5, size=(4, 3))
    norm = Normalizer(lo, lo + rng.uniform(0.1, 1e5, size=(4, 3)))
    x = rng.uniform(-1e5, 1e5, size=(2, 4, 6, 3))
    np.testing.assert_allclose(norm.inverse_transform(norm.transform(x)), x, rtol=1e-9, atol=1e-9)
    y = x[..., 1]
    np.testing.assert_allclose(norm.inverse_infected(norm.transform_infected(y)), y, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("length,expected", [(147, 123), (25, 1)])
def test_window_counts(length, expected):
    ds = small_dataset(T=160)
    assert len(make_windows(ds, range(3, 3 + length), 5, 20)) == expected


def test_window_too_short():
    with pytest.raises(ConfigurationError):
        make_windows(small_dataset(T=40), range(0, 24), 5, 20)


def test_windows_stay_inside_split_and_invert():
    ds = small_dataset(T=60)
    splits = chrono_split(ds, min_length=10)
    norm = fit_normalizer(ds, splits[0])
    for r in splits:
        w = make_windows(ds, r, 5, 5, norm)
        assert np.all(np.diff(w.starts) > 0)
        assert w.starts.min() >= r.start and w.starts.max() + 10 <= r.stop
        np.testing.assert_allclose(norm.inverse_infected(w.targets), w.raw_targets, rtol=1e-9, atol=1e-9)
        np.testing.assert_array_equal(w.raw_targets[0], ds.series[:, w.starts[0] + 5:w.starts[0] + 10, 1])
