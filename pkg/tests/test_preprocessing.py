import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_windows
from traffic_bench.data_model import FixtureSpec, MetricSeries, generate_fixture
from traffic_bench.preprocessing import (
    BENCHMARK_WINDOWS,
    ScalerParams,
    TooShortSeriesError,
    WindowConfig,
    fill_missing_zero,
    fit_scaler,
    inverse_transform,
    make_windows,
    prepare,
    split_series,
    transform,
    windows_as_list,
)


def test_fill_missing_zero(key):
    s = MetricSeries(key, "n_bytes", [0, 3600, 7200], [1.0, np.nan, 3.0])
    np.testing.assert_array_equal(fill_missing_zero(s).values, [1, 0, 3])
    full = MetricSeries(key, "n_bytes", [0, 3600], [4.0, 5.0])
    np.testing.assert_array_equal(fill_missing_zero(full).values, full.values)
    empty = MetricSeries(key, "n_bytes", np.arange(5) * 3600, np.full(5, np.nan))
    np.testing.assert_array_equal(fill_missing_zero(empty).values, np.zeros(5))
    assert np.isnan(empty.values).all()


@pytest.mark.parametrize("total,expected", [(6720, (2352, 2688)), (20, (7, 8)), (100, (35, 40))])
def test_split_examples(total, expected):
    s = split_series(total)
    assert (s.train_end, s.val_end) == expected


def test_split_train_span_is_fourteen_weeks():
    assert split_series(6720).train_end == 14 * 7 * 24


def test_split_too_short():
    with pytest.raises(TooShortSeriesError):
        split_series(19)


@given(st.integers(20, 100_000))
def test_split_properties(total):
    s = split_series(total)
    assert 0 < s.train_end < s.val_end < s.total
    assert s.train_end == int(np.floor(total * 35 / 100))
    assert s.val_end == int(np.floor(total * 40 / 100))
    parts = s.partitions(np.arange(total))
    assert sum(len(p) for p in parts) == total
    np.testing.assert_array_equal(np.concatenate(parts), np.arange(total))


def test_fit_scaler_examples():
    assert fit_scaler([0, 5, 10]) == ScalerParams(0, 10)
    assert fit_scaler([4, 4, 4]) == ScalerParams(4, 4)
    with pytest.raises(ValueError):
        fit_scaler([])


def test_fit_scaler_matches_linear_scan():
    s = generate_fixture(FixtureSpec(length=500, noise_std=0.2, seed=5))
    train = fill_missing_zero(s).values[: split_series(500).train_end]
    lo = hi = train[0]
    for v in train:
        lo, hi = min(lo, v), max(hi, v)
    assert fit_scaler(train) == ScalerParams(lo, hi)


def test_transform_examples():
    p = ScalerParams(0.0, 10.0)
    assert transform(p, 0.0) == 0 and transform(p, 10.0) == 1
    assert transform(p, 15.0) == 1.5
    assert transform(p, -5.0) == -0.5
    deg = ScalerParams(4.0, 4.0)
    np.testing.assert_array_equal(transform(deg, [4, 7, -1]), [0, 0, 0])
    np.testing.assert_array_equal(inverse_transform(deg, [0, 0.3]), [4, 4])


def test_round_trip():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1e3, 1000)
    p = fit_scaler(rng.normal(0, 1e3, 50))
    assert np.max(np.abs(x - inverse_transform(p, transform(p, x)))) < 1e-9


def test_scaler_ignores_test_values():
    s = generate_fixture(FixtureSpec(length=300, noise_std=0.1, seed=2))
    base = prepare(s, WindowConfig(24, 1)).scaler
    vals = s.values.copy()
    vals[-10:] = 1e9
    vals[200] = -1e9
    assert prepare(s.with_values(vals), WindowConfig(24, 1)).scaler == base


@pytest.mark.parametrize("n,w,h,count", [(100, 24, 1, 76), (4032, 168, 24, 161), (6720, 168, 24, 273), (25, 24, 1, 1)])
def test_window_counts(n, w, h, count):
    x, y, o = make_windows(np.arange(n, dtype=float), WindowConfig(w, h))
    assert len(x) == len(y) == len(o) == count


def test_window_shapes_and_contiguity():
    values = np.arange(300, dtype=float) ** 1.5
    for cfg in BENCHMARK_WINDOWS[:3]:
        for inp, tgt, origin in windows_as_list(values, cfg):
            assert inp.shape == (cfg.train_window,) and tgt.shape == (cfg.pred_window,)
            np.testing.assert_array_equal(np.concatenate([inp, tgt]),
                                          values[origin: origin + cfg.train_window + cfg.pred_window])


def test_too_short_partition_gives_no_windows():
    x, y, o = make_windows(np.arange(10.0), WindowConfig(24, 1))
    assert x.shape == (0, 24) and y.shape == (0, 1) and len(o) == 0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 200), st.integers(1, 30), st.integers(1, 10))
def test_windows_match_enumeration(n, w, h):
    values = np.random.default_rng(n * 1000 + w * 10 + h).normal(size=n)
    x, y, origins = make_windows(values, WindowConfig(w, h))
    expected = enumerate_windows(n, w, h)
    assert list(origins) == expected
    for i, s in enumerate(expected):
        assert list(x[i]) == list(values[s:s + w])
        assert list(y[i]) == list(values[s + w:s + w + h])


def test_prepare_windows_stay_in_partition():
    s = generate_fixture(FixtureSpec(length=1000, seed=1))
    p = prepare(s, WindowConfig(24, 1))
    assert len(p.train) == 350 and len(p.val) == 50 and len(p.test) == 600
    assert len(p.windows("val")[0]) == 26
    assert len(p.windows("test")[0]) == 576


def test_window_config_parse():
    assert WindowConfig.parse("168/24") == WindowConfig(168, 24)
    assert WindowConfig.parse("744x168") == WindowConfig(744, 168)
    with pytest.raises(ValueError):
        WindowConfig.parse("24")
    with pytest.raises(ValueError):
        WindowConfig(0, 1)
