"""Acceptance criteria 1-11, one or more tests each.

A per-criterion PASS/FAIL/SKIP line is printed at the end of the session.
"""
import csv
import math
import os
import re
import time
from pathlib import Path

import numpy as np
import pytest
import torch

import oracles
from conftest import small_fixtures
from traffic_bench.cli import main
from traffic_bench.data_model import FixtureSpec, MetricSeries, SeriesKey, generate_fixture, load_series
from traffic_bench.evaluation import EvaluationRecord, build_table, evaluate_series, overall_mean
from traffic_bench.metrics import ClipThresholds, ScorePair, harmonic_score, pearson, r2_score, rmse
from traffic_bench.models import ALL_KINDS, build, default_spec, parameter_count, sample_masks
from traffic_bench.pipeline import run_job
from traffic_bench.preprocessing import (
    BENCHMARK_WINDOWS,
    WindowConfig,
    fit_scaler,
    inverse_transform,
    make_windows,
    prepare,
    split_series,
    transform,
    window_count,
)
from traffic_bench.report import render_text
from traffic_bench.runner import DATA_ROOT_ENV
from traffic_bench.training import TimingRecord, train

C1 = "metric oracle equivalence"
C2 = "harmonic-score point checks and monotonicity"
C3 = "split and window arithmetic"
C4 = "scaler properties"
C5 = "mean baseline exactness"
C6 = "GRU learnability"
C7 = "RCLSTM fidelity"
C8 = "parameter counting"
C9 = "determinism of fixture runs"
C10 = "structural table reproduction"
C11 = "optional full-data track"


@pytest.mark.criterion(1, C1)
def test_c1_metric_oracles():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(2, 501))
        a = rng.normal(0, rng.uniform(0.1, 10), n)
        p = a + rng.normal(0, rng.uniform(0.01, 5), n)
        assert abs(rmse(a, p) - oracles.rmse(a, p)) <= 1e-9
        assert abs(r2_score(a, p) - oracles.r2(a, p)) <= 1e-9
        assert abs(pearson(a, p) - oracles.pearson(a, p)) <= 1e-9
    assert time.perf_counter() - start < 10


@pytest.mark.criterion(2, C2)
def test_c2_harmonic_points():
    assert harmonic_score(ScorePair(0.0, 1.0)) == 0.0
    assert harmonic_score(ScorePair(1.0, 0.0)) == 1.0
    assert harmonic_score(ScorePair(0.5, -50.0)) == pytest.approx(0.956522, abs=1e-6)
    assert harmonic_score(ScorePair(0.5, -50.0)) == harmonic_score(ScorePair(0.5, -10.0))


@pytest.mark.criterion(2, C2)
def test_c2_harmonic_monotone_grid():
    rmses = np.linspace(0, 11, 50)
    r2s = np.linspace(-10, 1, 50)
    grid = np.array([[harmonic_score(ScorePair(r, d)) for d in r2s] for r in rmses])
    assert np.all(np.diff(grid, axis=0) >= 0)
    assert np.all(np.diff(grid, axis=1) <= 0)
    assert grid.min() >= 0 and np.isfinite(grid).all()
    assert ClipThresholds().rmse_max == 11 and ClipThresholds().r2_min == -10


@pytest.mark.criterion(3, C3)
def test_c3_split_and_counts():
    s = split_series(6720)
    assert (s.train_end, s.val_end) == (2352, 2688)
    assert window_count(100, WindowConfig(24, 1)) == 76
    assert window_count(4032, WindowConfig(168, 24)) == 161
    assert window_count(6720, WindowConfig(168, 24)) == 273


@pytest.mark.criterion(3, C3)
def test_c3_exhaustive_enumeration():
    start = time.perf_counter()
    for n in range(1, 201):
        values = np.arange(n, dtype=float)
        for w in range(1, 31):
            for h in range(1, 11):
                starts = oracles.enumerate_windows(n, w, h)
                cfg = WindowConfig(w, h)
                assert window_count(n, cfg) == len(starts) == max(0, (n - w) // h)
                x, y, origins = make_windows(values, cfg)
                assert origins.tolist() == starts
                if starts:
                    assert x[-1, 0] == starts[-1] and y[-1, -1] == starts[-1] + w + h - 1
    assert time.perf_counter() - start < 30


@pytest.mark.criterion(4, C4)
def test_c4_scaler_train_only():
    s = generate_fixture(FixtureSpec(length=1000, noise_std=0.1, seed=4))
    cfg = WindowConfig(24, 1)
    base = prepare(s, cfg)
    spiked = s.values.copy()
    spiked[500:] *= 100
    other = prepare(s.with_values(spiked), cfg)
    assert base.scaler == other.scaler
    assert base.scaler == fit_scaler(s.values[:350])
    assert base.train.min() == 0.0 and base.train.max() == 1.0


@pytest.mark.criterion(4, C4)
def test_c4_round_trip_and_degenerate():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.uniform(-1e6, 1e6, 50)
        params = fit_scaler(x[:20])
        assert np.max(np.abs(inverse_transform(params, transform(params, x)) - x)) < 1e-9 * max(1.0, np.abs(x).max())
    x = rng.uniform(0, 1, 50)
    params = fit_scaler(x)
    assert np.max(np.abs(inverse_transform(params, transform(params, x)) - x)) < 1e-9
    key = SeriesKey("institutions", "flat", "1h")
    flat = MetricSeries(key, "n_bytes", np.arange(200) * 3600, np.full(200, 42.0))
    prepared = prepare(flat, WindowConfig(24, 1))
    assert prepared.scaler.degenerate
    assert not prepared.train.any() and not prepared.test.any()


@pytest.mark.criterion(5, C5)
def test_c5_mean_prediction_exact():
    rng = np.random.default_rng(5)
    model = build(default_spec("mean", 48, 4))
    x = rng.uniform(0, 1, (1000, 48))
    out = model.predict_batch(x)
    expected = np.array([[math.fsum(row) / 48] * 4 for row in x])
    assert np.max(np.abs(out - expected)) <= 1e-12


@pytest.mark.criterion(5, C5)
def test_c5_mean_on_sinusoid():
    s = generate_fixture(FixtureSpec(length=2688, seasonal_period=24, amplitude=1.0, seed=0))
    cfg = WindowConfig(24, 1)
    prepared = prepare(s, cfg)
    r = evaluate_series(s, cfg, build(default_spec("mean", 24, 1)), prepared.scaler)
    _, targets, _ = make_windows(prepared.test, cfg)
    target_std = float(np.std(targets.ravel()))
    assert abs(r.rmse - target_std) <= 0.02 * target_std


@pytest.mark.slow
@pytest.mark.criterion(6, C6)
def test_c6_gru_learnability():
    start = time.perf_counter()
    s = generate_fixture(FixtureSpec(length=1200, seasonal_period=24, amplitude=1.0, noise_std=0.05, seed=6))
    cfg = WindowConfig(24, 1)
    gru = run_job(s, cfg, default_spec("gru", 24, 1, seed=0)).record
    mean = run_job(s, cfg, default_spec("mean", 24, 1)).record
    assert gru.ok and mean.ok
    assert gru.r2 >= 0.8
    assert gru.r2 - mean.r2 >= 0.3
    assert time.perf_counter() - start < 300


def _windows(w, h, n=128, seed=0):
    s = generate_fixture(FixtureSpec(length=n + w + h, noise_std=0.05, seed=seed))
    x, y, _ = make_windows(transform(fit_scaler(s.values), s.values), WindowConfig(w, 1))
    return x[:n], y[:n, :h]


@pytest.mark.criterion(7, C7)
def test_c7_mask_fraction():
    for p in (0.01, 0.05, 0.2, 0.5):
        for seed in range(3):
            assert abs(sample_masks(300, 1, p, seed).ones_fraction() - p) <= 0.005


@pytest.mark.slow
@pytest.mark.criterion(7, C7)
def test_c7_masked_weights_stay_zero():
    model = build(default_spec("rclstm", 24, 1, seed=7))
    assert model.spec.epochs == 100 and model.spec.hidden_size == 300
    train(model, _windows(24, 1))
    enc = model.module.encoder
    for name in enc.masked_names:
        mask = getattr(enc, "mask_" + name[len("weight_"):])
        assert torch.count_nonzero(getattr(enc.rnn, name)[mask == 0]) == 0


@pytest.mark.criterion(7, C7)
def test_c7_dense_rclstm_equals_lstm():
    x, y = _windows(24, 1, n=64)
    kw = dict(hidden_size=32, epochs=3, batch_size=16, seed=3)
    sparse = build(default_spec("rclstm", 24, 1, connectivity_p=1.0, **kw))
    dense = build(default_spec("lstm", 24, 1, **kw))
    np.testing.assert_allclose(sparse.predict_batch(x), dense.predict_batch(x), atol=1e-6, rtol=0)
    train(sparse, (x, y))
    train(dense, (x, y))
    np.testing.assert_allclose(sparse.predict_batch(x), dense.predict_batch(x), atol=1e-6, rtol=0)


@pytest.mark.criterion(7, C7)
def test_c7_finite_difference_gradients():
    model = build(default_spec("rclstm", 6, 1, hidden_size=4, connectivity_p=0.5, seed=2))
    module = model.module.double()
    x, y = _windows(6, 1, n=8)
    xt, yt = torch.as_tensor(x), torch.as_tensor(y)

    def loss():
        return torch.mean((module(xt) - yt) ** 2)

    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    loss().backward()
    rng = np.random.default_rng(0)
    step = 1e-6
    checked = 0
    while checked < 20:
        p = params[int(rng.integers(len(params)))]
        idx = tuple(int(rng.integers(d)) for d in p.shape)
        analytic = p.grad[idx].item()
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + step
            up = loss().item()
            p[idx] = orig - step
            down = loss().item()
            p[idx] = orig
        numeric = (up - down) / (2 * step)
        scale = max(abs(analytic), abs(numeric))
        if scale < 1e-8:
            assert abs(analytic - numeric) < 1e-10
        else:
            assert abs(analytic - numeric) / scale <= 1e-4
        checked += 1


@pytest.mark.criterion(8, C8)
def test_c8_parameter_counts():
    assert parameter_count(build(default_spec("lstm", 24, 1))) == 40_901 == oracles.lstm_param_count(1, 100, 1)
    assert parameter_count(build(default_spec("mean", 24, 1))) == 0


def _score_columns(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [(r["job_id"], r["status"], r["rmse"], r["r2"], r["harmonic"]) for r in rows]


@pytest.mark.criterion(9, C9)
def test_c9_two_runs_identical(tmp_path):
    import yaml

    cfg = tmp_path / "exp.yaml"
    cfg.write_text(yaml.safe_dump({
        "fixtures": small_fixtures(),
        "windows": ["24/1", "48/12"],
        "models": ["mean", {"kind": "gru", "hidden_size": 8}, {"kind": "rclstm", "hidden_size": 16},
                   {"kind": "lstm_fcn", "hidden_size": 8, "conv_channels": [4, 8, 4]}],
        "model_overrides": {"epochs": 2},
        "seeds": [0],
    }))
    for out in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--fixture-mode", "--output", str(tmp_path / out)]) == 0
    a, b = _score_columns(tmp_path / "a" / "records.csv"), _score_columns(tmp_path / "b" / "records.csv")
    assert len(a) == len(b) == 24
    for ra, rb in zip(a, b):
        assert ra[:2] == rb[:2] and ra[1] == "ok"
        for va, vb in zip(ra[2:], rb[2:]):
            assert abs(float(va) - float(vb)) <= 1e-12


PUBLISHED_GRU_RMSE_MEANS = [0.104, 0.105, 0.123, 0.106, 0.165,
                            0.218, 0.219, 0.237, 0.220, 0.265,
                            0.149, 0.150, 0.154, 0.150, 0.179]


def _synthetic_records():
    rng = np.random.default_rng(10)
    out = []
    for level in ("institutions", "institution_subnets", "ip_addresses"):
        for cfg in BENCHMARK_WINDOWS:
            for kind in ALL_KINDS:
                for sid in ("a", "b"):
                    v = float(rng.uniform(0.05, 0.3))
                    out.append(EvaluationRecord(
                        SeriesKey(level, sid, "1h"), "n_bytes", cfg, kind, v, 1 - v, v,
                        TimingRecord(0.1, 0.01), 0.0, 10, 0,
                    ))
    return out


@pytest.mark.criterion(10, C10)
def test_c10_table_layout():
    table = build_table(_synthetic_records(), "rmse")
    text = render_text(table, highlight=False)
    lines = text.splitlines()
    header = lines[0].split()
    assert header[:3] == ["Part", "W", "H"]
    assert header[3:11] == ["Mean", "GRU", "LSTM", "GRU-FCN", "LSTM-FCN", "InceptionTime", "ResNet", "RCLSTM"]
    body = lines[2:]
    cell = r"\d+\.\d{3} \(\d+\.\d{2}\)"
    for label in ("Inst. ", "Inst. subnets", "IP addr."):
        rows = [l for l in body if l.startswith(label) and (label != "Inst. " or not l.startswith("Inst. subnets"))]
        config_rows = [l for l in rows if " Mean " not in l[:20]]
        mean_rows = [l for l in rows if l not in config_rows]
        assert len(config_rows) == 5 and len(mean_rows) == 1
        for l in config_rows:
            assert len(re.findall(cell, l)) == 8
        assert len(re.findall(r"\d+\.\d{4}", mean_rows[0])) == 8
    assert body[-1].startswith("Overall mean")
    assert len(re.findall(r"\d+\.\d{4}", body[-1])) == 8
    assert len(body) == 3 * 6 + 1
    expected = overall_mean([table.parts[i].cells[j][1].mean for i in range(3) for j in range(5)])
    assert table.overall[1] == pytest.approx(expected)


@pytest.mark.criterion(10, C10)
def test_c10_published_gru_overall_mean():
    assert overall_mean(PUBLISHED_GRU_RMSE_MEANS) == pytest.approx(0.1696, abs=5e-4)


def _real_data_root():
    root = os.environ.get(DATA_ROOT_ENV)
    if not root or not (Path(root) / "institutions" / "1h").is_dir():
        return None
    return Path(root)


@pytest.mark.slow
@pytest.mark.criterion(11, C11)
@pytest.mark.skipif(_real_data_root() is None, reason=f"{DATA_ROOT_ENV} does not point at the public dataset")
def test_c11_full_data_gru():
    series = load_series(_real_data_root(), "institutions", "1h", "n_bytes")
    cfg = WindowConfig(24, 1)
    records = [run_job(s, cfg, default_spec("gru", 24, 1)).record for s in series]
    ok = [r.rmse for r in records if r.ok]
    assert ok
    assert abs(math.fsum(ok) / len(ok) - 0.104) <= 0.2 * 0.104
