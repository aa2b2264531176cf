import pytest

from traffic_bench.data_model import AggregationLevel, FixtureSpec, Interval, SeriesKey, generate_fixture

# cheap model settings so full experiment matrices finish in seconds
TINY_MODELS = [
    "mean",
    {"kind": "gru", "hidden_size": 8},
    {"kind": "lstm", "hidden_size": 8},
    {"kind": "gru_fcn", "hidden_size": 4, "rnn_layers": 1, "conv_channels": [4, 8, 4]},
    {"kind": "lstm_fcn", "hidden_size": 8, "conv_channels": [4, 8, 4]},
    {"kind": "inception_time", "conv_channels": [2]},
    {"kind": "resnet", "conv_channels": [4, 8, 8]},
    {"kind": "rclstm", "hidden_size": 16, "connectivity_p": 0.5},
]


def small_fixtures(length=400, n=3, level="institutions"):
    return {
        "defaults": {"length": length, "seasonal_period": 24, "amplitude": 100.0,
                     "noise_std": 5.0, "metrics": ["n_bytes"]},
        "series": [
            {"level": level, "series_id": f"s{i}", "seed": 100 + i, "missing_ratio": 0.05 * i}
            for i in range(n)
        ],
    }


@pytest.fixture
def sinusoid():
    return generate_fixture(FixtureSpec(length=1200, seasonal_period=24, amplitude=1.0, seed=3))


@pytest.fixture
def key():
    return SeriesKey(AggregationLevel.INSTITUTIONS, "k1", Interval.HOUR)


_criteria = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[report.nodeid] = (marker, report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = (m.args[0], m.args[1])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    grouped = {}
    for (number, text), outcome in _criteria.values():
        grouped.setdefault(number, (text, []))[1].append(outcome)
    terminalreporter.section("acceptance criteria")
    for number in sorted(grouped):
        text, outcomes = grouped[number]
        if "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {text}")
