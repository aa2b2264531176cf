"""Dataset domain types, the metric catalog, on-disk ingestion and fixtures.

Series live on disk as one comma-separated file per series, laid out as
``<root>/<level>/<interval>/<series_id>.csv``.  Each file has a header row, a
timestamp column and one column per catalog metric.  A missing value is an
empty field; a timestamp absent from the uniform grid is also loaded as
missing.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Base class for dataset problems."""


class MalformedRowError(DataError):
    def __init__(self, path, line: int, reason: str):
        self.path = Path(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{self.path}:{line}: {reason}")


class UnknownMetricError(DataError):
    pass


class AggregationLevel(str, enum.Enum):
    INSTITUTIONS = "institutions"
    INSTITUTION_SUBNETS = "institution_subnets"
    IP_ADDRESSES = "ip_addresses"


class Interval(str, enum.Enum):
    MIN10 = "10min"
    HOUR = "1h"
    DAY = "1day"

    @property
    def seconds(self) -> int:
        return {"10min": 600, "1h": 3600, "1day": 86400}[self.value]


class Variant(str, enum.Enum):
    BASE = "base"
    SUM = "sum"
    AVG = "avg"
    STD = "std"


class ValueDomain(str, enum.Enum):
    NONNEGATIVE_COUNT = "nonnegative_count"
    RATIO_UNIT_INTERVAL = "ratio_unit_interval"
    NONNEGATIVE_REAL = "nonnegative_real"


@dataclass(frozen=True)
class SeriesKey:
    aggregation_level: AggregationLevel
    series_id: str
    interval: Interval

    def __post_init__(self):
        object.__setattr__(self, "aggregation_level", AggregationLevel(self.aggregation_level))
        object.__setattr__(self, "interval", Interval(self.interval))
        if not self.series_id:
            raise DataError("series_id must be non-empty")


@dataclass(frozen=True)
class MetricCatalogEntry:
    name: str
    variant: Variant
    value_domain: ValueDomain


@dataclass(frozen=True, eq=False)
class MetricSeries:
    """One univariate series; ``values`` uses NaN as the missing marker."""

    key: SeriesKey
    metric_name: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if ts.ndim != 1 or vals.ndim != 1 or len(ts) != len(vals) or len(ts) == 0:
            raise DataError("timestamps and values must be 1-D with equal, positive length")
        if len(ts) > 1:
            steps = np.diff(ts)
            if np.any(steps != self.key.interval.seconds):
                raise DataError(
                    f"timestamps of {self.key.series_id} are not spaced by {self.key.interval.value}"
                )
        ts.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def with_values(self, values) -> "MetricSeries":
        return MetricSeries(self.key, self.metric_name, self.timestamps, values)


# Table of base metrics, in dataset order. The unique-count metrics expand to
# sum/avg/std statistics at the coarser intervals.
_BASE_METRICS: tuple[tuple[str, ValueDomain], ...] = (
    ("n_flows", ValueDomain.NONNEGATIVE_COUNT),
    ("n_packets", ValueDomain.NONNEGATIVE_COUNT),
    ("n_bytes", ValueDomain.NONNEGATIVE_COUNT),
    ("n_dest_ip", ValueDomain.NONNEGATIVE_COUNT),
    ("n_dest_ports", ValueDomain.NONNEGATIVE_COUNT),
    ("n_dest_asn", ValueDomain.NONNEGATIVE_COUNT),
    ("tcp_udp_ratio_packets", ValueDomain.RATIO_UNIT_INTERVAL),
    ("tcp_udp_ratio_bytes", ValueDomain.RATIO_UNIT_INTERVAL),
    ("dir_ratio_packets", ValueDomain.RATIO_UNIT_INTERVAL),
    ("dir_ratio_bytes", ValueDomain.RATIO_UNIT_INTERVAL),
    ("avg_duration", ValueDomain.NONNEGATIVE_REAL),
    ("avg_ttl", ValueDomain.NONNEGATIVE_REAL),
)
_UNIQUE_COUNT_METRICS = frozenset({"n_dest_ip", "n_dest_ports", "n_dest_asn"})


def catalog_metrics(interval: Interval | str) -> list[MetricCatalogEntry]:
    """Return the metric catalog for ``interval`` (12 entries at 10min, 18 otherwise)."""
    interval = Interval(interval)
    entries = []
    for name, domain in _BASE_METRICS:
        if interval is not Interval.MIN10 and name in _UNIQUE_COUNT_METRICS:
            entries.append(MetricCatalogEntry(f"sum_{name}", Variant.SUM, ValueDomain.NONNEGATIVE_COUNT))
            entries.append(MetricCatalogEntry(f"avg_{name}", Variant.AVG, ValueDomain.NONNEGATIVE_REAL))
            entries.append(MetricCatalogEntry(f"std_{name}", Variant.STD, ValueDomain.NONNEGATIVE_REAL))
        else:
            entries.append(MetricCatalogEntry(name, Variant.BASE, domain))
    return entries


def catalog_entry(name: str, interval: Interval | str | None = None) -> MetricCatalogEntry:
    intervals = [Interval(interval)] if interval is not None else list(Interval)
    for iv in intervals:
        for entry in catalog_metrics(iv):
            if entry.name == name:
                return entry
    raise UnknownMetricError(f"unknown metric name: {name!r}")


@dataclass
class DatasetLayout:
    """Adapter between on-disk naming and the canonical layout.

    ``column_map`` renames file columns to catalog names, ``level_dirs`` and
    ``interval_dirs`` rename directories.  ``timestamp_format`` is one of
    ``auto``, ``epoch``, ``iso`` or ``index`` (an integer step counter).
    """

    timestamp_column: str = "timestamp"
    timestamp_format: str = "auto"
    column_map: dict[str, str] = field(default_factory=dict)
    level_dirs: dict[str, str] = field(default_factory=dict)
    interval_dirs: dict[str, str] = field(default_factory=dict)
    extension: str = ".csv"

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "DatasetLayout":
        return cls(**dict(d or {}))

    def series_dir(self, root, level: AggregationLevel | str, interval: Interval | str) -> Path:
        level, interval = AggregationLevel(level), Interval(interval)
        return (
            Path(root)
            / self.level_dirs.get(level.value, level.value)
            / self.interval_dirs.get(interval.value, interval.value)
        )


def _parse_timestamp(text: str, fmt: str, interval: Interval) -> int:
    text = text.strip()
    if fmt == "auto":
        fmt = "epoch" if text.lstrip("-").isdigit() else "iso"
    if fmt == "epoch":
        return int(text)
    if fmt == "index":
        return int(text) * interval.seconds
    if fmt == "iso":
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    raise DataError(f"unknown timestamp format {fmt!r}")


def read_series_file(
    path,
    key: SeriesKey,
    metrics: Iterable[str] | None = None,
    layout: DatasetLayout | None = None,
) -> dict[str, MetricSeries]:
    """Parse one series file into a MetricSeries per requested metric."""
    layout = layout or DatasetLayout()
    path = Path(path)
    interval = key.interval
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRowError(path, 1, "empty file") from None
        header = [h.strip() for h in header]
        if layout.timestamp_column not in header:
            raise MalformedRowError(path, 1, f"missing timestamp column {layout.timestamp_column!r}")
        ts_idx = header.index(layout.timestamp_column)
        columns = {}
        for i, name in enumerate(header):
            if i == ts_idx:
                continue
            columns[layout.column_map.get(name, name)] = i
        wanted = list(columns) if metrics is None else list(metrics)
        for name in wanted:
            catalog_entry(name, interval)
            if name not in columns:
                raise UnknownMetricError(f"{path}: no column for metric {name!r}")

        stamps: list[int] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRowError(path, line_no, f"expected {len(header)} fields, got {len(row)}")
            try:
                t = _parse_timestamp(row[ts_idx], layout.timestamp_format, interval)
            except ValueError as exc:
                raise MalformedRowError(path, line_no, f"bad timestamp {row[ts_idx]!r}") from exc
            if stamps:
                if t <= stamps[-1]:
                    raise MalformedRowError(path, line_no, f"timestamp {row[ts_idx]!r} not strictly increasing")
                if (t - stamps[0]) % interval.seconds:
                    raise MalformedRowError(path, line_no, f"timestamp {row[ts_idx]!r} off the {interval.value} grid")
            vals = []
            for name in wanted:
                cell = row[columns[name]].strip()
                if cell == "":
                    vals.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise MalformedRowError(path, line_no, f"non-numeric value {cell!r} for {name}") from None
                if not math.isfinite(v):
                    raise MalformedRowError(path, line_no, f"non-finite value {cell!r} for {name}")
                vals.append(v)
            stamps.append(t)
            rows.append(vals)
    if not stamps:
        raise MalformedRowError(path, 2, "no data rows")

    offsets = (np.asarray(stamps, dtype=np.int64) - stamps[0]) // interval.seconds
    n = int(offsets[-1]) + 1
    grid = stamps[0] + np.arange(n, dtype=np.int64) * interval.seconds
    table = np.full((n, len(wanted)), np.nan)
    table[offsets] = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(wanted))
    return {name: MetricSeries(key, name, grid, table[:, j]) for j, name in enumerate(wanted)}


def list_series_ids(root, level, interval, layout: DatasetLayout | None = None) -> list[str]:
    layout = layout or DatasetLayout()
    directory = layout.series_dir(root, level, interval)
    if not directory.is_dir():
        raise FileNotFoundError(f"no series directory at {directory}")
    return sorted(p.name[: -len(layout.extension)] for p in directory.glob(f"*{layout.extension}"))


def load_series(
    root_path,
    level: AggregationLevel | str,
    interval: Interval | str,
    metric: str,
    id_filter: Iterable[str] | None = None,
    layout: DatasetLayout | None = None,
) -> list[MetricSeries]:
    """Load ``metric`` for every series of one level and interval, sorted by id."""
    layout = layout or DatasetLayout()
    root = Path(root_path)
    if not root.exists():
        raise FileNotFoundError(f"dataset root not found: {root}")
    catalog_entry(metric, interval)
    ids = list_series_ids(root, level, interval, layout)
    if id_filter is not None:
        wanted = set(id_filter)
        ids = [i for i in ids if i in wanted]
    directory = layout.series_dir(root, level, interval)
    out = []
    for sid in ids:
        key = SeriesKey(AggregationLevel(level), sid, Interval(interval))
        out.append(read_series_file(directory / f"{sid}{layout.extension}", key, [metric], layout)[metric])
    return out


def _format_value(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_series(root, series: Sequence[MetricSeries], layout: DatasetLayout | None = None) -> list[Path]:
    """Write series to the canonical layout; series sharing a key share a file.

    Timestamps are written as epoch seconds and values with full precision,
    so ``load_series`` reproduces them exactly.
    """
    layout = layout or DatasetLayout()
    groups: dict[SeriesKey, list[MetricSeries]] = {}
    for s in series:
        groups.setdefault(s.key, []).append(s)
    paths = []
    for key, members in groups.items():
        ts = members[0].timestamps
        for m in members[1:]:
            if not np.array_equal(m.timestamps, ts):
                raise DataError(f"series {key.series_id}: metrics disagree on timestamps")
        directory = layout.series_dir(root, key.aggregation_level, key.interval)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{key.series_id}{layout.extension}"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([layout.timestamp_column] + [m.metric_name for m in members])
            for i, t in enumerate(ts):
                w.writerow([str(int(t))] + [_format_value(m.values[i]) for m in members])
        paths.append(path)
    return paths


def missing_ratio(series: MetricSeries) -> float:
    """Fraction of missing entries, measured before any filling."""
    return float(np.count_nonzero(series.missing_mask)) / len(series)


@dataclass(frozen=True)
class FixtureSpec:
    length: int
    seasonal_period: int = 24
    amplitude: float = 1.0
    noise_std: float = 0.0
    missing_ratio: float = 0.0
    trend_slope: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.length <= 0 or self.seasonal_period <= 0:
            raise ValueError("length and seasonal_period must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if not 0.0 <= self.missing_ratio < 1.0:
            raise ValueError("missing_ratio must lie in [0, 1)")


FIXTURE_EPOCH = 1696809600  # 2023-10-09T00:00:00Z


def generate_fixture(
    spec: FixtureSpec,
    key: SeriesKey | None = None,
    metric_name: str = "n_bytes",
    start: int = FIXTURE_EPOCH,
) -> MetricSeries:
    """Seeded sinusoid + trend + Gaussian noise, shifted nonnegative.

    Exactly ``round(missing_ratio * length)`` positions are marked missing.
    Ratio-domain metrics are additionally scaled into [0, 1].
    """
    key = key or SeriesKey(AggregationLevel.INSTITUTIONS, "fixture", Interval.HOUR)
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length, dtype=np.float64)
    values = spec.amplitude * np.sin(2.0 * np.pi * t / spec.seasonal_period) + spec.trend_slope * t
    if spec.noise_std > 0:
        values = values + rng.normal(0.0, spec.noise_std, spec.length)
    lowest = values.min()
    if lowest < 0:
        values = values - lowest
    if catalog_entry(metric_name).value_domain is ValueDomain.RATIO_UNIT_INTERVAL:
        top = values.max()
        if top > 0:
            values = values / top
    n_missing = int(round(spec.missing_ratio * spec.length))
    if n_missing:
        values[rng.choice(spec.length, size=n_missing, replace=False)] = np.nan
    stamps = start + np.arange(spec.length, dtype=np.int64) * key.interval.seconds
    return MetricSeries(key, metric_name, stamps, values)
