"""Per-series evaluation records and their aggregation into mean (std) tables."""
from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_model import AggregationLevel, Interval, MetricSeries, SeriesKey, missing_ratio
from .metrics import DEFAULT_EPSILON, ClipThresholds, pearson, score
from .models import DISPLAY_NAMES, Forecaster, ModelKind
from .preprocessing import ScalerParams, WindowConfig, fill_missing_zero, make_windows, split_series, transform
from .training import TimingRecord, TrainReport, measure_times


class NoTestWindowsError(ValueError):
    pass


class EmptyGroupError(ValueError):
    pass


class Status(str, enum.Enum):
    OK = "ok"
    FAILED = "failed"


MEASURES = ("rmse", "r2", "harmonic", "train_time", "pred_time")
LOWER_IS_BETTER = {"rmse": True, "r2": False, "harmonic": True, "train_time": True, "pred_time": True}

RECORD_COLUMNS = (
    "job_id",
    "level",
    "series_id",
    "interval",
    "metric",
    "train_window",
    "pred_window",
    "model",
    "seed",
    "status",
    "rmse",
    "r2",
    "harmonic",
    "train_time_per_100",
    "pred_time_per_100",
    "missing_ratio",
    "n_test_windows",
    "error",
)

NAN_TIMING = TimingRecord(math.nan, math.nan)


@dataclass(frozen=True)
class EvaluationRecord:
    key: SeriesKey
    metric_name: str
    config: WindowConfig
    model_kind: ModelKind
    rmse: float
    r2: float
    harmonic: float
    timing: TimingRecord
    missing_ratio: float
    n_test_windows: int
    seed: int
    status: Status = Status.OK
    error: str = ""
    job_id: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    def measure(self, name: str) -> float:
        if name == "train_time":
            return self.timing.train_time_per_100
        if name == "pred_time":
            return self.timing.pred_time_per_100
        if name not in MEASURES:
            raise KeyError(f"unknown measure {name!r}")
        return getattr(self, name)

    def to_row(self) -> list[str]:
        def num(v: float) -> str:
            return "" if math.isnan(v) else repr(float(v))

        return [
            self.job_id,
            self.key.aggregation_level.value,
            self.key.series_id,
            self.key.interval.value,
            self.metric_name,
            str(self.config.train_window),
            str(self.config.pred_window),
            self.model_kind.value,
            str(self.seed),
            self.status.value,
            num(self.rmse),
            num(self.r2),
            num(self.harmonic),
            num(self.timing.train_time_per_100),
            num(self.timing.pred_time_per_100),
            num(self.missing_ratio),
            str(self.n_test_windows),
            self.error.replace("\n", " "),
        ]

    @classmethod
    def from_row(cls, row: Sequence[str]) -> "EvaluationRecord":
        d = dict(zip(RECORD_COLUMNS, row))

        def num(s: str) -> float:
            return math.nan if s == "" else float(s)

        return cls(
            key=SeriesKey(AggregationLevel(d["level"]), d["series_id"], Interval(d["interval"])),
            metric_name=d["metric"],
            config=WindowConfig(int(d["train_window"]), int(d["pred_window"])),
            model_kind=ModelKind(d["model"]),
            rmse=num(d["rmse"]),
            r2=num(d["r2"]),
            harmonic=num(d["harmonic"]),
            timing=TimingRecord(num(d["train_time_per_100"]), num(d["pred_time_per_100"])),
            missing_ratio=num(d["missing_ratio"]),
            n_test_windows=int(d["n_test_windows"]),
            seed=int(d["seed"]),
            status=Status(d["status"]),
            error=d.get("error", ""),
            job_id=d["job_id"],
        )


def failed_record(key, metric_name, config, model_kind, seed, error: str, missing: float = math.nan,
                  job_id: str = "") -> EvaluationRecord:
    return EvaluationRecord(
        key, metric_name, config, ModelKind(model_kind), math.nan, math.nan, math.nan,
        NAN_TIMING, missing, 0, seed, Status.FAILED, error, job_id,
    )


def write_records(records: Iterable[EvaluationRecord], path, append: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not append or not path.exists() or path.stat().st_size == 0
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow(r.to_row())
    return path


def read_records(path) -> list[EvaluationRecord]:
    """Read a records file; a truncated trailing line from an interrupted write is skipped."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if tuple(header) != RECORD_COLUMNS:
            raise ValueError(f"{path}: unexpected records header {header}")
        for row in reader:
            if len(row) != len(RECORD_COLUMNS):
                continue
            out.append(EvaluationRecord.from_row(row))
    return out


def evaluate_series(
    series: MetricSeries,
    cfg: WindowConfig,
    model: Forecaster,
    scaler: ScalerParams,
    *,
    seed: int = 0,
    epsilon: float = DEFAULT_EPSILON,
    clips: ClipThresholds = ClipThresholds(),
    train_report: TrainReport | None = None,
    job_id: str = "",
) -> EvaluationRecord:
    """Score ``model`` on the test partition of ``series``.

    Forecasts for all test windows are pooled in time order and scored once.
    """
    ratio = missing_ratio(series)
    filled = fill_missing_zero(series).values
    split = split_series(len(filled))
    test = transform(scaler, filled[split.val_end :])
    inputs, targets, _ = make_windows(test, cfg)
    if len(inputs) == 0:
        raise NoTestWindowsError(
            f"{series.key.series_id}: test partition of {len(test)} values has no {cfg} window"
        )
    start = time.perf_counter()
    predictions = model.predict_batch(inputs)
    pred_elapsed = time.perf_counter() - start
    actual, predicted = targets.ravel(), predictions.ravel()
    assert actual.size == len(inputs) * cfg.pred_window
    rmse_v, r2_v, harmonic_v = score(actual, predicted, epsilon, clips)
    report = train_report if train_report is not None else TrainReport()
    timing = measure_times(report, split.train_end, pred_elapsed, actual.size)
    return EvaluationRecord(
        series.key, series.metric_name, cfg, model.spec.kind, rmse_v, r2_v, harmonic_v,
        timing, ratio, len(inputs), seed, Status.OK, "", job_id,
    )


@dataclass(frozen=True)
class AggregateCell:
    mean: float
    std: float
    n: int

    def format(self) -> str:
        """``"0.104 (0.53)"``: mean to three decimals, sample std to two."""
        return f"{self.mean:.3f} ({self.std:.2f})"


def aggregate(records: Iterable[EvaluationRecord], measure: str) -> AggregateCell:
    """Mean and sample standard deviation of ``measure`` over ok records."""
    if measure not in MEASURES:
        raise KeyError(f"unknown measure {measure!r}")
    values = np.array([r.measure(measure) for r in records if r.ok], dtype=np.float64)
    if values.size == 0:
        raise EmptyGroupError(f"no ok records to aggregate for {measure}")
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return AggregateCell(float(values.mean()), std, int(values.size))


GroupKey = tuple


def group_records(records: Iterable[EvaluationRecord], by: Sequence[str] = ("level", "config", "model")) -> dict:
    getters = {
        "level": lambda r: r.key.aggregation_level,
        "config": lambda r: r.config,
        "model": lambda r: r.model_kind,
        "metric": lambda r: r.metric_name,
        "interval": lambda r: r.key.interval,
        "seed": lambda r: r.seed,
    }
    groups: dict = {}
    for r in records:
        groups.setdefault(tuple(getters[b](r) for b in by), []).append(r)
    return groups


def aggregate_groups(records: Iterable[EvaluationRecord], measure: str,
                     by: Sequence[str] = ("level", "config", "model")) -> dict:
    """``{group key: AggregateCell}``; groups without ok records are omitted."""
    out = {}
    for key, members in group_records(records, by).items():
        if any(m.ok for m in members):
            out[key] = aggregate(members, measure)
    return out


def overall_mean(means: Iterable[float]) -> float:
    """Unweighted mean of per-setting means."""
    values = [float(m) for m in means]
    if not values:
        raise EmptyGroupError("overall mean of no settings")
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class RowRanking:
    best: tuple[int, ...]
    worst: tuple[int, ...]


def rank_row(values: Sequence[float], lower_is_better: bool = True, decimals: int | None = None) -> RowRanking:
    """Indices of the best and worst values; equal values share a mark.

    With ``decimals`` set, values are compared as displayed.  NaN entries
    (missing cells) are never marked.
    """
    vals = [round(v, decimals) if decimals is not None and not math.isnan(v) else v for v in values]
    present = [v for v in vals if not math.isnan(v)]
    if not present:
        return RowRanking((), ())
    lo, hi = min(present), max(present)
    best, worst = (lo, hi) if lower_is_better else (hi, lo)
    return RowRanking(
        tuple(i for i, v in enumerate(vals) if v == best),
        tuple(i for i, v in enumerate(vals) if v == worst),
    )


def correlate_missing(records: Iterable[EvaluationRecord]) -> float:
    """Pearson correlation between missing ratio and R² across series."""
    ok = [r for r in records if r.ok]
    if len(ok) < 3:
        raise ValueError(f"need at least 3 ok records, got {len(ok)}")
    return pearson([r.missing_ratio for r in ok], [r.r2 for r in ok])


@dataclass
class PartTable:
    level: AggregationLevel
    configs: list[WindowConfig]
    cells: list[list[AggregateCell | None]]
    failures: list[int]
    part_means: list[float]


@dataclass
class MeasureTable:
    """One measure laid out like the published tables: per part, config rows by model columns."""

    measure: str
    models: list[ModelKind]
    parts: list[PartTable] = field(default_factory=list)
    overall: list[float] = field(default_factory=list)

    @property
    def model_names(self) -> list[str]:
        return [DISPLAY_NAMES[m] for m in self.models]


def build_table(
    records: Sequence[EvaluationRecord],
    measure: str,
    levels: Sequence[AggregationLevel] | None = None,
    configs: Sequence[WindowConfig] | None = None,
    models: Sequence[ModelKind] | None = None,
) -> MeasureTable:
    """Arrange ``records`` for one measure; rows and columns default to what occurs."""
    records = list(records)
    if not records:
        raise EmptyGroupError("no records")
    present_levels = {r.key.aggregation_level for r in records}
    present_configs = {r.config for r in records}
    present_models = {r.model_kind for r in records}
    levels = list(levels) if levels else [lv for lv in AggregationLevel if lv in present_levels]
    configs = list(configs) if configs else sorted(present_configs, key=lambda c: (c.train_window, c.pred_window))
    models = list(models) if models else [m for m in ModelKind if m in present_models]

    groups = group_records(records)
    table = MeasureTable(measure, models)
    setting_means: list[list[float]] = [[] for _ in models]
    for level in levels:
        cells, failures = [], []
        for cfg in configs:
            row, failed = [], 0
            for m in models:
                members = groups.get((level, cfg, m), [])
                failed += sum(1 for r in members if not r.ok)
                row.append(aggregate(members, measure) if any(r.ok for r in members) else None)
            cells.append(row)
            failures.append(failed)
        part_means = []
        for j in range(len(models)):
            col = [row[j].mean for row in cells if row[j] is not None]
            part_means.append(overall_mean(col) if col else math.nan)
            setting_means[j].extend(col)
        table.parts.append(PartTable(level, configs, cells, failures, part_means))
    table.overall = [overall_mean(col) if col else math.nan for col in setting_means]
    return table


def metric_harmonic_means(records: Sequence[EvaluationRecord]) -> dict[str, float]:
    """Per metric: mean over models of each model's overall-mean harmonic score."""
    by_metric: dict[str, list[EvaluationRecord]] = {}
    for r in records:
        by_metric.setdefault(r.metric_name, []).append(r)
    out = {}
    for metric, members in by_metric.items():
        if not any(r.ok for r in members):
            continue
        table = build_table(members, "harmonic")
        values = [v for v in table.overall if not math.isnan(v)]
        out[metric] = overall_mean(values)
    return out
