"""Dataset tree checks behind ``traffic-bench validate-data``."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import (
    AggregationLevel,
    DataError,
    DatasetLayout,
    Interval,
    SeriesKey,
    ValueDomain,
    catalog_metrics,
    missing_ratio,
    read_series_file,
)

HISTOGRAM_BINS = np.linspace(0.0, 1.0, 11)


@dataclass
class PartSummary:
    level: AggregationLevel
    series_count: int = 0
    missing_ratios: list[float] = field(default_factory=list)
    uncovered_metrics: dict[str, int] = field(default_factory=dict)

    def histogram(self) -> np.ndarray:
        counts, _ = np.histogram(self.missing_ratios, bins=HISTOGRAM_BINS)
        return counts


@dataclass
class ValidationReport:
    root: Path
    interval: Interval
    parts: list[PartSummary] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def render(self) -> str:
        lines = [f"dataset {self.root} @ {self.interval.value}"]
        for part in self.parts:
            lines.append(f"  {part.level.value}: {part.series_count} series")
            if part.missing_ratios:
                lines.append("    missing-ratio histogram (series x metric):")
                for lo, hi, c in zip(HISTOGRAM_BINS[:-1], HISTOGRAM_BINS[1:], part.histogram()):
                    lines.append(f"      [{lo:.1f}, {hi:.1f}{']' if hi == 1.0 else ')'} {c:6d} {'#' * min(int(c), 50)}")
            if part.uncovered_metrics:
                names = ", ".join(f"{m} ({n})" for m, n in sorted(part.uncovered_metrics.items()))
                lines.append(f"    note: catalog metrics absent (series count): {names}")
        if self.problems:
            lines.append(f"{len(self.problems)} problem(s):")
            lines.extend(f"  {p}" for p in self.problems)
        else:
            lines.append("ok")
        return "\n".join(lines)


def _domain_problem(values: np.ndarray, domain: ValueDomain) -> str | None:
    present = values[~np.isnan(values)]
    if present.size == 0:
        return None
    if present.min() < 0:
        return f"negative value {present.min()!r}"
    if domain is ValueDomain.RATIO_UNIT_INTERVAL and present.max() > 1:
        return f"ratio value {present.max()!r} above 1"
    return None


def validate_dataset(
    root,
    interval: Interval | str = Interval.HOUR,
    parts: list[AggregationLevel] | None = None,
    layout: DatasetLayout | None = None,
) -> ValidationReport:
    """Check layout, timestamp grids, column names and value domains of every file."""
    layout = layout or DatasetLayout()
    interval = Interval(interval)
    root = Path(root)
    report = ValidationReport(root, interval)
    if not root.is_dir():
        report.problems.append(f"dataset root not found: {root}")
        return report
    catalog = {e.name: e for e in catalog_metrics(interval)}
    explicit = parts is not None
    levels = list(parts) if explicit else list(AggregationLevel)
    for level in levels:
        directory = layout.series_dir(root, level, interval)
        if not directory.is_dir():
            if explicit:
                report.problems.append(f"missing directory {directory}")
            continue
        summary = PartSummary(level)
        for path in sorted(directory.glob(f"*{layout.extension}")):
            sid = path.name[: -len(layout.extension)]
            try:
                series = read_series_file(path, SeriesKey(level, sid, interval), None, layout)
            except (DataError, OSError, UnicodeDecodeError) as exc:
                report.problems.append(f"{path}: {exc}")
                continue
            summary.series_count += 1
            for name, s in series.items():
                problem = _domain_problem(s.values, catalog[name].value_domain)
                if problem:
                    report.problems.append(f"{path}: {name}: {problem}")
                summary.missing_ratios.append(missing_ratio(s))
            for name in catalog:
                if name not in series:
                    summary.uncovered_metrics[name] = summary.uncovered_metrics.get(name, 0) + 1
        report.parts.append(summary)
    if not report.parts and not report.problems:
        report.problems.append(f"no series directories for {interval.value} under {root}")
    return report
