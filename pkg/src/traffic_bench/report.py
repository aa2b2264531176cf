"""Text and markdown rendering of aggregate tables, plus the per-metric chart."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

from .data_model import AggregationLevel
from .evaluation import (
    LOWER_IS_BETTER,
    EvaluationRecord,
    MeasureTable,
    build_table,
    correlate_missing,
    group_records,
    metric_harmonic_means,
    rank_row,
)
from .metrics import ZeroVarianceError
from .models import DISPLAY_NAMES, ModelKind

TABLE_MEASURES = ("rmse", "r2", "harmonic")
MEASURE_TITLES = {
    "rmse": "RMSE",
    "r2": "R2-score",
    "harmonic": "Harmonic-Score",
    "train_time": "training time per 100 datapoints [s]",
    "pred_time": "prediction time per 100 datapoints [s]",
}
PART_LABELS = {
    AggregationLevel.INSTITUTIONS: "Inst.",
    AggregationLevel.INSTITUTION_SUBNETS: "Inst. subnets",
    AggregationLevel.IP_ADDRESSES: "IP addr.",
}
CELL_DECIMALS = 3
MEAN_ROW_DECIMALS = 4


def _mark(text: str, best: bool, worst: bool, markdown: bool) -> str:
    if not markdown:
        return text + (" +" if best else "") + (" -" if worst and not best else "")
    if best:
        return f"**{text}**"
    if worst:
        return f"_{text}_"
    return text


def table_rows(table: MeasureTable, markdown: bool = False, highlight: bool = True) -> tuple[list[str], list[list[str]]]:
    """Header and body rows of a published-style table.

    Best/worst marks come from ``rank_row`` on the displayed means.
    """
    lower = LOWER_IS_BETTER[table.measure]
    header = ["Part", "W", "H", *table.model_names, "failed"]
    body: list[list[str]] = []

    def marked(values: list[float], texts: list[str], decimals: int) -> list[str]:
        if not highlight:
            return texts
        ranking = rank_row(values, lower, decimals)
        return [_mark(t, i in ranking.best, i in ranking.worst, markdown) for i, t in enumerate(texts)]

    for part in table.parts:
        label = PART_LABELS[part.level]
        for cfg, cells, failed in zip(part.configs, part.cells, part.failures):
            means = [c.mean if c is not None else math.nan for c in cells]
            texts = [c.format() if c is not None else "n/a" for c in cells]
            body.append([label, str(cfg.train_window), str(cfg.pred_window),
                         *marked(means, texts, CELL_DECIMALS), str(failed)])
        texts = [f"{m:.{MEAN_ROW_DECIMALS}f}" if not math.isnan(m) else "n/a" for m in part.part_means]
        body.append([label, "Mean", "", *marked(part.part_means, texts, MEAN_ROW_DECIMALS), str(sum(part.failures))])
    texts = [f"{m:.{MEAN_ROW_DECIMALS}f}" if not math.isnan(m) else "n/a" for m in table.overall]
    total_failed = sum(sum(p.failures) for p in table.parts)
    body.append(["Overall mean", "", "", *marked(table.overall, texts, MEAN_ROW_DECIMALS), str(total_failed)])
    return header, body


def render_text(table: MeasureTable, title: str = "", highlight: bool = True) -> str:
    header, body = table_rows(table, markdown=False, highlight=highlight)
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = [title] if title else []
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    if highlight:
        lines.append("(+ best, - worst in row)")
    return "\n".join(lines)


def render_markdown(table: MeasureTable, title: str = "") -> str:
    header, body = table_rows(table, markdown=True)
    lines = [f"### {title}", ""] if title else []
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join("---" for _ in header) + "|")
    lines.extend("| " + " | ".join(row) + " |" for row in body)
    lines.append("")
    lines.append("Bold marks the best model in a row, italics the worst.")
    return "\n".join(lines)


def _split_by_metric(records: Sequence[EvaluationRecord]) -> dict[tuple[str, str], list[EvaluationRecord]]:
    out: dict[tuple[str, str], list[EvaluationRecord]] = {}
    for r in records:
        out.setdefault((r.metric_name, r.key.interval.value), []).append(r)
    return dict(sorted(out.items()))


def measure_tables(records: Sequence[EvaluationRecord], measures: Sequence[str] = TABLE_MEASURES) -> list[tuple[str, MeasureTable]]:
    """One table per (metric, interval, measure), titled."""
    out = []
    for (metric, interval), members in _split_by_metric(records).items():
        if not any(r.ok for r in members):
            continue
        for measure in measures:
            title = f"{MEASURE_TITLES[measure]}: {metric} @ {interval}"
            out.append((title, build_table(members, measure)))
    return out


def deployability_rows(records: Sequence[EvaluationRecord]) -> tuple[list[str], list[list[str]]]:
    """Mean normalised training and prediction time per model and part."""
    ok = [r for r in records if r.ok and r.model_kind is not ModelKind.MEAN]
    levels = [lv for lv in AggregationLevel if any(r.key.aggregation_level is lv for r in ok)]
    models = [m for m in ModelKind if any(r.model_kind is m for r in ok)]
    groups = group_records(ok, ("model", "level"))
    header = ["Model"] + [f"train {PART_LABELS[lv]}" for lv in levels] + [f"pred {PART_LABELS[lv]}" for lv in levels]
    body = []
    for m in models:
        row = [DISPLAY_NAMES[m]]
        for attr in ("train_time_per_100", "pred_time_per_100"):
            for lv in levels:
                vals = [getattr(r.timing, attr) for r in groups.get((m, lv), [])]
                vals = [v for v in vals if not math.isnan(v)]
                row.append(f"{math.fsum(vals) / len(vals):.3f}" if vals else "n/a")
        body.append(row)
    return header, body


def correlation_rows(records: Sequence[EvaluationRecord]) -> list[list[str]]:
    rows = []
    for (level, cfg, model, metric), members in sorted(
        group_records(records, ("level", "config", "model", "metric")).items(),
        key=lambda kv: (kv[0][0].value, kv[0][1].train_window, kv[0][1].pred_window, kv[0][2].value, kv[0][3]),
    ):
        try:
            value = f"{correlate_missing(members):.3f}"
        except (ZeroVarianceError, ValueError):
            value = "n/a"
        rows.append([PART_LABELS[level], metric, str(cfg), DISPLAY_NAMES[model], value])
    return rows


def write_metric_chart(values: dict[str, float], out_dir) -> tuple[Path, Path]:
    """Bar chart of model-averaged overall-mean harmonic score per metric (SVG + CSV)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metric_harmonic.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "harmonic"])
        for metric, v in values.items():
            w.writerow([metric, repr(v)])
    names = list(values)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(names) + 2), 4))
    bars = ax.bar(range(len(names)), [values[n] for n in names], color="#4878a8")
    for name, bar in zip(names, bars):
        bar.set_gid(f"bar-{name}")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right")
    ax.set_ylabel("Harmonic-Score (lower is better)")
    fig.tight_layout()
    svg_path = out_dir / "metric_harmonic.svg"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return svg_path, csv_path


def write_report(records: Sequence[EvaluationRecord], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ok = [r for r in records if r.ok]
    parts = ["# Forecasting benchmark report", ""]
    parts.append(f"{len(records)} records, {len(ok)} ok, {len(records) - len(ok)} failed.")
    parts.append("")
    for title, table in measure_tables(records):
        parts.append(render_markdown(table, title))
        parts.append("")
    header, body = deployability_rows(records)
    if body:
        parts += ["### Relative training and prediction times (seconds per 100 datapoints)", ""]
        parts.append("| " + " | ".join(header) + " |")
        parts.append("|" + "|".join("---" for _ in header) + "|")
        parts.extend("| " + " | ".join(r) + " |" for r in body)
        parts.append("")
    rows = correlation_rows(records)
    if rows:
        parts += ["### Correlation of missing ratio with R2-score", ""]
        parts.append("| Part | Metric | W/H | Model | Pearson r |")
        parts.append("|---|---|---|---|---|")
        parts.extend("| " + " | ".join(r) + " |" for r in rows)
        parts.append("")
    chart_values = metric_harmonic_means(records)
    if chart_values:
        svg, csv_path = write_metric_chart(chart_values, out_dir)
        parts += ["### Harmonic-Score per metric (mean over models)", "", f"![per-metric harmonic]({svg.name})",
                  "", f"Values: `{csv_path.name}`", ""]
    path = out_dir / "report.md"
    path.write_text("\n".join(parts))
    return path
