"""One benchmark job: fill, split, scale, window, train, evaluate."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import MetricSeries, missing_ratio
from .evaluation import EvaluationRecord, evaluate_series, failed_record
from .metrics import DEFAULT_EPSILON
from .models import ModelSpec, build, save_checkpoint
from .preprocessing import WindowConfig, make_windows, prepare
from .training import train, write_loss_log

log = logging.getLogger(__name__)


class PartitionAccessError(RuntimeError):
    pass


class GuardedPartition:
    """Holds the test partition; reading it while locked is an error."""

    def __init__(self, values: np.ndarray):
        self._values = np.asarray(values, dtype=np.float64).copy()
        self._values.setflags(write=False)
        self.locked = False
        self.digest = self._hash()

    def _hash(self) -> str:
        return hashlib.sha256(self._values.tobytes()).hexdigest()

    @property
    def values(self) -> np.ndarray:
        if self.locked:
            raise PartitionAccessError("test partition read during training")
        return self._values

    def verify(self) -> None:
        if self._hash() != self.digest:
            raise PartitionAccessError("test partition changed during training")


@dataclass
class JobOutput:
    record: EvaluationRecord
    model: object = None
    report: object = None


def run_job(
    series: MetricSeries,
    cfg: WindowConfig,
    spec: ModelSpec,
    *,
    epsilon: float = DEFAULT_EPSILON,
    job_id: str = "",
    artifact_dir: Path | None = None,
    keep_model: bool = False,
) -> JobOutput:
    """Run one job end to end; any failure becomes a ``failed`` record."""
    try:
        prepared = prepare(series, cfg)
        guard = GuardedPartition(prepared.test)
        train_x, train_y, _ = make_windows(prepared.train, cfg)
        val_x, val_y, _ = make_windows(prepared.val, cfg)
        model = build(spec)
        guard.locked = True
        try:
            report = train(model, (train_x, train_y), (val_x, val_y), spec)
        finally:
            guard.locked = False
        guard.verify()
        record = evaluate_series(
            series, cfg, model, prepared.scaler,
            seed=spec.seed, epsilon=epsilon, train_report=report, job_id=job_id,
        )
        if not all(math.isfinite(v) for v in (record.rmse, record.r2, record.harmonic)):
            raise FloatingPointError("non-finite score")
        if artifact_dir is not None and job_id:
            write_loss_log(report, Path(artifact_dir) / "losses" / f"{job_id}.csv")
            if model.trainable:
                save_checkpoint(model, Path(artifact_dir) / "checkpoints" / f"{job_id}.pt")
        return JobOutput(record, model if keep_model else None, report)
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        log.warning("job %s failed: %s", job_id or series.key.series_id, exc)
        record = failed_record(
            series.key, series.metric_name, cfg, spec.kind, spec.seed,
            f"{type(exc).__name__}: {exc}", missing_ratio(series), job_id,
        )
        return JobOutput(record)
