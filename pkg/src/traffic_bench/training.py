"""Mini-batch Adam/MSE training with per-epoch loss tracking and timing."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .models import Forecaster, ModelSpec

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


class EmptyTrainingSetError(TrainingError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, epoch: int, batch: int):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


@dataclass
class TrainReport:
    train_loss_per_epoch: list[float] = field(default_factory=list)
    val_loss_per_epoch: list[float] = field(default_factory=list)
    wall_clock_train_s: float = 0.0
    n_train_windows: int = 0
    n_val_windows: int = 0
    seed: int = 0


@dataclass(frozen=True)
class TimingRecord:
    train_time_per_100: float
    pred_time_per_100: float


def _as_arrays(windows) -> tuple[np.ndarray, np.ndarray]:
    if windows is None:
        return np.empty((0, 0)), np.empty((0, 0))
    inputs, targets = windows[0], windows[1]
    return np.asarray(inputs, dtype=np.float64), np.asarray(targets, dtype=np.float64)


def train(model: Forecaster, train_windows, val_windows=None, spec: ModelSpec | None = None) -> TrainReport:
    """Fit ``model`` in place and return the per-epoch report.

    ``train_windows`` and ``val_windows`` are ``(inputs, targets)`` pairs as
    produced by ``make_windows``.  The final-epoch parameters are kept.
    """
    spec = spec or model.spec
    x_train, y_train = _as_arrays(train_windows)
    x_val, y_val = _as_arrays(val_windows)
    n, n_val = len(x_train), len(x_val)
    if n == 0:
        raise EmptyTrainingSetError("no training windows")
    report = TrainReport(n_train_windows=n, n_val_windows=n_val, seed=spec.seed)
    start = time.perf_counter()
    if not model.trainable:
        report.wall_clock_train_s = time.perf_counter() - start
        return report

    module = model.module
    dtype = next(module.parameters()).dtype
    torch.manual_seed(spec.seed)
    rng = np.random.default_rng(spec.seed)
    optimizer = torch.optim.Adam(
        model.trainable_parameters(), lr=spec.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    xt = torch.as_tensor(x_train, dtype=dtype)
    yt = torch.as_tensor(y_train, dtype=dtype)
    xv = torch.as_tensor(x_val, dtype=dtype)
    yv = torch.as_tensor(y_val, dtype=dtype)

    for epoch in range(spec.epochs):
        module.train()
        order = torch.as_tensor(rng.permutation(n))
        total = 0.0
        for b, lo in enumerate(range(0, n, spec.batch_size)):
            idx = order[lo : lo + spec.batch_size]
            optimizer.zero_grad()
            loss = torch.mean((module(xt[idx]) - yt[idx]) ** 2)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(epoch, b)
            loss.backward()
            optimizer.step()
            total += value * len(idx)
        report.train_loss_per_epoch.append(total / n)
        if n_val:
            module.eval()
            with torch.no_grad():
                report.val_loss_per_epoch.append(torch.mean((module(xv) - yv) ** 2).item())
        else:
            report.val_loss_per_epoch.append(math.nan)
        log.debug("%s epoch %d loss %.6g", spec.kind.value, epoch, report.train_loss_per_epoch[-1])

    module.eval()
    report.wall_clock_train_s = time.perf_counter() - start
    return report


def measure_times(report: TrainReport, n_train_points: int, pred_elapsed_s: float, n_pred_points: int) -> TimingRecord:
    """Seconds per 100 training datapoints and per 100 predicted values."""
    if n_train_points <= 0 or n_pred_points <= 0:
        raise ValueError("timing normalisation needs positive datapoint counts")
    return TimingRecord(
        report.wall_clock_train_s / n_train_points * 100.0,
        pred_elapsed_s / n_pred_points * 100.0,
    )


def write_loss_log(report: TrainReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, va) in enumerate(zip(report.train_loss_per_epoch, report.val_loss_per_epoch)):
            w.writerow([i, repr(tr), repr(va)])
    return path
