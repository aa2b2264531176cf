"""Experiment configuration, the job matrix and its parallel execution."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import platform
import shutil
import subprocess
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np
import torch
import yaml

from . import __version__
from .data_model import (
    AggregationLevel,
    DatasetLayout,
    FixtureSpec,
    Interval,
    MetricSeries,
    SeriesKey,
    catalog_metrics,
    generate_fixture,
    list_series_ids,
    load_series,
    write_series,
)
from .evaluation import EvaluationRecord, Status, read_records, write_records
from .metrics import DEFAULT_EPSILON
from .models import ALL_KINDS, ModelKind, ModelSpec, default_spec
from .pipeline import run_job
from .preprocessing import BENCHMARK_WINDOWS, WindowConfig

log = logging.getLogger(__name__)

DATA_ROOT_ENV = "TRAFFIC_BENCH_DATA"
RECORDS_FILE = "records.csv"
MANIFEST_FILE = "manifest.json"
SHARD_DIR = "shards"


class ConfigError(ValueError):
    pass


@dataclass
class ModelEntry:
    kind: ModelKind
    overrides: dict[str, Any] = field(default_factory=dict)

    def spec(self, cfg: WindowConfig, seed: int, shared: Mapping[str, Any]) -> ModelSpec:
        merged = {**shared, **self.overrides}
        if self.kind is ModelKind.MEAN:
            merged = {}
        if "conv_channels" in merged:
            merged["conv_channels"] = tuple(merged["conv_channels"])
        return default_spec(self.kind, cfg.train_window, cfg.pred_window, seed=seed, **merged)


@dataclass
class ExperimentConfig:
    """Everything a run needs.  Loaded from YAML; CLI flags override keys.

    Keys: ``dataset_root``, ``parts``, ``interval``, ``metrics`` (list or
    ``all``), ``windows`` (``["24/1", ...]``), ``models`` (names or
    ``{kind: ..., <ModelSpec field>: ...}`` mappings), ``model_overrides``
    (applied to every trainable model), ``seeds``, ``sample``,
    ``sample_seed``, ``output_dir``, ``parallelism``, ``epsilon``,
    ``fixture_mode``, ``fixtures`` (fixture spec mapping), ``layout``,
    ``worker_isolation``, ``save_artifacts``.
    """

    dataset_root: Path | None = None
    parts: list[AggregationLevel] | None = None
    interval: Interval = Interval.HOUR
    metrics: list[str] | str = field(default_factory=lambda: ["n_bytes"])
    window_configs: list[WindowConfig] = field(default_factory=lambda: list(BENCHMARK_WINDOWS))
    models: list[ModelEntry] = field(default_factory=lambda: [ModelEntry(k) for k in ALL_KINDS])
    model_overrides: dict[str, Any] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    series_sample: int | None = None
    sample_seed: int = 0
    output_dir: Path = Path("runs/latest")
    parallelism: int = 1
    epsilon: float = DEFAULT_EPSILON
    fixture_mode: bool = False
    fixtures: dict | None = None
    layout: DatasetLayout = field(default_factory=DatasetLayout)
    worker_isolation: bool = False
    save_artifacts: bool = False

    def __post_init__(self):
        if not self.window_configs:
            raise ConfigError("window_configs must not be empty")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.series_sample is not None and self.series_sample < 1:
            raise ConfigError("sample must be positive")

    def metric_names(self) -> list[str]:
        if self.metrics == "all" or self.metrics == ["all"]:
            return [e.name for e in catalog_metrics(self.interval)]
        names = list(self.metrics)
        known = {e.name for e in catalog_metrics(self.interval)}
        unknown = [m for m in names if m not in known]
        if unknown:
            raise ConfigError(f"unknown metrics for {self.interval.value}: {unknown}")
        return names

    def snapshot(self) -> dict:
        return {
            "dataset_root": str(self.dataset_root) if self.dataset_root else None,
            "parts": [p.value for p in self.parts] if self.parts else None,
            "interval": self.interval.value,
            "metrics": self.metrics,
            "windows": [str(c) for c in self.window_configs],
            "models": [{"kind": m.kind.value, **m.overrides} for m in self.models],
            "model_overrides": self.model_overrides,
            "seeds": self.seeds,
            "sample": self.series_sample,
            "sample_seed": self.sample_seed,
            "output_dir": str(self.output_dir),
            "parallelism": self.parallelism,
            "epsilon": self.epsilon,
            "fixture_mode": self.fixture_mode,
            "fixtures": self.fixtures,
            "layout": dataclasses.asdict(self.layout),
            "worker_isolation": self.worker_isolation,
            "save_artifacts": self.save_artifacts,
        }


def _parse_models(raw) -> list[ModelEntry]:
    if isinstance(raw, str):
        raw = [s for s in raw.split(",") if s.strip()]
    entries = []
    for item in raw:
        if isinstance(item, str):
            entries.append(ModelEntry(ModelKind(item.strip())))
        elif isinstance(item, Mapping):
            item = dict(item)
            kind = ModelKind(item.pop("kind"))
            entries.append(ModelEntry(kind, item))
        else:
            raise ConfigError(f"bad model entry {item!r}")
    return entries


def _parse_windows(raw) -> list[WindowConfig]:
    if isinstance(raw, str):
        raw = _split_list(raw)
    out = []
    for item in raw:
        if isinstance(item, WindowConfig):
            out.append(item)
        elif isinstance(item, str):
            out.append(WindowConfig.parse(item.strip()))
        else:
            out.append(WindowConfig(int(item[0]), int(item[1])))
    return out


def _split_list(raw) -> list[str]:
    if isinstance(raw, str):
        return [s.strip() for s in raw.split(",") if s.strip()]
    return [str(s) for s in raw]


def config_from_mapping(d: Mapping[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    """Build a config from a parsed YAML mapping; unknown keys are an error."""
    d = dict(d or {})
    allowed = {
        "dataset_root", "parts", "interval", "metrics", "windows", "models", "model_overrides",
        "seeds", "sample", "sample_seed", "output_dir", "parallelism", "epsilon", "fixture_mode",
        "fixtures", "layout", "worker_isolation", "save_artifacts",
    }
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base_dir = base_dir or Path.cwd()

    def path(v):
        p = Path(v).expanduser()
        return p if p.is_absolute() else base_dir / p

    kwargs: dict[str, Any] = {}
    try:
        if d.get("dataset_root"):
            kwargs["dataset_root"] = path(d["dataset_root"])
        if d.get("parts"):
            kwargs["parts"] = [AggregationLevel(p) for p in _split_list(d["parts"])]
        if "interval" in d:
            kwargs["interval"] = Interval(str(d["interval"]))
        if "metrics" in d:
            m = d["metrics"]
            kwargs["metrics"] = "all" if m == "all" else _split_list(m)
        if "windows" in d:
            kwargs["window_configs"] = _parse_windows(d["windows"])
        if "models" in d:
            kwargs["models"] = _parse_models(d["models"])
        if "model_overrides" in d:
            kwargs["model_overrides"] = dict(d["model_overrides"] or {})
        if "seeds" in d:
            s = d["seeds"]
            kwargs["seeds"] = [int(s)] if isinstance(s, int) else [int(x) for x in _split_list(s)]
        if d.get("sample") is not None:
            kwargs["series_sample"] = int(d["sample"])
        for key, conv in (("sample_seed", int), ("parallelism", int), ("epsilon", float),
                          ("fixture_mode", bool), ("worker_isolation", bool), ("save_artifacts", bool)):
            if key in d:
                kwargs[key] = conv(d[key])
        if "output_dir" in d:
            kwargs["output_dir"] = path(d["output_dir"])
        if "fixtures" in d:
            kwargs["fixtures"] = d["fixtures"]
        if "layout" in d:
            kwargs["layout"] = DatasetLayout.from_dict(d["layout"])
        config = ExperimentConfig(**kwargs)
        for m in config.models:
            m.spec(config.window_configs[0], 0, config.model_overrides)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return config


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read a YAML config file (optional), apply overrides and the data-root env var."""
    data: dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.parent
    if os.environ.get(DATA_ROOT_ENV):
        data["dataset_root"] = str(Path(os.environ[DATA_ROOT_ENV]).expanduser().resolve())
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    return config_from_mapping(data, base)


# ---------------------------------------------------------------- fixtures

DEFAULT_FIXTURES = {
    "defaults": {
        "length": 2688,
        "seasonal_period": 24,
        "amplitude": 1000.0,
        "noise_std": 50.0,
        "trend_slope": 0.0,
        "interval": "1h",
        "metrics": ["n_bytes"],
    },
    "series": [
        {"level": "institutions", "series_id": "inst_000", "seed": 11, "missing_ratio": 0.0},
        {"level": "institutions", "series_id": "inst_001", "seed": 12, "missing_ratio": 0.05},
        {"level": "institutions", "series_id": "inst_002", "seed": 13, "missing_ratio": 0.1},
    ],
}

_FIXTURE_FIELDS = {f.name for f in dataclasses.fields(FixtureSpec)}


def fixture_series(fixture_doc: Mapping) -> list[MetricSeries]:
    """Expand a fixture document into series; metric ``i`` of an entry uses seed ``seed + i``."""
    defaults = dict(fixture_doc.get("defaults") or {})
    entries = fixture_doc.get("series") or []
    if not entries:
        raise ConfigError("fixture document lists no series")
    out = []
    for entry in entries:
        merged = {**defaults, **dict(entry)}
        try:
            key = SeriesKey(
                AggregationLevel(merged.pop("level", "institutions")),
                str(merged.pop("series_id")),
                Interval(str(merged.pop("interval", "1h"))),
            )
            metrics = _split_list(merged.pop("metrics", ["n_bytes"]))
            start = int(merged.pop("start", 1696809600))
            params = {k: merged.pop(k) for k in list(merged) if k in _FIXTURE_FIELDS}
            if merged:
                raise ConfigError(f"unknown fixture keys {sorted(merged)}")
            base_seed = int(params.pop("seed", 0))
            for i, metric in enumerate(metrics):
                spec = FixtureSpec(seed=base_seed + i, **params)
                out.append(generate_fixture(spec, key, metric, start))
        except ConfigError:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad fixture entry {entry!r}: {exc}") from exc
    return out


def write_fixture_tree(fixture_doc: Mapping, out_dir, layout: DatasetLayout | None = None) -> list[Path]:
    return write_series(out_dir, fixture_series(fixture_doc), layout)


def load_fixture_doc(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"fixture spec file not found: {path}")
    doc = yaml.safe_load(path.read_text()) or {}
    if isinstance(doc, list):
        doc = {"series": doc}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping or list of fixture entries")
    return doc


# ---------------------------------------------------------------- job matrix

@dataclass(frozen=True)
class Job:
    job_id: str
    series: MetricSeries
    cfg: WindowConfig
    spec: ModelSpec
    order: int


def job_id_for(key: SeriesKey, metric: str, cfg: WindowConfig, spec: ModelSpec, epsilon: float) -> str:
    canonical = json.dumps(
        {
            "level": key.aggregation_level.value,
            "interval": key.interval.value,
            "series": key.series_id,
            "metric": metric,
            "window": [cfg.train_window, cfg.pred_window],
            "spec": spec.to_dict(),
            "epsilon": epsilon,
        },
        sort_keys=True,
    )
    return hashlib.sha1(canonical.encode()).hexdigest()[:16]


def resolve_dataset(config: ExperimentConfig) -> Path:
    if config.fixture_mode:
        root = Path(config.output_dir) / "fixtures"
        if root.exists():
            shutil.rmtree(root)
        write_fixture_tree(config.fixtures or DEFAULT_FIXTURES, root, config.layout)
        return root
    if config.dataset_root is None:
        raise ConfigError(f"no dataset_root given (config key, --data or ${DATA_ROOT_ENV})")
    if not Path(config.dataset_root).exists():
        raise ConfigError(f"dataset root not found: {config.dataset_root}")
    return Path(config.dataset_root)


def present_parts(root: Path, config: ExperimentConfig) -> list[AggregationLevel]:
    if config.parts:
        return list(config.parts)
    return [lv for lv in AggregationLevel if config.layout.series_dir(root, lv, config.interval).is_dir()]


def select_series_ids(root: Path, level: AggregationLevel, config: ExperimentConfig) -> list[str]:
    ids = list_series_ids(root, level, config.interval, config.layout)
    if config.series_sample is not None:
        if config.series_sample > len(ids):
            raise ConfigError(f"sample of {config.series_sample} exceeds {len(ids)} {level.value} series")
        rng = np.random.default_rng(config.sample_seed)
        ids = sorted(rng.choice(ids, size=config.series_sample, replace=False).tolist())
    return ids


def enumerate_jobs(config: ExperimentConfig, root: Path) -> list[Job]:
    """parts x metrics x configs x models x series x seeds, in canonical order."""
    jobs: list[Job] = []
    metrics = config.metric_names()
    for level in present_parts(root, config):
        ids = select_series_ids(root, level, config)
        for metric in metrics:
            series = load_series(root, level, config.interval, metric, ids, config.layout)
            for cfg in config.window_configs:
                for entry in config.models:
                    for s in series:
                        for seed in config.seeds:
                            spec = entry.spec(cfg, seed, config.model_overrides)
                            jid = job_id_for(s.key, metric, cfg, spec, config.epsilon)
                            jobs.append(Job(jid, s, cfg, spec, len(jobs)))
    return jobs


# ---------------------------------------------------------------- execution

_SHARD_PATH: Path | None = None


def _worker_init(shard_dir: str) -> None:
    global _SHARD_PATH
    torch.set_num_threads(1)
    _SHARD_PATH = Path(shard_dir) / f"worker-{os.getpid()}.csv"


def _execute(job: Job, epsilon: float, artifact_dir: str | None) -> EvaluationRecord:
    out = run_job(
        job.series, job.cfg, job.spec, epsilon=epsilon, job_id=job.job_id,
        artifact_dir=Path(artifact_dir) if artifact_dir else None,
    )
    write_records([out.record], _SHARD_PATH, append=True)
    return out.record


def completed_records(shard_dir: Path) -> dict[str, EvaluationRecord]:
    done: dict[str, EvaluationRecord] = {}
    if not shard_dir.is_dir():
        return done
    for shard in sorted(shard_dir.glob("*.csv")):
        for r in read_records(shard):
            done.setdefault(r.job_id, r)
    return done


def _code_version() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
            cwd=Path(__file__).parent, timeout=5,
        )
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunResult:
    records: list[EvaluationRecord]
    manifest: dict
    records_path: Path
    complete: bool


def run_experiment(config: ExperimentConfig, resume: bool = False, max_jobs: int | None = None) -> RunResult:
    """Execute the job matrix and merge worker shards into ``records.csv``.

    ``max_jobs`` stops after that many newly executed jobs, leaving a partial
    run that ``resume=True`` completes.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shard_dir = out_dir / SHARD_DIR
    if not resume and shard_dir.exists():
        shutil.rmtree(shard_dir)
    shard_dir.mkdir(exist_ok=True)
    started = datetime.now(timezone.utc)

    root = resolve_dataset(config)
    jobs = enumerate_jobs(config, root)
    done = completed_records(shard_dir)
    pending = [j for j in jobs if j.job_id not in done]
    if max_jobs is not None:
        pending = pending[:max_jobs]
    log.info("%d jobs, %d already complete, %d to run", len(jobs), len(jobs) - len(pending), len(pending))
    artifact_dir = str(out_dir / "artifacts") if config.save_artifacts else None

    if config.parallelism == 1 or len(pending) <= 1:
        threads = torch.get_num_threads()
        _worker_init(str(shard_dir))
        try:
            for job in pending:
                _execute(job, config.epsilon, artifact_dir)
        finally:
            torch.set_num_threads(threads)
    else:
        with ProcessPoolExecutor(
            max_workers=config.parallelism, initializer=_worker_init, initargs=(str(shard_dir),)
        ) as pool:
            futures = [pool.submit(_execute, j, config.epsilon, artifact_dir) for j in pending]
            for fut in as_completed(futures):
                fut.result()

    done = completed_records(shard_dir)
    records = [done[j.job_id] for j in jobs if j.job_id in done]
    complete = len(records) == len(jobs)
    records_path = write_records(records, out_dir / RECORDS_FILE)
    status_counts = {s.value: sum(1 for r in records if r.status is s) for s in Status}
    manifest = {
        "config": config.snapshot(),
        "dataset_root": str(root),
        "code_version": _code_version(),
        "start_time": started.isoformat(),
        "end_time": datetime.now(timezone.utc).isoformat(),
        "job_count": len(jobs),
        "record_count": len(records),
        "complete": complete,
        "status_counts": status_counts,
        "job_ids": [j.job_id for j in jobs],
        "environment": {
            "cpu_count": os.cpu_count(),
            "worker_isolation": config.worker_isolation,
            "timings_comparable": config.worker_isolation,
            "python": platform.python_version(),
            "torch": torch.__version__,
            "numpy": np.__version__,
            "platform": platform.platform(),
        },
    }
    (out_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n")
    return RunResult(records, manifest, records_path, complete)


def iter_records_paths(path) -> Iterator[Path]:
    path = Path(path)
    if path.is_dir():
        merged = path / RECORDS_FILE
        if merged.exists():
            yield merged
            return
        yield from sorted((path / SHARD_DIR).glob("*.csv"))
    else:
        yield path


def load_records(path) -> list[EvaluationRecord]:
    """Records from a file, a run directory, or its worker shards (deduplicated)."""
    seen: dict[str, EvaluationRecord] = {}
    anonymous: list[EvaluationRecord] = []
    for p in iter_records_paths(path):
        for r in read_records(p):
            if r.job_id:
                seen.setdefault(r.job_id, r)
            else:
                anonymous.append(r)
    return list(seen.values()) + anonymous


def sorted_records(records: Iterable[EvaluationRecord]) -> list[EvaluationRecord]:
    return sorted(
        records,
        key=lambda r: (r.key.aggregation_level.value, r.metric_name, r.config.train_window,
                       r.config.pred_window, r.model_kind.value, r.key.series_id, r.seed),
    )
