"""Batch trials over random topologies, aggregation and persistence.

Trial ``i`` of every method draws from the counter-based stream
``Philox(key=seed + i)``, so a given topology is shared across methods and
adding trials never changes the earlier ones.  All output bytes are a
function of the configuration alone.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .simulator import METHODS, TrialConfig, TrialRecord, run_trial

log = logging.getLogger(__name__)

ABORT_TOLERANCE = 0.05
TRIALS_HEADER = ("trial", "flop", "method", "z", "alpha_k", "error", "cum_ack_ratio")
SUMMARY_HEADER = ("method", "flop", "mean_error")
ALPHA_HEADER = ("method", "alpha_sim")

_TRIAL_FIELDS = tuple(f.name for f in dataclasses.fields(TrialConfig) if f.name != "method")
# Keys that change how a run executes but not what it computes.
_EXECUTION_KEYS = ("out_dir", "workers")


def fmt(x) -> str:
    """Serialise a number with 12 significant digits."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.12g}"


@dataclass(frozen=True)
class ExperimentConfig:
    """Every :class:`TrialConfig` setting plus the batch settings.

    ``trial`` carries the per-trial settings; its ``seed`` is the base seed
    and its ``method`` is ignored in favour of ``methods``.
    """

    trial: TrialConfig = field(default_factory=TrialConfig)
    n_trials: int = 100
    out_dir: str = "results"
    methods: tuple = ("ep",)
    workers: int = 1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")

    @property
    def seed(self) -> int:
        return self.trial.seed

    @property
    def n_flops(self) -> int:
        return self.trial.n_flops

    def trial_config(self, method: str, index: int) -> TrialConfig:
        return dataclasses.replace(self.trial, method=method, seed=self.trial.seed + index)

    def to_mapping(self) -> dict:
        """Flat ``key -> value`` view, in a fixed order."""
        out = {name: getattr(self.trial, name) for name in _TRIAL_FIELDS}
        out.update(n_trials=self.n_trials, methods=",".join(self.methods),
                   out_dir=self.out_dir, workers=self.workers)
        return out

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from flat string or typed values; unknown keys are an error."""
        trial_types = {f.name: f.type for f in dataclasses.fields(TrialConfig)}
        trial_kw, kw = {}, {}
        for key, value in values.items():
            if key in ("method", "methods"):
                if isinstance(value, str):
                    value = tuple(v.strip() for v in value.split(",") if v.strip())
                kw["methods"] = tuple(value)
            elif key in _TRIAL_FIELDS:
                trial_kw[key] = _coerce(value, trial_types[key], key)
            elif key in ("n_trials", "workers"):
                kw[key] = _coerce(value, "int", key)
            elif key == "out_dir":
                kw[key] = str(value)
            else:
                raise ValueError(f"unknown configuration key {key!r}")
        return cls(TrialConfig(**trial_kw), **kw)

    def with_overrides(self, **values) -> "ExperimentConfig":
        merged = self.to_mapping()
        merged.update({k: v for k, v in values.items() if v is not None})
        return ExperimentConfig.from_mapping(merged)

    def result_lines(self) -> list:
        """``key=value`` lines for every setting that affects results."""
        return [f"{k}={_show(v)}" for k, v in self.to_mapping().items()
                if k not in _EXECUTION_KEYS]

    def config_hash(self) -> str:
        return hashlib.sha256("\n".join(self.result_lines()).encode()).hexdigest()[:16]


def _coerce(value, typ, key):
    if not isinstance(value, str):
        return value
    text = value.strip()
    typ = str(typ)
    try:
        if text.lower() == "none" and "None" in typ:
            return None
        if typ.startswith("int"):
            return int(text)
        if typ.startswith("float"):
            return float(text)
        return text
    except ValueError:
        raise ValueError(f"bad value {value!r} for {key}") from None


def _show(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return fmt(v)
    return str(v)


def parse_config_text(text: str) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        values[key] = value
    return values


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return ExperimentConfig.from_mapping(parse_config_text(text))


@dataclass(eq=False)
class AggregateResult:
    """Mean curves and protection ratios per method over the completed trials."""

    config: ExperimentConfig
    records: dict
    curves: dict
    alpha_sim: dict
    n_completed: dict
    n_aborted: dict
    config_hash: str
    wall_time: float = 0.0

    @property
    def methods(self) -> tuple:
        return self.config.methods

    @property
    def complete(self) -> bool:
        n = self.config.n_trials
        return all(self.n_aborted[m] <= ABORT_TOLERANCE * n for m in self.methods)


def trial_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based random stream for trial ``index``."""
    return np.random.Generator(np.random.Philox(key=seed + index))


def _run_one(cfg: TrialConfig) -> TrialRecord:
    # cfg.seed already holds base seed + trial index.
    return run_trial(cfg, trial_stream(cfg.seed, 0))


def aggregate(cfg: ExperimentConfig, records: dict, wall_time: float = 0.0) -> AggregateResult:
    """Reduce per-trial records, in trial order, to mean curves."""
    curves, alpha_sim, n_completed, n_aborted = {}, {}, {}, {}
    for method in cfg.methods:
        done = [r for r in records[method] if not r.aborted]
        n_completed[method] = len(done)
        n_aborted[method] = len(records[method]) - len(done)
        if done:
            curves[method] = np.mean([r.error for r in done], axis=0)
            alpha_sim[method] = float(np.mean([r.alpha_sim for r in done]))
        else:
            curves[method] = np.full(cfg.n_flops, np.nan)
            alpha_sim[method] = float("nan")
    return AggregateResult(cfg, records, curves, alpha_sim, n_completed, n_aborted,
                           cfg.config_hash(), wall_time)


def run_experiment(cfg: ExperimentConfig) -> AggregateResult:
    """Run ``n_trials`` trials per method and aggregate them.

    Trials are distributed over ``cfg.workers`` processes; results are
    reduced in trial-index order, so the worker count never changes the
    outcome.
    """
    start = time.perf_counter()
    tasks = [cfg.trial_config(m, i) for m in cfg.methods for i in range(cfg.n_trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            out = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))))
    else:
        out = [_run_one(t) for t in tasks]
    records = {m: [] for m in cfg.methods}
    for tc, rec in zip(tasks, out):
        records[tc.method].append(rec)
        if rec.aborted:
            log.warning("trial %d (%s) aborted: %s", tc.seed - cfg.seed, tc.method,
                        rec.abort_reason)
    res = aggregate(cfg, records, time.perf_counter() - start)
    log.info("experiment %s finished in %.1f s", res.config_hash, res.wall_time)
    return res


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trials_rows(res: AggregateResult):
    for method in res.methods:
        for index, rec in enumerate(res.records[method]):
            for t in range(rec.n_rows):
                yield (index, t, method, rec.z[t], fmt(rec.alpha_k[t]),
                       fmt(rec.error[t]), fmt(rec.cum_ack_ratio[t]))


def summary_text(res: AggregateResult) -> str:
    rows = [(m, t, fmt(v)) for m in res.methods for t, v in enumerate(res.curves[m])]
    text = _csv_text(SUMMARY_HEADER, rows)
    return text + _csv_text(ALPHA_HEADER, [(m, fmt(res.alpha_sim[m])) for m in res.methods])


def config_text(res: AggregateResult) -> str:
    lines = res.config.result_lines()
    lines += ["", "# run metadata", f"config_hash={res.config_hash}",
              f"complete={str(res.complete).lower()}"]
    for m in res.methods:
        lines.append(f"completed.{m}={res.n_completed[m]}")
        lines.append(f"aborted.{m}={res.n_aborted[m]}")
    return "\n".join(lines) + "\n"


def write_outputs(res: AggregateResult, directory=None) -> dict:
    """Write ``trials.csv``, ``summary.csv`` and ``config.txt``.

    Returns the written paths by name.  Failures raise :class:`OSError`
    naming the offending path.
    """
    directory = Path(directory if directory is not None else res.config.out_dir)
    contents = {
        "trials.csv": _csv_text(TRIALS_HEADER, trials_rows(res)),
        "summary.csv": summary_text(res),
        "config.txt": config_text(res),
    }
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {directory}: {exc.strerror or exc}") from exc
    paths = {}
    for name, text in contents.items():
        path = directory / name
        try:
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_text(text)
            os.replace(tmp, path)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        paths[name] = path
    return paths


def read_summary(path):
    """Parse ``summary.csv`` into ``(curves, alpha_sim)`` dictionaries."""
    curves, alpha_sim = {}, {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader)) != SUMMARY_HEADER:
            raise ValueError(f"{path}: unexpected summary header")
        in_alpha = False
        for row in reader:
            if tuple(row) == ALPHA_HEADER:
                in_alpha = True
            elif in_alpha:
                alpha_sim[row[0]] = float(row[1])
            else:
                curves.setdefault(row[0], []).append((int(row[1]), float(row[2])))
    return ({m: np.array([v for _, v in sorted(pts)]) for m, pts in curves.items()},
            alpha_sim)


def read_trials(path) -> dict:
    """Parse ``trials.csv`` into ``{(method, trial): {"z": ..., "error": ...}}``."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRIALS_HEADER:
            raise ValueError(f"{path}: unexpected trials header")
        for row in reader:
            d = out.setdefault((row["method"], int(row["trial"])),
                               {k: [] for k in ("z", "alpha_k", "error", "cum_ack_ratio")})
            d["z"].append(int(row["z"]))
            for k in ("alpha_k", "error", "cum_ack_ratio"):
                d[k].append(float(row[k]))
    return {k: {c: np.array(v) for c, v in d.items()} for k, d in out.items()}


__all__ = [
    "ABORT_TOLERANCE", "AggregateResult", "ExperimentConfig", "aggregate", "load_config",
    "parse_config_text", "read_summary", "read_trials", "run_experiment", "trial_stream",
    "write_outputs",
]
