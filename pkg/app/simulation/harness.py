from __future__ import annotations

import csv
import itertools
import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.settings import worker_threads
from app.simulation.engine import active_slot_count, energy_by_node, run_execution
from app.simulation.errors import ConfigError, DegenerateInputError
from app.simulation.models import ExecutionConfig, ExecutionTrace
from app.simulation.protocols import BackoffSchedule, backoff_prob

logger = logging.getLogger("contention-bench")

CSV_COLUMNS = ["protocol", "adversary", "n", "d", "c", "seed", "active_slots", "max_energy", "terminated"]
CONFORMING_SPREAD = 3.0


class TrialSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: ExecutionConfig
    seed: int
    active_slots: int = 0
    max_energy: int = 0
    energies: list[int] = Field(default_factory=list)
    success_slots: list[int] = Field(default_factory=list)
    terminated: bool = False
    jams_used: int = 0
    error: str | None = None


class FitResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str
    metric: str
    constant: float
    envelope: float
    max_ratio: float
    residuals: list[float]
    spread: float
    conforming: bool


class SweepRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    protocol: str
    adversary: str
    n: int
    d: int
    c: float
    seed: int
    active_slots: int
    max_energy: int
    terminated: bool


class SweepReport(BaseModel):
    rows: list[SweepRow]
    fits: dict[str, FitResult] = Field(default_factory=dict)
    failures: int = 0


# ---------------------------------------------------------------- trials


def summarize_trace(trace: ExecutionTrace) -> TrialSummary:
    energy = energy_by_node(trace)
    normal = [energy.get(node, 0) for node in trace.normal_nodes]
    return TrialSummary(
        config=trace.config,
        seed=trace.seed,
        active_slots=active_slot_count(trace),
        max_energy=max(normal, default=0),
        energies=normal,
        success_slots=trace.success_slots,
        terminated=trace.terminated,
        jams_used=trace.jams_used,
    )


def _run_one(config: ExecutionConfig) -> TrialSummary:
    try:
        return summarize_trace(run_execution(config))
    except Exception as e:
        logger.exception("Trial failed protocol=%s adversary=%s seed=%s", config.protocol, config.adversary, config.seed)
        return TrialSummary(config=config, seed=config.seed, error=f"{type(e).__name__}: {e}")


def run_trials(
    config: ExecutionConfig,
    trials: int,
    seed_base: int,
    workers: int | None = None,
) -> list[TrialSummary]:
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    configs = [
        config.model_copy(update={"seed": seed_base + k, "record": "aggregate"})
        for k in range(trials)
    ]
    workers = max(1, min(workers or worker_threads(), trials))
    if workers == 1:
        results = [_run_one(cfg) for cfg in configs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, configs))
    return sorted(results, key=lambda s: s.seed)


# ---------------------------------------------------------------- fitting


def _log2_or_zero(x: float) -> float:
    return math.log2(x) if x >= 1 else 0.0


# model id -> (bound, measured SweepRow column)
_MODELS: dict[str, tuple[Callable[[int, int], float], str]] = {
    "n_log_n_plus_d": (lambda n, d: n * _log2_or_zero(n) + d, "active_slots"),
    "n_plus_d": (lambda n, d: float(n + d), "active_slots"),
    "log2_sq_n_plus_log2_sq_d": (lambda n, d: _log2_or_zero(n) ** 2 + _log2_or_zero(d) ** 2, "max_energy"),
}


def model_ids() -> list[str]:
    return list(_MODELS)


def _lookup_model(model: str) -> tuple[Callable[[int, int], float], str]:
    entry = _MODELS.get(model)
    if entry is None:
        raise ConfigError(f"Unknown model: {model} (known: {', '.join(_MODELS)})")
    return entry


def model_value(model: str, n: int, d: int) -> float:
    fn, _ = _lookup_model(model)
    return fn(n, d)


def model_metric(model: str) -> str:
    return _lookup_model(model)[1]


def group_envelopes(points: Iterable[tuple[int, int, float]]) -> dict[tuple[int, int], float]:
    out: dict[tuple[int, int], float] = {}
    for n, d, measured in points:
        key = (int(n), int(d))
        out[key] = max(out.get(key, float("-inf")), float(measured))
    return out


def fit_constant(
    points: Sequence[tuple[int, int, float]],
    model: str,
    spread_bound: float = CONFORMING_SPREAD,
) -> FitResult:
    if len(points) < 3:
        raise DegenerateInputError(f"fit needs at least 3 points, got {len(points)}")
    f = np.array([model_value(model, n, d) for n, d, _ in points], dtype=np.float64)
    if np.any(f <= 0):
        bad = [(n, d) for (n, d, _), v in zip(points, f) if v <= 0]
        raise DegenerateInputError(f"model {model} is 0 at {bad[:3]}")
    measured = np.array([m for _, _, m in points], dtype=np.float64)

    (constant,), *_ = np.linalg.lstsq(f[:, None], measured, rcond=None)
    constant = float(constant)
    ratios = measured / f
    envelope = float(ratios.max())
    max_ratio = float((measured / (constant * f)).max()) if constant > 0 else math.inf
    residuals = (measured - constant * f).tolist()

    per_point = [m / model_value(model, n, d) for (n, d), m in group_envelopes(points).items()]
    median = statistics.median(per_point)
    spread = max(per_point) / median if median > 0 else math.inf
    return FitResult(
        model=model,
        metric=model_metric(model),
        constant=constant,
        envelope=envelope,
        max_ratio=max_ratio,
        residuals=residuals,
        spread=spread,
        conforming=spread <= spread_bound,
    )


# ---------------------------------------------------------------- oracles


def front_jam_energy_oracle(schedule: BackoffSchedule, d: int) -> float:
    """Expected sends of a lone node whose first d slots are all jammed."""
    if d < 1:
        raise DegenerateInputError("front-jam oracle needs d >= 1")
    return float(np.sum(backoff_prob(schedule, np.arange(1, d + 1))))


# ---------------------------------------------------------------- sweeps


def _row(summary: TrialSummary) -> SweepRow:
    cfg = summary.config
    return SweepRow(
        protocol=cfg.protocol,
        adversary=cfg.adversary,
        n=cfg.n,
        d=cfg.d,
        c=cfg.c,
        seed=summary.seed,
        active_slots=summary.active_slots,
        max_energy=summary.max_energy,
        terminated=summary.terminated,
    )


def fit_rows(rows: Sequence[SweepRow], models: Sequence[str] | None = None) -> dict[str, FitResult]:
    fits: dict[str, FitResult] = {}
    done = [r for r in rows if r.terminated]
    for model in models or model_ids():
        metric = model_metric(model)
        points = [(r.n, r.d, float(getattr(r, metric))) for r in done]
        try:
            fits[model] = fit_constant(points, model)
        except DegenerateInputError as e:
            logger.info("Skipping fit model=%s metric=%s: %s", model, metric, e)
    return fits


def sweep(
    protocol: str,
    adversary: str,
    n_grid: Sequence[int],
    d_grid: Sequence[int],
    trials: int,
    seed_base: int = 0,
    c: float | None = None,
    models: Sequence[str] | None = None,
    base: ExecutionConfig | None = None,
) -> SweepReport:
    if not n_grid or not d_grid:
        raise ConfigError("sweep grid must contain at least one n and one d")
    rows: list[SweepRow] = []
    failures = 0
    for n, d in itertools.product(n_grid, d_grid):
        update = {"protocol": protocol, "adversary": adversary, "n": n, "d": d}
        if c is not None:
            update["c"] = c
        config = (base or ExecutionConfig(n=n)).model_copy(update=update)
        summaries = run_trials(config, trials, seed_base)
        failures += sum(1 for s in summaries if s.error)
        rows.extend(_row(s) for s in summaries if s.error is None)
        logger.info(
            "Sweep point protocol=%s adversary=%s n=%s d=%s trials=%s failures=%s",
            protocol, adversary, n, d, trials, sum(1 for s in summaries if s.error),
        )
    return SweepReport(rows=rows, fits=fit_rows(rows, models), failures=failures)


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            record = row.model_dump()
            record["terminated"] = "true" if row.terminated else "false"
            w.writerow(record)


def read_sweep_csv(path: str | Path) -> list[SweepRow]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"sweep CSV is missing columns: {', '.join(sorted(missing))}")
        rows = []
        for line in reader:
            line = dict(line)
            line["terminated"] = (line.get("terminated") or "").strip().lower() in {"true", "1", "yes"}
            rows.append(SweepRow.model_validate(line))
    return rows
