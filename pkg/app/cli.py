from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Literal, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.settings import log_level, log_response_chars
from app.simulation.analysis import IntervalKind, decomposition_report, success_bound_battery
from app.simulation.engine import run_execution
from app.simulation.errors import BudgetExceededError, ConfigError, SimulationError
from app.simulation.export import dumps, export_trace, load_trace, truncate
from app.simulation.harness import fit_rows, read_sweep_csv, run_trials, sweep, write_sweep_csv
from app.simulation.models import ExecutionConfig

logger = logging.getLogger("contention-bench")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VIOLATION = 2


class CliConfig(BaseModel):
    """Parsed command line; every flag maps to exactly one field."""

    model_config = ConfigDict(extra="forbid")

    command: Literal["run", "sweep", "verify-lemma", "fit", "decompose"]
    config: Path | None = None
    out: Path | None = None
    seed: int | None = None
    trials: int = Field(default=1, ge=1)
    verbose: int = 0
    protocol: str | None = None
    adversary: str | None = None
    n: int | None = None
    d: int | None = None
    c: float | None = None
    full_trace: bool = False
    samples: int = Field(default=100_000, ge=1)
    spot_vectors: int = Field(default=100, ge=0)
    mc_samples: int = Field(default=100_000, ge=1)
    n_grid: list[int] | None = None
    d_grid: list[int] | None = None
    model: list[str] | None = None
    strict: bool = False
    kind: IntervalKind = IntervalKind.COMPLETE_DYNAMIC
    source: Path | None = None


def _int_list(raw: str) -> list[int]:
    return [int(tok) for tok in raw.replace(" ", "").split(",") if tok]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contention-bench", description="Contention-resolution simulator.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="JSON file mirroring ExecutionConfig.")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--protocol")
        p.add_argument("--adversary")
        p.add_argument("--n", type=int)
        p.add_argument("--d", type=int)
        p.add_argument("--c", type=float)
        p.add_argument("--trials", type=int, default=1)

    run = sub.add_parser("run", help="One execution (or --trials summaries) as JSON.")
    common(run)
    run.add_argument("--full-trace", action="store_true", help="Embed the per-slot trace in the output.")

    sw = sub.add_parser("sweep", help="Grid of trials to CSV plus fit JSON.")
    common(sw)
    sw.add_argument("--n-grid", type=_int_list)
    sw.add_argument("--d-grid", type=_int_list)
    sw.add_argument("--model", action="append")
    sw.add_argument("--strict", action="store_true")

    lemma = sub.add_parser("verify-lemma", help="Success-probability bound battery.")
    lemma.add_argument("--samples", type=int, default=100_000)
    lemma.add_argument("--spot-vectors", type=int, default=100)
    lemma.add_argument("--mc-samples", type=int, default=100_000)
    lemma.add_argument("--seed", type=int)
    lemma.add_argument("--out", type=Path)

    fit = sub.add_parser("fit", help="Fit complexity constants from a sweep CSV.")
    fit.add_argument("source", type=Path)
    fit.add_argument("--model", action="append")
    fit.add_argument("--strict", action="store_true")
    fit.add_argument("--out", type=Path)

    dec = sub.add_parser("decompose", help="Interval and congest diagnostics of a stored trace.")
    dec.add_argument("source", type=Path)
    dec.add_argument("--kind", default=IntervalKind.COMPLETE_DYNAMIC.value, choices=[k.value for k in IntervalKind])
    dec.add_argument("--out", type=Path)
    return parser


def _emit(payload, out: Path | None) -> None:
    text = dumps(payload)
    if out is not None:
        out.write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")
        sys.stdout.flush()
    snippet, truncated = truncate(text, log_response_chars())
    if snippet:
        logger.info("Result%s %s", " (truncated)" if truncated else "", snippet)


def _execution_config(cli: CliConfig) -> ExecutionConfig:
    raw: dict = {}
    if cli.config is not None:
        try:
            raw = json.loads(cli.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{cli.config}: invalid JSON ({e})") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{cli.config}: config must be a JSON object")
    for key in ("protocol", "adversary", "n", "d", "c", "seed"):
        value = getattr(cli, key)
        if value is not None:
            raw[key] = value
    if cli.command == "sweep":
        raw.setdefault("n", 1)
    return ExecutionConfig.model_validate(raw)


def _cmd_run(cli: CliConfig) -> int:
    config = _execution_config(cli)
    if cli.trials > 1:
        summaries = run_trials(config, cli.trials, config.seed)
        _emit({"config": config.model_dump(mode="json"), "trials": [s.model_dump(mode="json") for s in summaries]}, cli.out)
        budget_errors = [s for s in summaries if s.error and s.error.startswith(BudgetExceededError.__name__)]
        return EXIT_VIOLATION if budget_errors else EXIT_OK
    trace = run_execution(config)
    _emit(export_trace(trace, include_slots=cli.full_trace), cli.out)
    return EXIT_OK


def _fit_payload(fits, failures: int = 0) -> dict:
    return {
        "fits": {model: fit.model_dump(mode="json") for model, fit in fits.items()},
        "failures": failures,
    }


def _cmd_sweep(cli: CliConfig) -> int:
    if not cli.n_grid or not cli.d_grid:
        raise ConfigError("sweep needs a non-empty --n-grid and --d-grid")
    base = _execution_config(cli)
    report = sweep(
        base.protocol,
        base.adversary,
        cli.n_grid,
        cli.d_grid,
        cli.trials,
        seed_base=base.seed,
        models=cli.model,
        base=base,
    )
    if cli.out is not None:
        write_sweep_csv(report.rows, cli.out)
        _emit(_fit_payload(report.fits, report.failures), None)
    else:
        _emit({**_fit_payload(report.fits, report.failures), "rows": [r.model_dump(mode="json") for r in report.rows]}, None)
    if cli.strict and not all(f.conforming for f in report.fits.values()):
        return EXIT_VIOLATION
    return EXIT_OK


def _cmd_verify_lemma(cli: CliConfig) -> int:
    report = success_bound_battery(
        samples=cli.samples,
        seed=cli.seed or 0,
        spot_vectors=cli.spot_vectors,
        mc_samples=cli.mc_samples,
    )
    _emit(report, cli.out)
    print(f"violations: {report['violations']}", file=sys.stderr, flush=True)
    return EXIT_OK if report["violations"] == 0 else EXIT_VIOLATION


def _cmd_fit(cli: CliConfig) -> int:
    rows = read_sweep_csv(cli.source)
    fits = fit_rows(rows, cli.model)
    if not fits:
        raise ConfigError(f"{cli.source}: no model could be fitted (need >= 3 terminated rows)")
    _emit(_fit_payload(fits), cli.out)
    if cli.strict and not all(f.conforming for f in fits.values()):
        return EXIT_VIOLATION
    return EXIT_OK


def _cmd_decompose(cli: CliConfig) -> int:
    trace = load_trace(cli.source.read_text(encoding="utf-8"))
    _emit(decomposition_report(trace, cli.kind), cli.out)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "verify-lemma": _cmd_verify_lemma,
    "fit": _cmd_fit,
    "decompose": _cmd_decompose,
}


def execute_command(argv: Sequence[str]) -> int:
    try:
        ns = _parser().parse_args(list(argv))
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    logging.basicConfig(level=logging.DEBUG if ns.verbose else log_level(), stream=sys.stderr)
    try:
        cli = CliConfig.model_validate(vars(ns))
        return _COMMANDS[cli.command](cli)
    except BudgetExceededError as e:
        print(f"error: {e}", file=sys.stderr, flush=True)
        return EXIT_VIOLATION
    except (ValidationError, SimulationError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr, flush=True)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(execute_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
