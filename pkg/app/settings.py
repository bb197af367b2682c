from __future__ import annotations

import os

try:
    from dotenv import load_dotenv
    load_dotenv()
except Exception:
    pass


def _env_int(name: str, default: int) -> int:
    raw = (os.getenv(name) or "").strip()
    if not raw:
        return default
    try:
        return int(float(raw))
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    raw = (os.getenv(name) or "").strip()
    if not raw:
        return default
    try:
        return float(raw)
    except ValueError:
        return default


def worker_threads() -> int:
    default = min(8, os.cpu_count() or 1)
    return max(1, _env_int("CONTENTION_BENCH_THREADS", default))


def default_c() -> float:
    value = _env_float("CONTENTION_BENCH_DEFAULT_C", 4.0)
    return value if value > 0 else 4.0


def max_slots_factor() -> int:
    return max(1, _env_int("CONTENTION_BENCH_MAX_SLOTS_FACTOR", 1_000_000))


def pigeonhole_cap() -> int:
    return max(1, _env_int("CONTENTION_BENCH_PIGEONHOLE_CAP", 1_000_000))


def log_response_chars() -> int:
    return _env_int("CONTENTION_BENCH_LOG_RESPONSE_CHARS", 2000)


def log_level() -> str:
    return (os.getenv("CONTENTION_BENCH_LOG_LEVEL") or "INFO").strip().upper() or "INFO"
