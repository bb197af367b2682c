from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.settings import pigeonhole_cap
from app.simulation.errors import ConfigError, DegenerateInputError, ModeMismatchError
from app.simulation.models import AdversaryParams, ExecutionConfig, InterferenceDirective, SlotRecord
from app.simulation.protocols import BackoffSchedule, backoff_prob

logger = logging.getLogger("contention-bench")


@dataclass(frozen=True)
class AdversaryView:
    """What the adversary may look at when deciding slot `slot`.

    `history` is the trace through slot-1. `contention` evaluates the
    contention the live nodes will produce on a channel this slot; it is a
    deterministic function of the history, never of this slot's coin flips.
    """

    slot: int
    channel_count: int
    n: int
    budget: int
    jams_used: int
    normal_injected: int
    history: Sequence[SlotRecord]
    contention: Callable[[int], float] = field(default=lambda channel: 0.0)


@dataclass(frozen=True)
class Injection:
    normal: int = 0
    interference: tuple[InterferenceDirective, ...] = ()


# ---------------------------------------------------------------- injection rules


class InjectionRule:
    def __call__(self, view: AdversaryView) -> int:
        raise NotImplementedError


class BatchInjector(InjectionRule):
    def __init__(self, n: int):
        self.n = n

    def __call__(self, view: AdversaryView) -> int:
        return self.n if view.slot == 1 else 0


class ScheduledInjector(InjectionRule):
    def __init__(self, per_slot: dict[int, int]):
        self.per_slot = dict(per_slot)

    def __call__(self, view: AdversaryView) -> int:
        return self.per_slot.get(view.slot, 0)


def batch_injector(n: int) -> BatchInjector:
    if n < 1:
        raise ConfigError("n must be >= 1")
    return BatchInjector(n)


def sqrt_injector(n: int) -> ScheduledInjector:
    if n < 1:
        raise ConfigError("n must be >= 1")
    k = math.isqrt(n)
    per_slot = {s: k for s in range(1, k + 1)}
    # remainder goes to slot 1 so every early slot still carries sqrt(n) arrivals
    per_slot[1] += n - k * k
    return ScheduledInjector(per_slot)


def scattered_injector(n: int, spread: int, seed: int) -> ScheduledInjector:
    if n < 1 or spread < 1:
        raise ConfigError("n and spread must be >= 1")
    rng = np.random.default_rng(seed & ((1 << 64) - 1))
    arrivals = rng.integers(1, spread + 1, size=n)
    per_slot: dict[int, int] = {}
    for s in arrivals.tolist():
        per_slot[s] = per_slot.get(s, 0) + 1
    return ScheduledInjector(per_slot)


class InterferenceSchedule:
    def __init__(self, directives: Sequence[InterferenceDirective]):
        self.by_slot: dict[int, list[InterferenceDirective]] = {}
        for directive in directives:
            self.by_slot.setdefault(directive.slot, []).append(directive)

    def __call__(self, view: AdversaryView) -> tuple[InterferenceDirective, ...]:
        return tuple(self.by_slot.get(view.slot, ()))


def interference_schedule(
    directives: Sequence[InterferenceDirective],
    channel_count: int = 2,
    n: int | None = None,
) -> InterferenceSchedule:
    if channel_count != 2:
        raise ModeMismatchError("interference nodes exist only in the two-channel model")
    if n is not None and len(directives) > n:
        raise ConfigError(f"at most n={n} interference nodes may be injected, got {len(directives)}")
    return InterferenceSchedule(directives)


def default_interference_directives(count: int) -> list[InterferenceDirective]:
    return [
        InterferenceDirective(slot=i + 1, channel_one_start="this-slot" if i % 2 == 0 else "next-slot")
        for i in range(count)
    ]


# ---------------------------------------------------------------- jamming rules


class JammingRule:
    def __call__(self, view: AdversaryView) -> tuple[bool, ...]:
        raise NotImplementedError


def _budget_left(view: AdversaryView, d: int | None) -> int:
    budget = view.budget if d is None else min(d, view.budget)
    return max(0, budget - view.jams_used)


def _jam_all_channels(view: AdversaryView, d: int | None = None) -> tuple[bool, ...]:
    left = _budget_left(view, d)
    return tuple(ch < left for ch in range(view.channel_count))


class NoJamming(JammingRule):
    def __call__(self, view: AdversaryView) -> tuple[bool, ...]:
        return (False,) * view.channel_count


class FrontJammer(JammingRule):
    def __init__(self, d: int):
        self.d = d

    def __call__(self, view: AdversaryView) -> tuple[bool, ...]:
        return _jam_all_channels(view, self.d)


class PlannedJammer(JammingRule):
    def __init__(self, slots: set[int]):
        self.slots = frozenset(slots)

    def __call__(self, view: AdversaryView) -> tuple[bool, ...]:
        if view.slot not in self.slots:
            return (False,) * view.channel_count
        return _jam_all_channels(view)


class BandJammer(JammingRule):
    def __init__(self, lo: float, hi: float, d: int):
        self.lo = lo
        self.hi = hi
        self.d = d

    def __call__(self, view: AdversaryView) -> tuple[bool, ...]:
        jams = [False] * view.channel_count
        if _budget_left(view, self.d) >= 1 and self.lo <= view.contention(0) <= self.hi:
            jams[0] = True
        return tuple(jams)


def front_jammer(d: int) -> FrontJammer:
    if d < 0:
        raise ConfigError("d must be >= 0")
    return FrontJammer(d)


def lower_bound_jam_plan(t: int, C: float, seed: int) -> set[int]:
    if t < 4 * C:
        raise DegenerateInputError(f"horizon t={t} must be at least 4C={4 * C}")
    block = int(math.floor(t / (4 * C)))
    prefix = set(range(1, block + 1))
    pool = np.arange(block + 1, t + 1)
    rng = np.random.default_rng(seed & ((1 << 64) - 1))
    chosen = rng.choice(pool, size=block, replace=False)
    return prefix | {int(s) for s in chosen}


def contention_band_jammer(band: tuple[float, float], d: int) -> BandJammer:
    lo, hi = band
    if not (0 <= lo < hi):
        raise ConfigError("band must satisfy 0 <= lo < hi")
    if d < 0:
        raise ConfigError("d must be >= 0")
    return BandJammer(lo, hi, d)


# ---------------------------------------------------------------- pigeonhole construction


class PigeonholeResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    t: int
    c: float
    intervals: list[tuple[float, float]]
    injected_count: int
    realized_count: int
    below_range: list[int]


def _interval_bounds(t: int, c: float, i: int) -> tuple[float, float]:
    return float(t) ** (-(i + 1) * c), float(t) ** (-i * c)


def _interval_of(x: float, t: int, c: float) -> int | None:
    if x >= 1.0:
        return None
    depth = -math.log(x) / math.log(t)
    i = max(0, math.ceil(depth / c) - 1)
    # settle float noise at interval edges with direct comparisons
    while i > 0 and x >= _interval_bounds(t, c, i)[1]:
        i -= 1
    while x < _interval_bounds(t, c, i)[0] and _interval_bounds(t, c, i)[0] > 0:
        i += 1
    return i


def _injection_count(t: int, exponent: float) -> int:
    if float(exponent).is_integer():
        return t ** int(exponent)
    return math.ceil(t ** exponent)


def pigeonhole_index(x: Sequence[float], c: float) -> PigeonholeResult:
    t = len(x)
    if t <= 1:
        raise DegenerateInputError("pigeonhole construction needs t >= 2 (interval I_0 is empty for t = 1)")
    if c < 2:
        raise DegenerateInputError("pigeonhole construction needs c >= 2")
    occupied: set[int] = set()
    below: list[int] = []
    for j, value in enumerate(x, start=1):
        if not (0.0 < value <= 1.0):
            raise DegenerateInputError(f"schedule value x_{j}={value} outside (0, 1]")
        i = _interval_of(float(value), t, c)
        if i is None:
            continue
        if i > t:
            below.append(j)
            continue
        occupied.add(i)
    index = next(i for i in range(t + 1) if i not in occupied)
    count = _injection_count(t, index * c + c / 2)
    cap = pigeonhole_cap()
    if count > cap:
        logger.info("Pigeonhole injection count %s capped at %s", count, cap)
    return PigeonholeResult(
        index=index,
        t=t,
        c=c,
        intervals=[_interval_bounds(t, c, i) for i in range(t + 1)],
        injected_count=count,
        realized_count=min(count, cap),
        below_range=below,
    )


def pigeonhole_contention_check(x: Sequence[float], c: float) -> dict:
    """Contention of ceil(t^(ic+c/2)) synchronized nodes in each of the first t slots."""
    result = pigeonhole_index(x, c)
    t = result.t
    log_nodes = math.log(result.injected_count)
    high = (c / 2) * math.log(t)
    rows = []
    violations = 0
    for j, value in enumerate(x, start=1):
        log_contention = log_nodes + math.log(value)
        side = "high" if log_contention >= high - 1e-9 else "low" if log_contention <= -high + 1e-9 else "band"
        if side == "band":
            violations += 1
        rows.append({"slot": j, "logContention": log_contention, "side": side})
    return {
        "index": result.index,
        "t": t,
        "c": c,
        "injectedCount": result.injected_count,
        "slots": rows,
        "violations": violations,
        "ok": violations == 0,
    }


_PIGEONHOLE_SCHEDULES: dict[str, Callable[[float], BackoffSchedule]] = {
    "plain-backoff": lambda c: BackoffSchedule.reciprocal(),
    "log-backoff": BackoffSchedule.log_reciprocal,
}


def pigeonhole_schedule(protocol: str, t: int, c: float) -> list[float]:
    """First t sending probabilities of a fresh node under a fixed schedule."""
    factory = _PIGEONHOLE_SCHEDULES.get(protocol)
    if factory is None:
        raise ModeMismatchError(
            f"pigeonhole construction needs a fixed schedule ({', '.join(_PIGEONHOLE_SCHEDULES)}), got {protocol}"
        )
    return [float(p) for p in backoff_prob(factory(c), np.arange(1, t + 1))]


def pigeonhole_injector(x: Sequence[float], c: float) -> BatchInjector:
    return batch_injector(pigeonhole_index(x, c).realized_count)


def pigeonhole_config(
    protocol: str,
    t: int,
    c: float = 2.0,
    seed: int = 0,
    max_slots: int | None = None,
) -> ExecutionConfig:
    """Execution that injects the capped pigeonhole batch against `protocol` in slot 1."""
    base = ExecutionConfig(n=1, protocol=protocol)
    count = pigeonhole_index(pigeonhole_schedule(protocol, t, base.c), c).realized_count
    return base.model_copy(
        update={
            "n": count,
            "adversary": "pigeonhole",
            "adversary_params": AdversaryParams(horizon=t, pigeonhole_c=c),
            "seed": seed,
            "max_slots": max_slots,
        }
    )


# ---------------------------------------------------------------- registry


@dataclass
class Adversary:
    injector: InjectionRule
    jammer: JammingRule
    interference: InterferenceSchedule | None = None

    def inject(self, view: AdversaryView) -> Injection:
        remaining = view.n - view.normal_injected
        normal = max(0, min(remaining, self.injector(view)))
        directives = self.interference(view) if self.interference is not None else ()
        return Injection(normal=normal, interference=tuple(directives))

    def jam(self, view: AdversaryView) -> tuple[bool, ...]:
        return tuple(bool(j) for j in self.jammer(view))


ADVERSARY_IDS = ("none", "front", "lb-jam", "sqrt-inject", "band-jam", "interference", "batch", "pigeonhole")


def _configured_injector(config: ExecutionConfig) -> InjectionRule:
    params = config.adversary_params
    if params.injection == "sqrt":
        return sqrt_injector(config.n)
    if params.injection == "scattered":
        return scattered_injector(config.n, params.spread or 4 * config.n, config.seed)
    return batch_injector(config.n)


def build_adversary(config: ExecutionConfig, channel_count: int) -> Adversary:
    params = config.adversary_params
    kind = config.adversary
    if kind == "none":
        return Adversary(_configured_injector(config), NoJamming())
    if kind == "batch":
        return Adversary(batch_injector(config.n), NoJamming())
    if kind == "front":
        return Adversary(_configured_injector(config), front_jammer(config.d))
    if kind == "lb-jam":
        horizon = params.horizon or max(math.ceil(4 * params.lb_constant), math.ceil(2 * params.lb_constant * config.d))
        plan = lower_bound_jam_plan(horizon, params.lb_constant, config.seed)
        return Adversary(_configured_injector(config), PlannedJammer(plan))
    if kind == "sqrt-inject":
        return Adversary(sqrt_injector(config.n), NoJamming())
    if kind == "band-jam":
        return Adversary(_configured_injector(config), contention_band_jammer(params.band, config.d))
    if kind == "interference":
        directives = list(params.interference) or default_interference_directives(
            params.interference_count if params.interference_count is not None else 1
        )
        schedule = interference_schedule(directives, channel_count, config.n)
        return Adversary(_configured_injector(config), NoJamming(), schedule)
    if kind == "pigeonhole":
        t = params.horizon or 16
        injector = pigeonhole_injector(pigeonhole_schedule(config.protocol, t, config.c), params.pigeonhole_c)
        if injector.n != config.n:
            raise ConfigError(f"pigeonhole batch for t={t} realizes {injector.n} nodes, config has n={config.n}")
        return Adversary(injector, NoJamming())
    raise ConfigError(f"Unknown adversary: {kind} (known: {', '.join(ADVERSARY_IDS)})")
