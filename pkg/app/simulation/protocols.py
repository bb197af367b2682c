from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np

from app.settings import default_c
from app.simulation.channel import Feedback
from app.simulation.errors import ConfigError, DegenerateInputError, ModeMismatchError


def _resolve_c(c: float | None) -> float:
    return default_c() if c is None else c


class ScheduleFamily(str, Enum):
    RECIPROCAL = "reciprocal"
    LOG_RECIPROCAL = "log-reciprocal"


@dataclass(frozen=True)
class BackoffSchedule:
    """h(x) = 1/x or c*log2(x+1)/x, always clamped to min{1, h(x)}.

    The +1 inside the logarithm keeps h(1) = c instead of 0, so a fresh node
    sends with probability 1 in its first slot.
    """

    family: ScheduleFamily
    c: float = field(default_factory=default_c)

    @classmethod
    def reciprocal(cls) -> "BackoffSchedule":
        return cls(ScheduleFamily.RECIPROCAL)

    @classmethod
    def log_reciprocal(cls, c: float | None = None) -> "BackoffSchedule":
        return cls(ScheduleFamily.LOG_RECIPROCAL, _resolve_c(c))


def _raw_h(schedule: BackoffSchedule, x: np.ndarray) -> np.ndarray:
    if schedule.family is ScheduleFamily.RECIPROCAL:
        return 1.0 / x
    return schedule.c * np.log2(x + 1.0) / x


def backoff_prob(schedule: BackoffSchedule, x: int | float | np.ndarray) -> float | np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr <= 0):
        raise DegenerateInputError(f"backoff index must be >= 1, got {x!r}")
    p = np.minimum(1.0, _raw_h(schedule, arr))
    if p.ndim == 0:
        return float(p)
    return p


def log_control_prob(ell: float, c: float) -> float:
    return float(min(1.0, c * math.log2(ell + 1.0) / ell))


# ---------------------------------------------------------------- dynamic


@dataclass(frozen=True)
class DynamicNodeState:
    age: int = 1


def dynamic_step(state: DynamicNodeState, c: float | None = None) -> tuple[tuple[float, float], DynamicNodeState]:
    one = backoff_prob(BackoffSchedule.reciprocal(), state.age)
    two = backoff_prob(BackoffSchedule.log_reciprocal(c), state.age)
    return (one, two), DynamicNodeState(age=state.age + 1)


def plain_backoff_step(age: int) -> tuple[float, int]:
    return backoff_prob(BackoffSchedule.reciprocal(), age), age + 1


# ---------------------------------------------------------------- static


class Phase(str, Enum):
    ONE = "one"
    TWO = "two"


@dataclass(frozen=True)
class StaticNodeState:
    ell: float = 1.0
    t: int = 1
    m: float = math.inf
    phase: Phase = Phase.ONE
    phase2_age: int = 1


def transition_threshold(t: int) -> float:
    return t / math.log2(max(t, 2))


def static_phase1_update(state: StaticNodeState, control: Feedback) -> StaticNodeState:
    if state.phase is not Phase.ONE:
        raise ModeMismatchError("phase-one update called on a node already in phase two")
    ell, m = state.ell, state.m
    if control.is_success:
        ell = max(ell / 2.0, 1.0)
        m = min(m, ell)
    else:
        ell = ell + 1.0
    t = state.t + 1
    if math.isfinite(m) and m <= transition_threshold(t):
        return StaticNodeState(ell=ell, t=t, m=m, phase=Phase.TWO, phase2_age=1)
    return StaticNodeState(ell=ell, t=t, m=m, phase=Phase.ONE, phase2_age=state.phase2_age)


def static_step(state: StaticNodeState, c: float | None = None) -> tuple[float, float]:
    """Return (data, control) probabilities for the slot about to be played."""
    if state.phase is Phase.ONE:
        return min(1.0, 1.0 / state.ell), log_control_prob(state.ell, _resolve_c(c))
    return 0.0, backoff_prob(BackoffSchedule.log_reciprocal(c), state.phase2_age)


def static_phase2_advance(state: StaticNodeState) -> StaticNodeState:
    return replace(state, phase2_age=state.phase2_age + 1)


# ---------------------------------------------------------------- sync wrapper


class SyncMode(str, Enum):
    SYNCING = "syncing"
    RUNNING = "running"


@dataclass(frozen=True)
class SyncNodeState:
    arrival: int
    slot: int
    mode: SyncMode = SyncMode.SYNCING
    one_parity: int | None = None
    skip_next: bool = False
    dynamic: DynamicNodeState | None = None
    idled: bool = False


def sync_hear(state: SyncNodeState, slot: int, feedback: Feedback | None) -> SyncNodeState:
    """Apply the feedback heard in global slot `slot`."""
    if feedback is None or not feedback.is_success:
        return state
    parity = slot % 2
    if state.mode is SyncMode.SYNCING:
        return replace(
            state,
            mode=SyncMode.RUNNING,
            one_parity=parity,
            skip_next=True,
            dynamic=DynamicNodeState(age=1),
        )
    if parity != state.one_parity:
        # success on the current channel two: roles swap, next slot is idle
        return replace(state, one_parity=parity, skip_next=True)
    return state


def sync_step(
    state: SyncNodeState,
    last_feedback: Feedback | None = None,
    c: float | None = None,
) -> tuple[float, SyncNodeState]:
    s = state.slot
    state = sync_hear(state, s - 1, last_feedback)
    log_schedule = BackoffSchedule.log_reciprocal(c)

    if state.mode is SyncMode.SYNCING:
        local = math.ceil((s - state.arrival + 1) / 2)
        return backoff_prob(log_schedule, local), replace(state, slot=s + 1, idled=False)

    if state.skip_next:
        return 0.0, replace(state, slot=s + 1, skip_next=False, idled=True)

    dyn = state.dynamic or DynamicNodeState()
    (one, two), advanced = dynamic_step(dyn, c)
    if s % 2 == state.one_parity:
        return one, replace(state, slot=s + 1, idled=False)
    # channel-two slot closes the two-channel slot pair
    return two, replace(state, slot=s + 1, idled=False, dynamic=advanced)


# ---------------------------------------------------------------- engine adapters


class Protocol:
    """Per-cohort adapter between a node state machine and the slot engine.

    Nodes that arrive in the same slot see identical feedback and therefore
    hold identical states; the engine keeps one state per arrival cohort.
    """

    id: str = ""
    channels: int = 1
    requires_batch: bool = False
    halts_on_any_success: bool = False

    def __init__(self, c: float | None = None):
        self.c = _resolve_c(c)

    def start(self, arrival_slot: int) -> Any:
        raise NotImplementedError

    def step(self, state: Any, slot: int) -> tuple[tuple[float, ...], Any]:
        raise NotImplementedError

    def feedback(self, state: Any, slot: int, feedbacks: Sequence[Feedback]) -> Any:
        return state

    def annotate(self, before: Sequence[tuple[Any, int]], after: Sequence[tuple[Any, int]]) -> dict[str, Any]:
        return {}


class DynamicTwoChannel(Protocol):
    id = "dynamic2"
    channels = 2

    def start(self, arrival_slot: int) -> DynamicNodeState:
        return DynamicNodeState(age=1)

    def step(self, state: DynamicNodeState, slot: int):
        return dynamic_step(state, self.c)


class SyncSingleChannel(Protocol):
    id = "dynamic1-sync"
    channels = 1

    def start(self, arrival_slot: int) -> SyncNodeState:
        return SyncNodeState(arrival=arrival_slot, slot=arrival_slot)

    def step(self, state: SyncNodeState, slot: int):
        prob, new_state = sync_step(state, None, self.c)
        return (prob,), new_state

    def feedback(self, state: SyncNodeState, slot: int, feedbacks: Sequence[Feedback]) -> SyncNodeState:
        return sync_hear(state, slot, feedbacks[0])

    def annotate(self, before, after):
        parities = sorted({s.one_parity for s, _ in after if s.mode is SyncMode.RUNNING})
        idle = sum(count for s, count in after if s.idled)
        running = sum(count for s, count in after if s.mode is SyncMode.RUNNING)
        return {"roleParities": parities, "idleNodes": idle, "runningNodes": running}


class StaticTwoChannel(Protocol):
    id = "static2"
    channels = 2
    requires_batch = True

    def start(self, arrival_slot: int) -> StaticNodeState:
        return StaticNodeState()

    def step(self, state: StaticNodeState, slot: int):
        return static_step(state, self.c), state

    def feedback(self, state: StaticNodeState, slot: int, feedbacks: Sequence[Feedback]) -> StaticNodeState:
        if state.phase is Phase.ONE:
            return static_phase1_update(state, feedbacks[1])
        return static_phase2_advance(state)

    def annotate(self, before, after):
        if not before:
            return {}
        start = before[0][0]
        end = after[0][0] if after else start
        return {"ellStart": start.ell, "ellEnd": end.ell, "phase": start.phase.value, "m": _finite_or_none(end.m)}


class StaticSingleChannel(StaticTwoChannel):
    """Odd global slots carry the data channel, even slots the control channel."""

    id = "static1"
    channels = 1

    def step(self, state: StaticNodeState, slot: int):
        data, control = static_step(state, self.c)
        return ((data,) if slot % 2 == 1 else (control,)), state

    def feedback(self, state: StaticNodeState, slot: int, feedbacks: Sequence[Feedback]) -> StaticNodeState:
        if slot % 2 == 1:
            return state
        if state.phase is Phase.ONE:
            return static_phase1_update(state, feedbacks[0])
        return static_phase2_advance(state)


class PlainBackoff(Protocol):
    id = "plain-backoff"
    channels = 1

    def start(self, arrival_slot: int) -> int:
        return 1

    def step(self, state: int, slot: int):
        prob, age = plain_backoff_step(state)
        return (prob,), age


class LogBackoff(PlainBackoff):
    id = "log-backoff"

    def step(self, state: int, slot: int):
        return (backoff_prob(BackoffSchedule.log_reciprocal(self.c), state),), state + 1


@dataclass(frozen=True)
class InterferenceNodeState:
    one_index: int
    two_index: int = 1


class InterferenceNodes(Protocol):
    """Adversary-injected nodes running the log schedule on both channels.

    Channel two always starts at the injection slot; channel one starts there
    or one slot later. They leave on the first success heard on any channel.
    """

    id = "interference"
    channels = 2
    halts_on_any_success = True

    def __init__(self, c: float | None = None, delayed: bool = False):
        super().__init__(c)
        self.delayed = delayed

    def start(self, arrival_slot: int) -> InterferenceNodeState:
        return InterferenceNodeState(one_index=0 if self.delayed else 1)

    def step(self, state: InterferenceNodeState, slot: int):
        schedule = BackoffSchedule.log_reciprocal(self.c)
        one = backoff_prob(schedule, state.one_index) if state.one_index >= 1 else 0.0
        two = backoff_prob(schedule, state.two_index)
        return (one, two), InterferenceNodeState(one_index=state.one_index + 1, two_index=state.two_index + 1)


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


_REGISTRY: dict[str, Callable[[float | None], Protocol]] = {
    DynamicTwoChannel.id: DynamicTwoChannel,
    SyncSingleChannel.id: SyncSingleChannel,
    StaticTwoChannel.id: StaticTwoChannel,
    StaticSingleChannel.id: StaticSingleChannel,
    PlainBackoff.id: PlainBackoff,
    LogBackoff.id: LogBackoff,
}


def register_protocol(protocol_id: str, factory: Callable[[float | None], Protocol]) -> None:
    _REGISTRY[protocol_id] = factory


def protocol_ids() -> list[str]:
    return sorted(_REGISTRY)


def build_protocol(protocol_id: str, c: float | None = None) -> Protocol:
    factory = _REGISTRY.get(protocol_id)
    if factory is None:
        raise ConfigError(f"Unknown protocol: {protocol_id} (known: {', '.join(protocol_ids())})")
    return factory(c)
