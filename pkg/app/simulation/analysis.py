from __future__ import annotations

import math
from enum import Enum
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.simulation.errors import ModeMismatchError, ProbabilityRangeError
from app.simulation.models import ExecutionTrace, NodeKind

_TOLERANCE = 1e-12


class CongestMode(str, Enum):
    DYNAMIC = "dynamic"
    STATIC = "static"


class IntervalKind(str, Enum):
    INTERFERENCE = "interference"
    COMPLETE_DYNAMIC = "complete-dynamic"
    COMPLETE_STATIC = "complete-static"


class ContentionReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    slot: int
    channel: int
    p: float
    per_node: dict[int, float] = Field(default_factory=dict)


class LemmaReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float
    p_one: float
    p_zero: float
    lower_applicable: bool
    lower_one: float
    lower_zero: float
    upper_one: float
    slack_lower_one: float | None
    slack_lower_zero: float | None
    slack_upper_one: float
    ok: bool


class Interval(BaseModel):
    model_config = ConfigDict(frozen=True)

    start: int
    end: int
    injected: int
    congest: int
    ell_drop: float | None = None

    @property
    def length(self) -> int:
        return self.end - self.start + 1


class IntervalDecomposition(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: IntervalKind
    intervals: list[Interval] = Field(default_factory=list)


# ---------------------------------------------------------------- exact success probabilities


def _validate_probs(p: Sequence[float]) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.size and (np.any(~np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
        raise ProbabilityRangeError("every probability must lie in [0, 1]")
    return arr


def _exact_rows(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (P_one, P_zero) for a matrix of probabilities; zero entries are absent nodes."""
    certain = matrix >= 1.0
    certain_count = certain.sum(axis=1)
    rest = np.where(certain, 0.0, matrix)
    log_stay = np.log1p(-rest).sum(axis=1)
    p_zero_rest = np.exp(log_stay)
    p_zero = np.where(certain_count > 0, 0.0, p_zero_rest)
    odds = (rest / (1.0 - rest)).sum(axis=1)
    p_one = np.where(
        certain_count == 0,
        p_zero_rest * odds,
        np.where(certain_count == 1, p_zero_rest, 0.0),
    )
    return p_one, p_zero


def exact_success_probs(p: Sequence[float]) -> tuple[float, float]:
    arr = _validate_probs(p)
    if arr.size == 0:
        return 0.0, 1.0
    p_one, p_zero = _exact_rows(arr.reshape(1, -1))
    return float(p_one[0]), float(p_zero[0])


def _lemma_bounds(total: float) -> tuple[float, float, float]:
    lower_one = min(4.0 ** (-total), total / 4.0)
    lower_zero = 4.0 ** (-total)
    upper_one = total * math.exp(-total + 1.0)
    return lower_one, lower_zero, upper_one


def check_success_bounds(p: Sequence[float]) -> LemmaReport:
    arr = _validate_probs(p)
    p_one, p_zero = exact_success_probs(arr)
    total = float(arr.sum())
    lower_one, lower_zero, upper_one = _lemma_bounds(total)
    applicable = bool(arr.size == 0 or arr.max() <= 0.5)
    slack_upper = upper_one - p_one
    ok = slack_upper >= -_TOLERANCE
    slack_lo1 = slack_lo0 = None
    if applicable:
        slack_lo1 = p_one - lower_one
        slack_lo0 = p_zero - lower_zero
        ok = ok and slack_lo1 >= -_TOLERANCE and slack_lo0 >= -_TOLERANCE
    return LemmaReport(
        p=total,
        p_one=p_one,
        p_zero=p_zero,
        lower_applicable=applicable,
        lower_one=lower_one,
        lower_zero=lower_zero,
        upper_one=upper_one,
        slack_lower_one=slack_lo1,
        slack_lower_zero=slack_lo0,
        slack_upper_one=slack_upper,
        ok=bool(ok),
    )


def monte_carlo_success_probs(p: Sequence[float], samples: int, seed: int) -> dict[str, float]:
    arr = _validate_probs(p)
    rng = np.random.default_rng(seed)
    counts = (rng.random((samples, arr.size)) < arr).sum(axis=1)
    one = float(np.mean(counts == 1))
    zero = float(np.mean(counts == 0))
    return {
        "pOne": one,
        "pZero": zero,
        "seOne": math.sqrt(max(one * (1 - one), 0.0) / samples),
        "seZero": math.sqrt(max(zero * (1 - zero), 0.0) / samples),
    }


def _random_vectors(rng: np.random.Generator, count: int, max_len: int, high: float) -> np.ndarray:
    lengths = rng.integers(1, max_len + 1, size=count)
    values = rng.uniform(0.0, high, size=(count, max_len))
    mask = np.arange(max_len)[None, :] < lengths[:, None]
    return np.where(mask, values, 0.0)


def success_bound_battery(
    samples: int = 100_000,
    seed: int = 0,
    spot_vectors: int = 100,
    mc_samples: int = 100_000,
    max_len: int = 20,
) -> dict:
    rng = np.random.default_rng(seed)

    small = _random_vectors(rng, samples, max_len, 0.5)
    p_one, p_zero = _exact_rows(small)
    totals = small.sum(axis=1)
    lower_one = np.minimum(4.0 ** (-totals), totals / 4.0)
    lower_zero = 4.0 ** (-totals)
    lower_violations = int(np.sum((p_one < lower_one - _TOLERANCE) | (p_zero < lower_zero - _TOLERANCE)))

    wide = _random_vectors(rng, samples, max_len, 1.0)
    w_one, _ = _exact_rows(wide)
    w_totals = wide.sum(axis=1)
    upper = w_totals * np.exp(-w_totals + 1.0)
    upper_violations = int(np.sum(w_one > upper + _TOLERANCE)) + int(
        np.sum(p_one > totals * np.exp(-totals + 1.0) + _TOLERANCE)
    )

    mc_violations = 0
    spots = _random_vectors(rng, spot_vectors, max_len, 1.0)
    for k, row in enumerate(spots):
        vector = row[row > 0]
        exact_one, exact_zero = exact_success_probs(vector)
        est = monte_carlo_success_probs(vector, mc_samples, seed + k + 1)
        for exact, observed in ((exact_one, est["pOne"]), (exact_zero, est["pZero"])):
            se = math.sqrt(exact * (1 - exact) / mc_samples)
            if abs(observed - exact) > 4 * se + _TOLERANCE:
                mc_violations += 1

    return {
        "samples": samples,
        "spotVectors": spot_vectors,
        "mcSamples": mc_samples,
        "lowerBoundViolations": lower_violations,
        "upperBoundViolations": upper_violations,
        "monteCarloViolations": mc_violations,
        "violations": lower_violations + upper_violations + mc_violations,
    }


# ---------------------------------------------------------------- trace diagnostics


def slot_contention(trace: ExecutionTrace, slot: int, channel: int) -> ContentionReport:
    record = trace.slot_record(slot)
    if not (0 <= channel < len(record.channels)):
        raise ModeMismatchError(f"channel {channel} not present in a {trace.channel_count}-channel trace")
    ch = record.channels[channel]
    if ch.probabilities is not None:
        per_node = dict(ch.probabilities)
        return ContentionReport(slot=slot, channel=channel, p=float(sum(per_node.values())), per_node=per_node)
    return ContentionReport(slot=slot, channel=channel, p=ch.contention)


def _require_protocol(trace: ExecutionTrace, mode: CongestMode) -> None:
    expected = {CongestMode.DYNAMIC: "dynamic2", CongestMode.STATIC: "static2"}[mode]
    if trace.config.protocol != expected or trace.channel_count != 2:
        raise ModeMismatchError(
            f"{mode.value} congest slots are defined on {expected} traces, got {trace.config.protocol}"
        )


def congest_slots(trace: ExecutionTrace, mode: CongestMode | str) -> set[int]:
    mode = CongestMode(mode)
    _require_protocol(trace, mode)
    out: set[int] = set()
    if mode is CongestMode.DYNAMIC:
        for record in trace.slots:
            one = record.channels[0]
            if one.jammed or one.normal_contention >= 1.0 or one.max_probability >= 0.5:
                out.add(record.slot)
        return out
    threshold = 1.0 / (trace.config.c ** 2)
    for record in trace.slots:
        if record.diagnostics.get("phase") != "one":
            continue
        if any(ch.jammed for ch in record.channels) or record.channels[0].contention >= threshold:
            out.add(record.slot)
    return out


def _first_success_from(trace: ExecutionTrace, start: int) -> int:
    for record in trace.slots[start - 1 :]:
        if record.has_success:
            return record.slot
    return len(trace.slots)


def _dynamic_congest_or_empty(trace: ExecutionTrace) -> set[int]:
    if trace.config.protocol == "dynamic2" and trace.channel_count == 2:
        return congest_slots(trace, CongestMode.DYNAMIC)
    return set()


def _count_in(slots: set[int], start: int, end: int) -> int:
    return sum(1 for s in slots if start <= s <= end)


def _interference_intervals(trace: ExecutionTrace) -> list[Interval]:
    congest = _dynamic_congest_or_empty(trace)
    injection_slots = [r.slot for r in trace.slots if r.interference_injections]
    intervals: list[Interval] = []
    right = 0
    for left in injection_slots:
        if left <= right:
            continue
        right = _first_success_from(trace, left)
        injected = sum(len(trace.slots[s - 1].interference_injections) for s in range(left, right + 1))
        intervals.append(Interval(start=left, end=right, injected=injected, congest=_count_in(congest, left, right)))
    return intervals


def _complete_dynamic_intervals(trace: ExecutionTrace) -> list[Interval]:
    last = len(trace.slots)
    spans = [(life.arrival, life.halt if life.halt is not None else last) for life in trace.lifetimes.values()]
    congest = _dynamic_congest_or_empty(trace)
    intervals: list[Interval] = []
    right = 0
    while True:
        anchor = next((r.slot for r in trace.slots[right:] if r.active_node_count >= 1), None)
        if anchor is None:
            break
        touching = [(a, b) for a, b in spans if a <= anchor <= b]
        if not touching:
            # an active slot always has a live node; guard against hand-built traces
            right = anchor
            continue
        left = min(a for a, _ in touching)
        right = max(b for _, b in touching)
        injected = sum(1 for a, _ in spans if left <= a <= right)
        intervals.append(Interval(start=left, end=right, injected=injected, congest=_count_in(congest, left, right)))
    return intervals


def _complete_static_intervals(trace: ExecutionTrace) -> list[Interval]:
    _require_protocol(trace, CongestMode.STATIC)
    phase_one = [r for r in trace.slots if r.diagnostics.get("phase") == "one"]
    if not phase_one:
        return []
    congest = congest_slots(trace, CongestMode.STATIC)
    last = phase_one[-1].slot
    bounds: list[tuple[int, int]] = []
    start = 1
    for record in phase_one:
        if record.channels[1].feedback.is_success:
            bounds.append((start, record.slot))
            start = record.slot + 1
    if start <= last:
        bounds.append((start, last))

    def ell(slot: int, key: str) -> float | None:
        value = trace.slots[slot - 1].diagnostics.get(key)
        return float(value) if value is not None else None

    intervals = []
    for left, right in bounds:
        begin, end = ell(left, "ellStart"), ell(right, "ellEnd")
        drop = begin - end if begin is not None and end is not None else None
        injected = sum(len(trace.slots[s - 1].injections) for s in range(left, right + 1))
        intervals.append(
            Interval(start=left, end=right, injected=injected, congest=_count_in(congest, left, right), ell_drop=drop)
        )
    return intervals


def decompose_intervals(trace: ExecutionTrace, kind: IntervalKind | str) -> IntervalDecomposition:
    kind = IntervalKind(kind)
    if kind is IntervalKind.INTERFERENCE:
        intervals = _interference_intervals(trace)
    elif kind is IntervalKind.COMPLETE_DYNAMIC:
        intervals = _complete_dynamic_intervals(trace)
    else:
        intervals = _complete_static_intervals(trace)
    return IntervalDecomposition(kind=kind, intervals=intervals)


def intervals_disjoint(intervals: Sequence[Interval]) -> bool:
    ordered = sorted(intervals, key=lambda i: i.start)
    return all(a.end < b.start for a, b in zip(ordered, ordered[1:]))


def sync_agreement_report(trace: ExecutionTrace) -> dict:
    if trace.config.protocol != "dynamic1-sync":
        raise ModeMismatchError(f"sync agreement is defined on dynamic1-sync traces, got {trace.config.protocol}")
    disagreements = []
    successes = 0
    wasted = 0
    for record in trace.slots:
        if record.diagnostics.get("idleNodes", 0) > 0:
            wasted += 1
        if not record.has_success:
            continue
        successes += 1
        if len(record.diagnostics.get("roleParities", [])) > 1:
            disagreements.append(record.slot)
    n = trace.config.n
    return {
        "successes": successes,
        "wastedSlots": wasted,
        "disagreements": disagreements,
        "ok": not disagreements and wasted <= n and wasted <= successes,
    }


def throughput_fraction(trace: ExecutionTrace, slot: int) -> float:
    normal = [life for life in trace.lifetimes.values() if life.kind is NodeKind.NORMAL]
    if not normal:
        return 0.0
    done = sum(1 for life in normal if life.success_slot is not None and life.success_slot <= slot)
    return done / trace.config.n


def decomposition_report(trace: ExecutionTrace, kind: IntervalKind | str) -> dict:
    mode = {"dynamic2": CongestMode.DYNAMIC, "static2": CongestMode.STATIC}.get(trace.config.protocol)
    decomposition = decompose_intervals(trace, kind)
    return {
        "kind": decomposition.kind.value,
        "intervals": [i.model_dump(mode="json") for i in decomposition.intervals],
        "congestMode": mode.value if mode else None,
        "congestSlots": sorted(congest_slots(trace, mode)) if mode and trace.channel_count == 2 else None,
    }
