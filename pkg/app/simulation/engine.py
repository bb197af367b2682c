from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from app.settings import max_slots_factor
from app.simulation.adversary import AdversaryView, build_adversary
from app.simulation.channel import resolve_slot
from app.simulation.errors import BudgetExceededError, ConfigError, UnknownNodeError
from app.simulation.models import (
    ChannelRecord,
    ExecutionConfig,
    ExecutionTrace,
    NodeKind,
    NodeLifetime,
    SlotRecord,
)
from app.simulation.protocols import InterferenceNodes, Protocol, build_protocol
from app.simulation.rng import sample_sends

logger = logging.getLogger("contention-bench")


@dataclass
class _Cohort:
    protocol: Protocol
    state: Any
    ids: np.ndarray
    kind: NodeKind


def resolve_config(config: ExecutionConfig) -> ExecutionConfig:
    protocol = build_protocol(config.protocol, config.c)
    if config.channel_count is not None and config.channel_count != protocol.channels:
        raise ConfigError(
            f"protocol {config.protocol} runs on {protocol.channels} channel(s), config says {config.channel_count}"
        )
    max_slots = config.max_slots or max_slots_factor() * (config.n + config.d + 1)
    return config.model_copy(update={"channel_count": protocol.channels, "max_slots": max_slots})


def _preview_contention(cohorts: list[_Cohort], slot: int, channel: int) -> float:
    total = 0.0
    for cohort in cohorts:
        probs, _ = cohort.protocol.step(cohort.state, slot)
        total += probs[channel] * len(cohort.ids)
    return total


def run_execution(config: ExecutionConfig) -> ExecutionTrace:
    config = resolve_config(config)
    protocol = build_protocol(config.protocol, config.c)
    channels = protocol.channels
    adversary = build_adversary(config, channels)
    full = config.record == "full"
    seed = config.seed

    cohorts: list[_Cohort] = []
    lifetimes: dict[int, dict[str, Any]] = {}
    slots: list[SlotRecord] = []
    next_id = 0
    normal_injected = 0
    jams_used = 0
    terminated = False

    def view_of(slot: int) -> AdversaryView:
        return AdversaryView(
            slot=slot,
            channel_count=channels,
            n=config.n,
            budget=config.d,
            jams_used=jams_used,
            normal_injected=normal_injected,
            history=slots,
            contention=lambda ch: _preview_contention(cohorts, slot, ch),
        )

    for slot in range(1, config.max_slots + 1):
        injection = adversary.inject(view_of(slot))
        injected: list[int] = []
        if injection.normal:
            if protocol.requires_batch and slot > 1:
                raise ConfigError(f"protocol {protocol.id} needs every node to start in slot 1")
            ids = np.arange(next_id, next_id + injection.normal, dtype=np.int64)
            next_id += injection.normal
            normal_injected += injection.normal
            cohorts.append(_Cohort(protocol, protocol.start(slot), ids, NodeKind.NORMAL))
            injected = ids.tolist()
        interference_ids: list[int] = []
        for directive in injection.interference:
            helper = InterferenceNodes(config.c, delayed=directive.channel_one_start == "next-slot")
            ids = np.array([next_id], dtype=np.int64)
            next_id += 1
            cohorts.append(_Cohort(helper, helper.start(slot), ids, NodeKind.INTERFERENCE))
            interference_ids.append(int(ids[0]))
        for node in injected:
            lifetimes[node] = {"kind": NodeKind.NORMAL, "arrival": slot, "halt": None, "success_slot": None}
        for node in interference_ids:
            lifetimes[node] = {"kind": NodeKind.INTERFERENCE, "arrival": slot, "halt": None, "success_slot": None}

        jams = adversary.jam(view_of(slot))
        if len(jams) != channels:
            raise ConfigError(f"adversary returned {len(jams)} jam flags for {channels} channel(s)")
        units = sum(jams)
        if jams_used + units > config.d:
            raise BudgetExceededError(slot, jams_used + units, config.d)
        jams_used += units

        before = [(c.state, len(c.ids)) for c in cohorts if c.kind is NodeKind.NORMAL]
        per_channel_ids: list[list[np.ndarray]] = [[] for _ in range(channels)]
        per_channel_probs: list[list[np.ndarray]] = [[] for _ in range(channels)]
        normal_contention = [0.0] * channels
        for cohort in cohorts:
            probs, cohort.state = cohort.protocol.step(cohort.state, slot)
            for ch in range(channels):
                p = float(probs[ch]) if ch < len(probs) else 0.0
                per_channel_ids[ch].append(cohort.ids)
                per_channel_probs[ch].append(np.full(len(cohort.ids), p))
                if cohort.kind is NodeKind.NORMAL:
                    normal_contention[ch] += p * len(cohort.ids)

        active = sum(len(c.ids) for c in cohorts)
        senders: list[list[int]] = []
        channel_ids: list[np.ndarray] = []
        channel_probs: list[np.ndarray] = []
        for ch in range(channels):
            ids = np.concatenate(per_channel_ids[ch]) if per_channel_ids[ch] else np.zeros(0, dtype=np.int64)
            probs = np.concatenate(per_channel_probs[ch]) if per_channel_probs[ch] else np.zeros(0)
            sent = sample_sends(seed, slot, ch, ids, probs)
            senders.append(sorted(int(i) for i in ids[sent]))
            channel_ids.append(ids)
            channel_probs.append(probs)

        outcomes = resolve_slot(senders, jams)
        feedbacks = [fb for _, fb in outcomes]

        records = []
        for ch, (truth, fb) in enumerate(outcomes):
            probs = channel_probs[ch]
            records.append(
                ChannelRecord(
                    probabilities=(
                        {int(i): float(p) for i, p in sorted(zip(channel_ids[ch].tolist(), probs.tolist()))}
                        if full
                        else None
                    ),
                    senders=senders[ch],
                    jammed=bool(jams[ch]),
                    truth=truth,
                    feedback=fb,
                    contention=float(probs.sum()),
                    normal_contention=normal_contention[ch],
                    max_probability=float(probs.max()) if len(probs) else 0.0,
                )
            )

        winners = {fb.sender for fb in feedbacks if fb.is_success}
        for cohort in cohorts:
            cohort.state = cohort.protocol.feedback(cohort.state, slot, feedbacks)
            if not winners:
                continue
            if cohort.protocol.halts_on_any_success:
                leaving = cohort.ids.tolist()
            else:
                leaving = cohort.ids[np.isin(cohort.ids, list(winners))].tolist()
            if not leaving:
                continue
            for node in leaving:
                lifetimes[node]["halt"] = slot
                if node in winners:
                    lifetimes[node]["success_slot"] = slot
            cohort.ids = cohort.ids[~np.isin(cohort.ids, leaving)]
        cohorts = [c for c in cohorts if len(c.ids)]

        after = [(c.state, len(c.ids)) for c in cohorts if c.kind is NodeKind.NORMAL]
        slots.append(
            SlotRecord(
                slot=slot,
                channels=records,
                injections=injected,
                interference_injections=interference_ids,
                active_node_count=active,
                diagnostics=protocol.annotate(before, after),
            )
        )

        if normal_injected >= config.n and not cohorts:
            terminated = True
            break

    max_reached = not terminated
    if max_reached:
        logger.warning(
            "Execution hit max_slots=%s protocol=%s adversary=%s n=%s d=%s seed=%s",
            config.max_slots, config.protocol, config.adversary, config.n, config.d, seed,
        )
    logger.info(
        "Execution protocol=%s adversary=%s n=%s d=%s seed=%s slots=%s jams=%s terminated=%s",
        config.protocol, config.adversary, config.n, config.d, seed, len(slots), jams_used, terminated,
    )
    return ExecutionTrace(
        channel_count=channels,
        slots=slots,
        lifetimes={node: NodeLifetime(**life) for node, life in sorted(lifetimes.items())},
        seed=seed,
        config=config,
        terminated=terminated,
        max_slots_reached=max_reached,
        jams_used=jams_used,
    )


def active_slot_count(trace: ExecutionTrace) -> int:
    return sum(1 for record in trace.slots if record.active_node_count >= 1)


def energy_by_node(trace: ExecutionTrace) -> dict[int, int]:
    energy = {node: 0 for node in trace.lifetimes}
    for record in trace.slots:
        for ch in record.channels:
            for node in ch.senders:
                energy[node] = energy.get(node, 0) + 1
    return energy


def _require_node(trace: ExecutionTrace, node: int) -> None:
    if node not in trace.lifetimes:
        raise UnknownNodeError(f"node {node} does not appear in the trace")


def node_energy(trace: ExecutionTrace, node: int) -> int:
    _require_node(trace, node)
    return sum(ch.senders.count(node) for record in trace.slots for ch in record.channels)


def sends_in_window(trace: ExecutionTrace, node: int, first: int, last: int) -> int:
    _require_node(trace, node)
    first = max(1, first)
    last = min(len(trace.slots), last)
    return sum(
        ch.senders.count(node)
        for record in trace.slots[first - 1 : last]
        for ch in record.channels
    )
