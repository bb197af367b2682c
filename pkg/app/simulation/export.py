from __future__ import annotations

import json
from typing import Any

from pydantic import BaseModel, ValidationError

from app.simulation.engine import active_slot_count, energy_by_node
from app.simulation.errors import ConfigError
from app.simulation.models import ExecutionTrace


def truncate(s: str, limit: int) -> tuple[str, bool]:
    if s is None:
        return "", False
    if limit <= 0:
        return "", True
    if len(s) <= limit:
        return s, False
    return s[:limit], True


def dumps(payload: Any) -> str:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(payload, sort_keys=True, ensure_ascii=False)


def export_trace(trace: ExecutionTrace, include_slots: bool = False) -> dict:
    energy = energy_by_node(trace)
    normal = trace.normal_nodes
    out = {
        "config": trace.config.model_dump(mode="json"),
        "seed": trace.seed,
        "channelCount": trace.channel_count,
        "terminated": trace.terminated,
        "maxSlotsReached": trace.max_slots_reached,
        "slotsPlayed": len(trace.slots),
        "activeSlots": active_slot_count(trace),
        "jamsUsed": trace.jams_used,
        "successSlots": trace.success_slots,
        "maxEnergy": max((energy[node] for node in normal), default=0),
        "energy": {str(node): energy[node] for node in sorted(energy)},
        "lifetimes": {
            str(node): {
                "kind": life.kind.value,
                "arrival": life.arrival,
                "halt": life.halt,
                "successSlot": life.success_slot,
            }
            for node, life in trace.lifetimes.items()
        },
    }
    if include_slots:
        out["trace"] = trace.model_dump(mode="json")
    return out


def load_trace(text: str) -> ExecutionTrace:
    """Accept a raw trace dump or a run export that carries one under "trace"."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"trace file is not valid JSON: {e}") from e
    if isinstance(payload, dict) and "trace" in payload and "slots" not in payload:
        payload = payload["trace"]
    if not isinstance(payload, dict):
        raise ConfigError("trace file must hold a JSON object")
    try:
        return ExecutionTrace.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"trace file does not describe an execution: {e.error_count()} error(s)") from e
