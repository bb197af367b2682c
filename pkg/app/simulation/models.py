from __future__ import annotations

from enum import Enum
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.settings import default_c
from app.simulation.channel import ChannelTruth, Feedback
from app.simulation.errors import SlotRangeError


class NodeKind(str, Enum):
    NORMAL = "normal"
    INTERFERENCE = "interference"


class InterferenceDirective(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    slot: int = Field(ge=1)
    channel_one_start: Literal["this-slot", "next-slot"] = "this-slot"


class AdversaryParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    injection: Literal["batch", "sqrt", "scattered"] = "batch"
    spread: int | None = Field(default=None, ge=1)
    band: tuple[float, float] = (0.5, 2.0)
    horizon: int | None = Field(default=None, ge=1)
    lb_constant: float = Field(default=2.0, gt=0)
    pigeonhole_c: float = Field(default=2.0, ge=2)
    interference: list[InterferenceDirective] = Field(default_factory=list)
    interference_count: int | None = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _band_ordered(self) -> "AdversaryParams":
        lo, hi = self.band
        if not (0 <= lo < hi):
            raise ValueError("band must satisfy 0 <= lo < hi")
        return self


class ExecutionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(ge=1)
    d: int = Field(default=0, ge=0)
    c: float = Field(default_factory=default_c, gt=0)
    channel_count: Literal[1, 2] | None = None
    max_slots: int | None = Field(default=None, ge=1)
    protocol: str = "dynamic2"
    adversary: str = "none"
    seed: int = 0
    record: Literal["full", "aggregate"] = "full"
    adversary_params: AdversaryParams = Field(default_factory=AdversaryParams)

    @model_validator(mode="after")
    def _seed_fits_64_bits(self) -> "ExecutionConfig":
        if not (-(1 << 63) <= self.seed < (1 << 64)):
            raise ValueError("seed must fit in 64 bits")
        return self


class ChannelRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    probabilities: dict[int, float] | None = None
    senders: list[int] = Field(default_factory=list)
    jammed: bool = False
    truth: ChannelTruth
    feedback: Feedback
    contention: float = 0.0
    normal_contention: float = 0.0
    max_probability: float = 0.0


class SlotRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    slot: int = Field(ge=1)
    channels: list[ChannelRecord]
    injections: list[int] = Field(default_factory=list)
    interference_injections: list[int] = Field(default_factory=list)
    active_node_count: int = Field(default=0, ge=0)
    diagnostics: dict[str, Any] = Field(default_factory=dict)

    @property
    def has_success(self) -> bool:
        return any(ch.feedback.is_success for ch in self.channels)

    @property
    def jam_units(self) -> int:
        return sum(1 for ch in self.channels if ch.jammed)


class NodeLifetime(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: NodeKind = NodeKind.NORMAL
    arrival: int = Field(ge=1)
    halt: int | None = None
    success_slot: int | None = None


class ExecutionTrace(BaseModel):
    model_config = ConfigDict(frozen=True)

    channel_count: Literal[1, 2]
    slots: list[SlotRecord] = Field(default_factory=list)
    lifetimes: dict[int, NodeLifetime] = Field(default_factory=dict)
    seed: int = 0
    config: ExecutionConfig
    terminated: bool = False
    max_slots_reached: bool = False
    jams_used: int = 0

    @property
    def normal_nodes(self) -> list[int]:
        return sorted(i for i, life in self.lifetimes.items() if life.kind is NodeKind.NORMAL)

    @property
    def success_slots(self) -> list[int]:
        return sorted(
            life.success_slot
            for life in self.lifetimes.values()
            if life.kind is NodeKind.NORMAL and life.success_slot is not None
        )

    def slot_record(self, slot: int) -> SlotRecord:
        if not (1 <= slot <= len(self.slots)):
            raise SlotRangeError(f"slot {slot} outside trace of {len(self.slots)} slots")
        return self.slots[slot - 1]
