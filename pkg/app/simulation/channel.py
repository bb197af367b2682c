from __future__ import annotations

from enum import Enum
from typing import Collection, Sequence

from pydantic import BaseModel, ConfigDict, model_validator


class TruthKind(str, Enum):
    EMPTY = "empty"
    SUCCESS = "success"
    COLLISION = "collision"
    JAMMED = "jammed"


class FeedbackKind(str, Enum):
    SUCCESS = "success"
    NO_SUCCESS = "no_success"


class ChannelTruth(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: TruthKind
    sender: int | None = None

    @model_validator(mode="after")
    def _sender_only_on_success(self) -> "ChannelTruth":
        if (self.kind is TruthKind.SUCCESS) != (self.sender is not None):
            raise ValueError("Success carries exactly one sender id; other truths carry none")
        return self


class Feedback(BaseModel):
    """Binary channel feedback: nodes learn who succeeded, never why a slot failed."""

    model_config = ConfigDict(frozen=True)

    kind: FeedbackKind
    sender: int | None = None

    @property
    def is_success(self) -> bool:
        return self.kind is FeedbackKind.SUCCESS

    @classmethod
    def from_truth(cls, truth: ChannelTruth) -> "Feedback":
        if truth.kind is TruthKind.SUCCESS:
            return cls(kind=FeedbackKind.SUCCESS, sender=truth.sender)
        return NO_SUCCESS


EMPTY = ChannelTruth(kind=TruthKind.EMPTY)
COLLISION = ChannelTruth(kind=TruthKind.COLLISION)
JAMMED = ChannelTruth(kind=TruthKind.JAMMED)
NO_SUCCESS = Feedback(kind=FeedbackKind.NO_SUCCESS)


def resolve_channel(senders: Collection[int], jammed: bool) -> tuple[ChannelTruth, Feedback]:
    # jamming dominates regardless of how many nodes broadcast
    if jammed:
        return JAMMED, NO_SUCCESS
    if len(senders) == 0:
        return EMPTY, NO_SUCCESS
    if len(senders) == 1:
        (sender,) = tuple(senders)
        truth = ChannelTruth(kind=TruthKind.SUCCESS, sender=int(sender))
        return truth, Feedback.from_truth(truth)
    return COLLISION, NO_SUCCESS


def resolve_slot(
    sends: Sequence[Collection[int]],
    jams: Sequence[bool],
) -> list[tuple[ChannelTruth, Feedback]]:
    if len(sends) != len(jams):
        raise ValueError("sends and jams must cover the same channels")
    return [resolve_channel(s, bool(j)) for s, j in zip(sends, jams)]
