"""Counter-based uniform draws.

Every coin flip is a pure function of (seed, node, slot, channel), so the
realized sends of one node never depend on which other nodes are alive or
on the order executions are scheduled in.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_NODE_STRIDE = np.uint64(0xD1B54A32D192ED03)
_SLOT_STRIDE = np.uint64(0xABC98388FB8FAC03)
_CHANNEL_STRIDE = np.uint64(0x8CB92BA72F3D8DD7)
_MASK64 = (1 << 64) - 1


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform_draws(seed: int, slot: int, channel: int, node_ids: np.ndarray) -> np.ndarray:
    """Uniform floats in [0, 1), one per node id, for this slot and channel."""
    ids = np.asarray(node_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _splitmix(np.array([seed & _MASK64], dtype=np.uint64))[0]
        counter = (
            ids * _NODE_STRIDE
            + np.uint64(slot & _MASK64) * _SLOT_STRIDE
            + np.uint64(channel & _MASK64) * _CHANNEL_STRIDE
        )
        bits = _splitmix(counter ^ key)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def sample_sends(seed: int, slot: int, channel: int, node_ids: np.ndarray, probs: np.ndarray) -> np.ndarray:
    if len(node_ids) == 0:
        return np.zeros(0, dtype=bool)
    return uniform_draws(seed, slot, channel, node_ids) < np.asarray(probs, dtype=np.float64)
