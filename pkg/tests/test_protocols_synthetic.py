import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.simulation.channel import NO_SUCCESS, ChannelTruth, Feedback, TruthKind
from app.simulation.errors import ConfigError, DegenerateInputError, ModeMismatchError
from app.simulation.protocols import (
    BackoffSchedule,
    DynamicNodeState,
    InterferenceNodes,
    Phase,
    StaticNodeState,
    SyncMode,
    SyncNodeState,
    backoff_prob,
    build_protocol,
    dynamic_step,
    log_control_prob,
    plain_backoff_step,
    protocol_ids,
    static_phase1_update,
    static_phase2_advance,
    static_step,
    sync_hear,
    sync_step,
    transition_threshold,
)

SUCCESS = Feedback.from_truth(ChannelTruth(kind=TruthKind.SUCCESS, sender=0))


def test_reciprocal_schedule_values():
    schedule = BackoffSchedule.reciprocal()
    assert backoff_prob(schedule, 1) == 1.0
    assert backoff_prob(schedule, 2) == 0.5
    assert backoff_prob(schedule, 1000) == pytest.approx(0.001)


@pytest.mark.parametrize(
    "x, expected",
    [(1, 1.0), (64, 0.376398), (100, 0.266328), (256, 0.125088)],
)
def test_log_reciprocal_schedule_values(x, expected):
    assert backoff_prob(BackoffSchedule.log_reciprocal(4.0), x) == pytest.approx(expected, abs=1e-6)


def test_schedule_is_vectorised():
    probs = backoff_prob(BackoffSchedule.reciprocal(), np.array([1, 2, 4]))
    assert np.allclose(probs, [1.0, 0.5, 0.25])


def test_non_positive_index_is_rejected():
    with pytest.raises(DegenerateInputError):
        backoff_prob(BackoffSchedule.reciprocal(), 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=1, max_value=10**9), st.floats(min_value=0.1, max_value=16))
def test_schedules_are_clamped_probabilities(x, c):
    for schedule in (BackoffSchedule.reciprocal(), BackoffSchedule.log_reciprocal(c)):
        p = backoff_prob(schedule, x)
        assert 0.0 < p <= 1.0


def test_dynamic_step_advances_age():
    (one, two), state = dynamic_step(DynamicNodeState(age=1), 4.0)
    assert (one, two) == (1.0, 1.0)
    assert state.age == 2
    (one, two), _ = dynamic_step(DynamicNodeState(age=100), 4.0)
    assert one == pytest.approx(0.01)
    assert two == pytest.approx(0.266328, abs=1e-6)


def test_plain_backoff_step():
    assert plain_backoff_step(4) == (0.25, 5)


def test_static_halving_rule():
    state = static_phase1_update(StaticNodeState(ell=10.0, t=5), SUCCESS)
    assert state.ell == 5.0
    assert state.m == 5.0
    assert state.t == 6
    assert state.phase is Phase.ONE


def test_static_failure_grows_ell():
    state = static_phase1_update(StaticNodeState(ell=10.0, t=5), NO_SUCCESS)
    assert state.ell == 11.0
    assert math.isinf(state.m)
    assert state.t == 6


def test_static_ell_never_drops_below_one():
    state = static_phase1_update(StaticNodeState(ell=1.0, t=1), SUCCESS)
    assert state.ell == 1.0


def test_static_transition_fires_once_m_is_small():
    assert transition_threshold(16) == 4.0
    state = static_phase1_update(StaticNodeState(ell=2.0, t=15), SUCCESS)
    assert state.t == 16
    assert state.m == 1.0
    assert state.phase is Phase.TWO
    assert state.phase2_age == 1
    with pytest.raises(ModeMismatchError):
        static_phase1_update(state, SUCCESS)


def test_static_transition_blocked_without_control_success():
    state = StaticNodeState()
    for _ in range(200):
        state = static_phase1_update(state, NO_SUCCESS)
    assert state.phase is Phase.ONE


def test_static_step_probabilities():
    assert static_step(StaticNodeState(ell=1.0), 4.0) == (1.0, 1.0)
    data, control = static_step(StaticNodeState(ell=100.0), 4.0)
    assert data == pytest.approx(0.01)
    assert control == pytest.approx(0.266328, abs=1e-6)
    assert log_control_prob(100.0, 4.0) == control
    data, control = static_step(StaticNodeState(phase=Phase.TWO, phase2_age=1), 4.0)
    assert data == 0.0
    assert control == 1.0
    assert static_phase2_advance(StaticNodeState(phase=Phase.TWO)).phase2_age == 2


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=60))
def test_static_m_is_non_increasing(outcomes):
    state = StaticNodeState()
    previous_m = state.m
    for success in outcomes:
        if state.phase is Phase.TWO:
            break
        state = static_phase1_update(state, SUCCESS if success else NO_SUCCESS)
        assert state.ell >= 1.0
        assert state.m <= previous_m
        previous_m = state.m


def test_sync_syncing_uses_local_pair_index():
    state = SyncNodeState(arrival=1, slot=4)
    prob, state = sync_step(state, None, 4.0)
    assert prob == 1.0
    assert state.slot == 5
    assert state.mode is SyncMode.SYNCING


def test_sync_aligns_and_idles_after_first_success():
    state = sync_hear(SyncNodeState(arrival=1, slot=5), 4, SUCCESS)
    assert state.mode is SyncMode.RUNNING
    assert state.one_parity == 0
    prob, state = sync_step(state, None, 4.0)
    assert prob == 0.0 and state.idled
    prob, state = sync_step(state, None, 4.0)
    assert prob == 1.0 and not state.idled
    prob, state = sync_step(state, None, 4.0)
    assert prob == 1.0
    assert state.dynamic.age == 2


def test_sync_success_on_channel_two_swaps_roles():
    running = SyncNodeState(arrival=1, slot=8, mode=SyncMode.RUNNING, one_parity=0, dynamic=DynamicNodeState(age=3))
    swapped = sync_hear(running, 7, SUCCESS)
    assert swapped.one_parity == 1
    assert swapped.skip_next
    same = sync_hear(running, 6, SUCCESS)
    assert same == running


def test_registry_knows_the_protocols():
    ids = protocol_ids()
    for pid in ("dynamic2", "dynamic1-sync", "static2", "static1", "plain-backoff", "log-backoff"):
        assert pid in ids
    assert build_protocol("static2", 4.0).requires_batch
    assert build_protocol("dynamic1-sync", 4.0).channels == 1
    with pytest.raises(ConfigError):
        build_protocol("nope", 4.0)


def test_interference_channel_one_start_offsets():
    now = InterferenceNodes(4.0)
    probs, state = now.step(now.start(5), 5)
    assert probs == (1.0, 1.0)
    assert (state.one_index, state.two_index) == (2, 2)

    later = InterferenceNodes(4.0, delayed=True)
    probs, state = later.step(later.start(5), 5)
    assert probs == (0.0, 1.0)
    assert (state.one_index, state.two_index) == (1, 2)
    probs, _ = later.step(state, 6)
    assert probs[0] == 1.0


def test_default_c_comes_from_the_environment(monkeypatch):
    monkeypatch.setenv("CONTENTION_BENCH_DEFAULT_C", "2.5")
    assert BackoffSchedule.log_reciprocal().c == 2.5
    assert build_protocol("dynamic2", None).c == 2.5
    monkeypatch.delenv("CONTENTION_BENCH_DEFAULT_C")
    assert BackoffSchedule.log_reciprocal().c == 4.0
