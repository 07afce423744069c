import pytest
from hypothesis import given, strategies as st

from colltrace.errors import ConfigError
from colltrace.topology import build_layout
from colltrace.tracelib import CompletionRecord, StateRecord, TraceStore
from colltrace.trigger import (FAILURE, STRAGGLER, Baseline, Detector, TriggerConfig, evaluate, sample_ranks,
                               window_stats)

CFG = TriggerConfig(delta_ms=100.0, detect_interval_ms=100.0)


def comp(rank, end, nbytes, op=0, start=None):
    return CompletionRecord(0, 0, rank, 0, op, "AllGather", nbytes, end - 1 if start is None else start, end)


def state(rank, t, op=0):
    return StateRecord(0, 0, rank, 0, op, t, 10.0, 8, 4, 2, 1)


def warmed(thr=100.0, interval=None):
    return Baseline(normal_throughput=thr, normal_op_interval=interval, windows=3)


def store_of(*recs):
    s = TraceStore()
    s.extend(recs)
    return s


def test_config_validation():
    for bad in (dict(delta_ms=0), dict(throughput_drop_factor=1.0), dict(interval_inflation_factor=1.0),
                dict(max_sampled_ranks=0)):
        with pytest.raises(ConfigError):
            TriggerConfig(**bad)


def test_sampling_covers_each_dp_group():
    topo = build_layout(1, 1, 2, 1, 1)  # one DP group of two
    assert len(sample_ranks(topo, TriggerConfig(), 0)) == 1
    topo = build_layout(2, 1, 2, 2, 1)  # two DP groups
    picks = sample_ranks(topo, TriggerConfig(), 3)
    assert len(picks) == 2
    assert {topo.group_of(r, "DP").comm_id for r in picks} == {g.comm_id for g in topo.groups_of_kind("DP")}


def test_sampling_caps_at_ten():
    topo = build_layout(8, 2, 2, 8, 1)  # 16 DP groups
    picks = sample_ranks(topo, TriggerConfig(), 1)
    assert len(picks) == 10
    assert len({topo.group_of(r, "DP").comm_id for r in picks}) == 10
    assert picks == sample_ranks(topo, TriggerConfig(), 1)


def test_single_rank_world_samples_it():
    assert sample_ranks(build_layout(1, 1, 1, 1, 1), TriggerConfig(), 0) == [0]


@given(tp=st.sampled_from([1, 2, 4]), pp=st.integers(1, 4), dp=st.integers(1, 4), cap=st.integers(1, 12),
       seed=st.integers(0, 100))
def test_sampling_cap_property(tp, pp, dp, cap, seed):
    topo = build_layout(tp, pp, dp, tp, 1)
    picks = sample_ranks(topo, TriggerConfig(max_sampled_ranks=cap), seed)
    n_groups = len(topo.groups_of_kind("DP"))
    assert len(picks) == min(cap, n_groups)
    if n_groups <= cap:
        assert len({topo.group_of(r, "DP").comm_id for r in picks}) == n_groups


def test_stalled_rank_triggers_failure():
    s = store_of(state(0, 150.0), state(0, 200.0))
    ev = evaluate(s, [0], 200.0, {}, CFG)
    assert ev.kind == FAILURE and ev.suspect_rank == 0 and ev.time_ms == 200.0


def test_throughput_half_fires_and_51_percent_does_not():
    b = {0: warmed(100.0)}
    ev = evaluate(store_of(comp(0, 150.0, 5000)), [0], 200.0, b, CFG)
    assert ev.kind == STRAGGLER
    assert b[0].windows == 3  # tripped windows do not feed the baseline
    ev = evaluate(store_of(comp(0, 150.0, 5100)), [0], 200.0, b, CFG)
    assert ev is None
    assert b[0].windows == 4 and b[0].normal_throughput == pytest.approx(100 + 0.3 * (51 - 100))


def test_interval_doubling_fires():
    cfg = TriggerConfig(delta_ms=1000.0, detect_interval_ms=1000.0)
    recs = [comp(0, t, 10 ** 6, op=i) for i, t in enumerate((1200.0, 1600.0, 2000.0))]
    b = {0: warmed(thr=1.0, interval=200.0)}
    ev = evaluate(store_of(*recs), [0], 2000.0, b, cfg)
    assert ev.kind == STRAGGLER and "interval" in ev.reason


def test_no_comparison_before_warmup():
    b = {0: Baseline(normal_throughput=100.0, windows=2)}
    assert evaluate(store_of(comp(0, 150.0, 10)), [0], 200.0, b, CFG) is None
    assert b[0].windows == 3


def test_cold_start_is_not_a_failure_but_silence_after_activity_is():
    assert evaluate(TraceStore(), [0], 200.0, {}, CFG) is None
    s = store_of(comp(0, 150.0, 10))
    ev = evaluate(s, [0], 300.0, {}, CFG)
    assert ev.kind == FAILURE and ev.reason == "records stopped"


def test_lowest_rank_wins():
    s = store_of(state(3, 150.0), state(1, 150.0))
    assert evaluate(s, [3, 1], 200.0, {}, CFG).suspect_rank == 1


def test_evaluate_rejects_early_tick():
    with pytest.raises(ValueError):
        evaluate(TraceStore(), [0], 50.0, {}, CFG)


@given(base=st.floats(1.0, 1e6), frac=st.floats(0.0, 1.0), lower=st.floats(0.0, 1.0))
def test_monotone_thresholding(base, frac, lower):
    cfg = TriggerConfig(delta_ms=1.0, detect_interval_ms=1.0)

    def trips(thr):
        nbytes = int(thr)
        if nbytes <= 0:
            return True
        s = store_of(comp(0, 10.0, nbytes))
        return evaluate(s, [0], 10.0, {0: warmed(base)}, cfg) is not None

    t = base * frac
    if trips(t):
        assert trips(t * lower)


def test_window_stats():
    thr, interval = window_stats([comp(0, 10.0, 100, op=1), comp(0, 30.0, 100, op=2), comp(0, 31.0, 50, op=2)],
                                 10.0)
    assert thr == 25.0 and interval == 21.0


def test_detector_rearms_only_after_quiet_tick():
    d = Detector([0], CFG)
    stalled = store_of(state(0, 100.0), state(0, 200.0), state(0, 300.0))
    assert d.step(stalled, 200.0) is not None
    assert d.step(stalled, 300.0) is None
    d.step(TraceStore(), 400.0)
    assert d.armed
