"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import itertools
import random
import time

import pytest
import yaml

from colltrace import cli
from colltrace.collsim import FaultSpec, run
from colltrace.rca import RcCategory, Side, check_rc_table
from colltrace.runner import catalog, config_from_dict, load_config, replay_file, run_e2e, simulate
from colltrace.topology import CommGroup
from colltrace.tracelib import CompletionRecord, StateRecord, TraceStore, last_log_per_rank, query
from colltrace.trigger import Baseline, TriggerConfig, evaluate

from test_collsim import FIG2, PIPE, ring4, ring_oracle
from test_tracelib import brute_last, brute_query, random_records

FAULTS = ["nic_shutdown", "nic_bandwidth_limit", "pcie_downgrade", "gpu_power_limit", "background_compute",
          "background_traffic", "proxy_delay"]
EXPECTED = {
    "nic_shutdown": RcCategory.RdmaIssueOrReceiverNotReady,
    "nic_bandwidth_limit": RcCategory.RdmaIssueOrReceiverNotReady,
    "pcie_downgrade": RcCategory.GpuIssue,
    "gpu_power_limit": RcCategory.GpuIssue,
    "background_compute": RcCategory.GpuIssue,
    "background_traffic": RcCategory.RdmaIssueOrReceiverFailed,
    "proxy_delay": RcCategory.StragglerLateStart,
}


@pytest.fixture(scope="module")
def catalog_runs(tmp_path_factory):
    out = {}
    d = tmp_path_factory.mktemp("catalog")
    for name in FAULTS:
        cfg = load_config(catalog()[name])
        trace = d / f"{name}.jsonl"
        t0 = time.perf_counter()
        res = run_e2e(cfg, trace_out=trace)
        out[name] = (cfg, res, time.perf_counter() - t0, trace)
    return out


def test_criterion_1_catalog_detection(catalog_runs, verdict):
    detected = [n for n in FAULTS if catalog_runs[n][1].events]
    slowest = max(catalog_runs[n][2] for n in FAULTS)
    ok = len(detected) == 7 and slowest < 60.0
    verdict(1, ok, f"detected {len(detected)}/7, slowest scenario {slowest:.1f} s wall")


def test_criterion_2_localization(catalog_runs, verdict):
    problems = []
    for name in FAULTS:
        cfg, res, _, _ = catalog_runs[name]
        topo, _ = cfg.build()
        node = cfg.expect["node"]
        on_node = set(topo.ranks_on_node(node))
        with_suspects = [rep for rep in res.reports if rep.suspects]
        if not with_suspects:
            problems.append(f"{name}: no suspects")
            continue
        for rep in with_suspects:
            off = set(rep.suspect_ranks) - on_node
            if off:
                problems.append(f"{name}: suspects {sorted(off)} off node {node}")
        first = with_suspects[0]
        cats = {s.category for s in first.suspects}
        if cats != {EXPECTED[name]}:
            problems.append(f"{name}: categories {sorted(c.value for c in cats)}")
    verdict(2, not problems, "; ".join(problems) or "all 7 scenarios localized to node 0 with expected categories")


def test_criterion_3_trigger_latency(catalog_runs, verdict):
    worst = {}
    for name in FAULTS:
        cfg, res, _, _ = catalog_runs[name]
        bound = cfg.trigger.detect_interval_ms + cfg.trigger.delta_ms
        onset = cfg.first_onset()
        after = [ev.time_ms for ev in res.events if ev.time_ms >= onset]
        worst[name] = (after[0] - onset if after else float("inf"), bound)
    ok = all(lat <= bound for lat, bound in worst.values())
    lat, bound = max(worst.values())
    verdict(3, ok, f"worst onset-to-trigger {lat:.0f} ms against bound {bound:.0f} ms")


def test_criterion_4_cascade(verdict):
    topo, prog = ring4()
    _, summary = run(topo, prog, [FaultSpec("PcieDowngrade", 0, onset=0.0, copy_factor=0.5)], FIG2)
    arrivals, done = ring_oracle([2.0, 1.0, 1.0, 1.0])
    match = all(summary.step_arrivals[(r, 0)] == arrivals[r] for r in (1, 2, 3))
    ends = summary.completion_times(0)
    spread = max(ends.values()) - min(ends.values())
    ok = match and ends == done and spread <= PIPE
    verdict(4, ok, f"per-step arrivals match oracle: {match}, completion spread {spread} <= {PIPE}")


def test_criterion_5_state_table(verdict):
    bad = 0
    count = 0
    for a, b, c in itertools.product(range(6), repeat=3):
        if not a >= b >= c:
            continue
        count += 1
        cat, _ = check_rc_table(StateRecord(0, 0, 0, 0, 0, 0.0, 0.0, 5, a, b, c))
        # rows in table order; when two match, the deeper pipeline stage (b > c) is reported
        rows = [a == b == c == 0, a > b, b > c, a == b == c > 0]
        cats = [RcCategory.UninitializedOrBlocked, RcCategory.RdmaIssueOrReceiverNotReady,
                RcCategory.RdmaIssueOrReceiverFailed, RcCategory.GpuIssue]
        matched = [cats[i] for i, hit in enumerate(rows) if hit]
        if not matched:
            bad += 1
            continue
        want = RcCategory.RdmaIssueOrReceiverFailed if b > c else matched[0]
        bad += cat is not want
    sender = StateRecord(0, 0, 0, 0, 0, 0.0, 0.0, 5, 5, 5, 3)
    receiver = StateRecord(1, 0, 1, 0, 0, 0.0, 0.0, 5, 5, 5, 5)
    remote = check_rc_table(sender, receiver) == (RcCategory.RdmaIssueOrReceiverFailed, Side.Remote)
    verdict(5, bad == 0 and remote, f"{count} triples, {bad} mismatches, cross-check Remote: {remote}")


def test_criterion_6_clean_soundness(verdict):
    raw = yaml.safe_load(open(catalog()["clean"]))
    events = 0
    ticks = 0
    # the default cadence plus a tighter one, so most ticks fall after warmup
    for trig in ({}, {"detect_interval_ms": 100, "delta_ms": 100}):
        res = run_e2e(config_from_dict(dict(raw, iterations=20, trigger=trig)))
        events += len(res.events)
        ticks += res.ticks
    cfg = TriggerConfig(delta_ms=100.0, detect_interval_ms=100.0)

    def fires(percent):
        # baseline 100 bytes/ms; one completion in the 100 ms window carries percent * 100 bytes
        store = TraceStore()
        store.add(CompletionRecord(0, 0, 0, 0, 0, "AllGather", percent * 100, 149.0, 150.0))
        return evaluate(store, [0], 200.0, {0: Baseline(normal_throughput=100.0, windows=3)}, cfg) is not None

    half, above = fires(50), fires(51)
    ok = events == 0 and half and not above
    verdict(6, ok, f"{events} triggers over {ticks} clean ticks; 50% fires: {half}, 51% fires: {above}")


def test_criterion_7_determinism_and_replay(catalog_runs, tmp_path, verdict):
    cfg = load_config(catalog()["proxy_delay"])
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    simulate(cfg, a)
    simulate(cfg, b)
    identical = a.read_bytes() == b.read_bytes()
    mismatched = [n for n in FAULTS
                  if replay_file(catalog_runs[n][0], catalog_runs[n][3]).lines != catalog_runs[n][1].lines]
    r1, r2, tr = tmp_path / "r1.jsonl", tmp_path / "r2.jsonl", tmp_path / "t.jsonl"
    cli.main(["e2e", "--config", "proxy_delay", "--out", str(r1), "--trace-out", str(tr)])
    cli.main(["analyze", "--config", "proxy_delay", "--trace", str(tr), "--out", str(r2)])
    cli_same = r1.read_bytes() == r2.read_bytes() != b""
    ok = identical and not mismatched and cli_same
    verdict(7, ok, f"byte-identical traces: {identical}, replay mismatches: {mismatched or 'none'}, "
                   f"cli analyze == e2e: {cli_same}")


def test_criterion_8_trace_volume(tmp_path, verdict):
    cfg = load_config(catalog()["clean"])
    out = tmp_path / "clean.jsonl"
    simulate(cfg, out)
    topo, _ = cfg.build()
    per = out.stat().st_size / (len(topo.nodes) * cfg.iterations)
    verdict(8, per < 200 * 1024, f"{per / 1024:.1f} KB per machine-iteration (bound 200 KB)")


def test_criterion_9_query_oracle(verdict):
    rng = random.Random(2024)
    recs = random_records(rng, 1000)
    store = TraceStore()
    store.extend(recs)
    bad = 0
    for _ in range(100):
        t0, t1 = sorted(rng.uniform(-10, 1010) for _ in range(2))
        ranks = rng.sample(range(8), rng.randrange(1, 9))
        bad += query(store, ranks, t0, t1) != brute_query(recs, set(ranks), t0, t1)
        g = CommGroup(rng.randrange(3), "DP", tuple(rng.sample(range(8), 3)))
        bad += last_log_per_rank(store, g, t1) != brute_last(recs, g, t1)
    verdict(9, bad == 0, f"1000 records, 100 windows, {bad} mismatches")
