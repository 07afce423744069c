"""Dependency-driven root-cause analysis over the trace store.

Failure path: find the groups with incomplete ops, seed suspects with the
rank furthest behind in each group (by op sequence, then by pipeline
progress), then follow each suspect's blame chain. A rank is blamed on a peer
when its stuck flow is explained by that peer: the ring predecessor has not
delivered the data the next chunk needs, the receiver has not posted the op,
or (for a point-to-point receiver) the sender has not delivered. A rank whose
stuck flows are explained by nobody else is a root, and its counters are
classified with the four-row state table.

Straggler path: compare per-iteration start and end times of each rank with
the median of its group peers over the last k iterations, then look for
skewed or incomplete flows.
"""

from __future__ import annotations

import statistics
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .collsim import OpProgram
from .errors import AnalysisError, ConfigError, InsufficientHistory
from .topology import GROUP_KINDS, CommGroup, Topology, ring_predecessor, ring_successor
from .tracelib import CompletionRecord, StateRecord, TraceRecord, TraceStore, last_log_per_rank
from .trigger import FAILURE, STRAGGLER, TriggerEvent


class RcCategory(str, Enum):
    UninitializedOrBlocked = "UninitializedOrBlocked"
    RdmaIssueOrReceiverNotReady = "RdmaIssueOrReceiverNotReady"
    RdmaIssueOrReceiverFailed = "RdmaIssueOrReceiverFailed"
    GpuIssue = "GpuIssue"
    StragglerLateStart = "StragglerLateStart"
    StragglerLateEnd = "StragglerLateEnd"
    FlowIncomplete = "FlowIncomplete"
    FlowSkewed = "FlowSkewed"


class Side(str, Enum):
    Local = "Local"
    Remote = "Remote"
    Undetermined = "Undetermined"


# deepest pipeline stage first; used to break ties between votes
_PRECEDENCE = (
    RcCategory.RdmaIssueOrReceiverFailed,
    RcCategory.RdmaIssueOrReceiverNotReady,
    RcCategory.GpuIssue,
    RcCategory.UninitializedOrBlocked,
)


@dataclass(frozen=True)
class AnalysisConfig:
    straggler_threshold_ms: float = 1000.0
    consecutive_iterations_k: int = 3
    delta_ms: float = 200.0
    flow_skew_factor: float = 2.0

    def __post_init__(self):
        if not self.straggler_threshold_ms > 0:
            raise ConfigError("analysis.straggler_threshold_ms must be > 0")
        if self.consecutive_iterations_k < 1:
            raise ConfigError("analysis.consecutive_iterations_k must be >= 1")
        if not self.delta_ms > 0:
            raise ConfigError("analysis.delta_ms must be > 0")
        if not self.flow_skew_factor > 1:
            raise ConfigError("analysis.flow_skew_factor must be > 1")


@dataclass(frozen=True)
class Suspect:
    rank: int
    category: RcCategory
    side: Side = Side.Undetermined


@dataclass
class RootCauseReport:
    kind: str
    trigger: TriggerEvent
    verdict: str  # "root_cause" | "none" | "undetermined" | "false_trigger"
    suspects: List[Suspect] = field(default_factory=list)
    affected_groups: List[int] = field(default_factory=list)
    evidence: List[TraceRecord] = field(default_factory=list)
    exonerated: List[int] = field(default_factory=list)
    analysis_ms: float = 0.0
    records_scanned: int = 0

    @property
    def suspect_ranks(self) -> List[int]:
        return sorted({s.rank for s in self.suspects})

    def to_dict(self, topo: Optional[Topology] = None) -> dict:
        def node(r):
            return topo.node_of(r) if topo is not None else None

        return {
            "kind": self.kind,
            "verdict": self.verdict,
            "analysis_ms": self.analysis_ms,
            "trigger_rank": self.trigger.suspect_rank,
            "suspects": [
                {"rank": s.rank, "node": node(s.rank), "category": s.category.value, "side": s.side.value}
                for s in self.suspects
            ],
            "affected_groups": list(self.affected_groups),
            "exonerated": list(self.exonerated),
            "evidence": [
                {"type": e.type, "time_ms": e.time_ms, "rank": e.rank, "channel": e.channel,
                 "op_seq": e.op_seq, "comm_id": e.comm_id}
                for e in self.evidence
            ],
            "records_scanned": self.records_scanned,
        }

    def to_text(self, topo: Optional[Topology] = None) -> str:
        head = f"[{self.analysis_ms:.1f} ms] {self.kind} analysis: {self.verdict}"
        lines = [head]
        for s in self.suspects:
            where = f" (node {topo.node_of(s.rank)})" if topo is not None else ""
            lines.append(f"  suspect rank {s.rank}{where}: {s.category.value}, side={s.side.value}")
        if self.affected_groups:
            lines.append(f"  affected groups: {', '.join(map(str, self.affected_groups))}")
        if self.exonerated:
            lines.append(f"  exonerated: {', '.join(map(str, self.exonerated))}")
        lines.append(f"  evidence records: {len(self.evidence)}, records scanned: {self.records_scanned}")
        return "\n".join(lines)


class FalseTrigger(AnalysisError):
    """No group shows an incomplete op around the trigger time."""


# --- rule set ------------------------------------------------------------


def check_rc_table(record: StateRecord, peer: Optional[StateRecord] = None) -> Tuple[RcCategory, Side]:
    """Classify one flow snapshot by its (gpu_ready, rdma_transmitted, rdma_done) counters."""
    try:
        record.validate()
        if peer is not None:
            peer.validate()
    except ValueError as exc:
        raise AnalysisError(str(exc)) from None
    a, b, c = record.counters
    if b > c:
        cat = RcCategory.RdmaIssueOrReceiverFailed
    elif a > b:
        cat = RcCategory.RdmaIssueOrReceiverNotReady
    elif a == 0:
        cat = RcCategory.UninitializedOrBlocked
    else:
        cat = RcCategory.GpuIssue
    if peer is not None:
        pa, pb, pc = peer.counters
        if a == b > c and pa == pb == pc:
            return cat, Side.Remote
        return cat, Side.Local
    if cat is RcCategory.GpuIssue:
        return cat, Side.Local
    return cat, Side.Undetermined


def check_min_op(last_logs: Dict[int, TraceRecord]) -> Optional[List[Tuple[int, TraceRecord]]]:
    """Ranks at the strictly smallest op_seq, or None when every rank is on the same op."""
    if not last_logs:
        raise AnalysisError("check_min_op needs at least one rank")
    seqs = {r: rec.op_seq for r, rec in last_logs.items()}
    lo = min(seqs.values())
    if lo == max(seqs.values()):
        return None
    return [(r, last_logs[r]) for r in sorted(seqs) if seqs[r] == lo]


def _progress(recs: Union[TraceRecord, Sequence[TraceRecord]]) -> Tuple[float, float, float]:
    if not isinstance(recs, (list, tuple)):
        recs = [recs]
    done = sent = ready = 0.0
    for rec in recs:
        if rec.type == "completion":
            return (float("inf"),) * 3
        done += rec.rdma_done
        sent += rec.rdma_transmitted
        ready += rec.gpu_ready
    return done, sent, ready


def check_min_data(last_logs: Dict[int, Union[TraceRecord, Sequence[TraceRecord]]]) -> List[Tuple[int, object]]:
    """Ranks with the least (rdma_done, rdma_transmitted, gpu_ready), summed over their flows.

    Every tied rank is returned, so an all-equal group yields all members.
    """
    if not last_logs:
        raise AnalysisError("check_min_data needs at least one rank")
    prog = {r: _progress(v) for r, v in last_logs.items()}
    lo = min(prog.values())
    return [(r, last_logs[r]) for r in sorted(prog) if prog[r] == lo]


# --- store view used by the failure path ----------------------------------


@dataclass
class _OpView:
    states: Dict[int, List[StateRecord]] = field(default_factory=lambda: defaultdict(list))
    comps: Dict[int, CompletionRecord] = field(default_factory=dict)

    def latest(self, ch: int) -> Optional[StateRecord]:
        lst = self.states.get(ch)
        return lst[-1] if lst else None

    def channels(self) -> List[int]:
        return sorted(set(self.states) | set(self.comps))

    def incomplete(self) -> List[int]:
        return [ch for ch in sorted(self.states) if ch not in self.comps]

    def done_count(self, ch: int) -> int:
        if ch in self.comps:
            s = self.latest(ch)
            return s.total_chunks if s is not None else 1 << 30
        s = self.latest(ch)
        return s.rdma_done if s is not None else 0


class _View:
    def __init__(self, store: TraceStore, topo: Topology, program: Optional[OpProgram], t: float, delta: float):
        self.store = store
        self.topo = topo
        self.program = program
        self.t = t
        self.lo = t - delta
        self._recs: Dict[int, List[TraceRecord]] = {}
        self._ops: Dict[int, Dict[int, _OpView]] = {}
        self.scanned = 0

    def recs(self, r: int) -> List[TraceRecord]:
        if r not in self._recs:
            self._recs[r] = self.store.records(r, t1=self.t)
            self.scanned += len(self._recs[r])
        return self._recs[r]

    def ops(self, r: int) -> Dict[int, _OpView]:
        if r not in self._ops:
            out: Dict[int, _OpView] = defaultdict(_OpView)
            for rec in self.recs(r):
                v = out[rec.op_seq]
                if rec.type == "state":
                    v.states[rec.channel].append(rec)
                else:
                    v.comps[rec.channel] = rec
            self._ops[r] = out
        return self._ops[r]

    def latest(self, r: int) -> Optional[TraceRecord]:
        recs = self.recs(r)
        return recs[-1] if recs else None

    def current_op(self, r: int) -> Optional[int]:
        last = self.latest(r)
        return None if last is None else max(self.ops(r))

    def started(self, r: int, op_seq: int) -> bool:
        cur = self.current_op(r)
        return cur is not None and cur >= op_seq

    def op_name(self, op_seq: int, r: int) -> str:
        if self.program is not None and len(self.program):
            spec = self.program.spec_for(op_seq)
            return self.program.side(spec, r)
        v = self.ops(r).get(op_seq)
        if v and v.comps:
            return next(iter(v.comps.values())).op_name
        return "AllGather"

    def send_endpoints(self, op_seq: int) -> Optional[Tuple[int, int]]:
        if self.program is None or not len(self.program):
            return None
        spec = self.program.spec_for(op_seq)
        if spec.op_name != "Send":
            return None
        return spec.src, spec.dst

    def window_snapshots(self, r: int, op_seq: int, ch: int) -> List[StateRecord]:
        lst = self.ops(r)[op_seq].states.get(ch, [])
        inside = [s for s in lst if s.window_end_ms >= self.lo]
        return inside or lst[-1:]


def _n_steps(op_name: str, n: int) -> int:
    return 2 * (n - 1) if op_name == "AllReduce" else n - 1


# --- failure path ----------------------------------------------------------


def _incomplete_group(store: TraceStore, group: CommGroup, lo: float, t: float) -> bool:
    for r in group.members:
        recs = [x for x in store.records(r, lo, t) if x.comm_id == group.comm_id]
        if not recs:
            continue
        done = {(x.op_seq, x.channel) for x in store.records(r, t1=t)
                if x.type == "completion" and x.comm_id == group.comm_id}
        for x in recs:
            if x.type == "state" and (x.op_seq, x.channel) not in done:
                return True
    return False


def incomplete_groups(store: TraceStore, topo: Topology, t: float, delta_ms: float) -> List[CommGroup]:
    """Exhaustive scan: every group with a member holding an unfinished flow in [t - delta, t]."""
    return [g for g in topo.groups if _incomplete_group(store, g, t - delta_ms, t)]


def affected_groups(store: TraceStore, topo: Topology, trigger: TriggerEvent,
                    delta_ms: float) -> List[CommGroup]:
    """Incomplete groups, breadth-first from the trigger rank's groups through shared members."""
    t = trigger.time_ms
    bad = {g.comm_id for g in incomplete_groups(store, topo, t, delta_ms)}
    if not bad:
        raise FalseTrigger(f"no incomplete group around t={t}")
    order: List[int] = []
    seen = set()
    queue = deque(g.comm_id for g in topo.groups_containing(trigger.suspect_rank))
    while queue:
        gid = queue.popleft()
        if gid in seen:
            continue
        seen.add(gid)
        if gid not in bad:
            continue
        order.append(gid)
        for r in topo.group(gid).members:
            for g in topo.groups_containing(r):
                if g.comm_id not in seen:
                    queue.append(g.comm_id)
    order += sorted(bad - set(order))
    return [topo.group(gid) for gid in order]


@dataclass
class _Diagnosis:
    blames: List[int] = field(default_factory=list)
    root: Optional[Suspect] = None
    evidence: List[TraceRecord] = field(default_factory=list)


def _classify(view: _View, r: int, op_seq: int, stuck: List[int], send_to: Optional[int]) -> Tuple[Suspect, List]:
    v = view.ops(r)[op_seq]
    latest = [v.latest(ch) for ch in stuck]
    evidence: List[TraceRecord] = list(latest)
    # staged data, receiver posted, yet nothing ever went on the wire: the proxy started late
    if (send_to is not None and not view.topo.same_node(r, send_to) and not v.comps
            and all(s.rdma_transmitted == 0 and s.gpu_ready > 0 for s in latest)):
        return Suspect(r, RcCategory.StragglerLateStart, Side.Local), evidence
    votes: Counter = Counter()
    for ch in stuck:
        for s in view.window_snapshots(r, op_seq, ch):
            votes[check_rc_table(s)[0]] += 1
    best = max(votes.values())
    cat = next(c for c in _PRECEDENCE if votes.get(c) == best)
    side = Side.Local if cat is RcCategory.GpuIssue else Side.Undetermined
    ends = view.send_endpoints(op_seq)
    if ends is not None and ends[0] == r:
        peer_view = view.ops(ends[1]).get(op_seq)
        for ch, s in zip(stuck, latest):
            peer = peer_view.latest(ch) if peer_view else None
            if peer is not None and check_rc_table(s)[0] is cat:
                side = check_rc_table(s, peer)[1]
                evidence.append(peer)
                break
    return Suspect(r, cat, side), evidence


def _diagnose(view: _View, r: int) -> _Diagnosis:
    topo = view.topo
    op_seq = view.current_op(r)
    if op_seq is None:
        return _Diagnosis(root=Suspect(r, RcCategory.UninitializedOrBlocked, Side.Undetermined))
    v = view.ops(r)[op_seq]
    gid = (next(iter(v.comps.values())) if v.comps else v.latest(v.channels()[0])).comm_id
    group = topo.group(gid)
    name = view.op_name(op_seq, r)
    ends = view.send_endpoints(op_seq)
    incomplete = v.incomplete()

    if name == "Recv":
        src = ends[0] if ends else next(m for m in group.members if m != r)
        if incomplete:
            return _Diagnosis(blames=[src], evidence=[v.latest(ch) for ch in incomplete])
        return _idle(view, r, op_seq)

    if name == "Send":
        receiver = ends[1] if ends else next(m for m in group.members if m != r)
        pred = None
    else:
        receiver = ring_successor(group, r)
        pred = ring_predecessor(group, r)

    blames: List[int] = []
    stuck: List[int] = []
    for ch in incomplete:
        s = v.latest(ch)
        if not view.started(receiver, op_seq):
            blames.append(receiver)
            continue
        if pred is not None and s.gpu_ready < s.total_chunks:
            k = s.total_chunks // max(1, _n_steps(name, len(group)))
            if k and s.gpu_ready >= k:
                pred_v = view.ops(pred).get(op_seq)
                pred_done = pred_v.done_count(ch) if pred_v else 0
                # allow one chunk of slack for the chunk being staged right now
                if pred_done <= s.gpu_ready - k + 1:
                    blames.append(pred)
                    continue
        stuck.append(ch)
    if stuck:
        sus, ev = _classify(view, r, op_seq, stuck, receiver)
        return _Diagnosis(root=sus, evidence=ev)
    if blames:
        return _Diagnosis(blames=sorted(set(blames)), evidence=[v.latest(ch) for ch in incomplete])
    if pred is not None:
        pred_v = view.ops(pred).get(op_seq)
        if pred_v is None or pred_v.incomplete() or not pred_v.comps:
            return _Diagnosis(blames=[pred])
    return _idle(view, r, op_seq)


def _idle(view: _View, r: int, op_seq: int) -> _Diagnosis:
    """Rank finished its op and has not started the next one: blame unfinished dependencies."""
    prog = view.program
    if prog is None or not len(prog):
        return _Diagnosis()
    n = len(prog)
    it, idx = divmod(op_seq, n)
    nxt = None
    for step in range(1, 2 * n + 1):
        seq = op_seq + step
        spec = prog.spec_for(seq)
        if r in prog.participants(spec, view.topo):
            nxt = seq
            break
    if nxt is None:
        return _Diagnosis()
    spec = prog.spec_for(nxt)
    base = (nxt // n) * n
    blames = []
    for d in spec.depends_on:
        dep_seq = base + d
        dspec = prog.spec_for(dep_seq)
        for p in prog.participants(dspec, view.topo):
            pv = view.ops(p).get(dep_seq)
            if not view.started(p, dep_seq) or (pv is not None and pv.incomplete()):
                blames.append(p)
    return _Diagnosis(blames=sorted(set(blames)))


def _seed_suspects(view: _View, store: TraceStore, group: CommGroup, t: float) -> List[int]:
    last = last_log_per_rank(store, group, t)
    if not last:
        return []
    behind = check_min_op(last)
    if behind is not None:
        return [r for r, _ in behind]
    ends = view.send_endpoints(next(iter(last.values())).op_seq)
    flows = {}
    for r, rec in last.items():
        if ends is not None and r == ends[1]:
            continue  # receiver-side counters mirror the sender
        ov = view.ops(r).get(rec.op_seq)
        snap = [ov.latest(ch) if ch not in ov.comps else ov.comps[ch] for ch in ov.channels()] if ov else [rec]
        flows[r] = snap or [rec]
    if not flows:
        flows = {r: rec for r, rec in last.items()}
    return [r for r, _ in check_min_data(flows)]


def analyze_failure(store: TraceStore, topo: Topology, trigger: TriggerEvent, cfg: AnalysisConfig,
                    program: Optional[OpProgram] = None) -> RootCauseReport:
    """Localize a stall to the rank(s) whose stuck flows nobody else explains."""
    t = trigger.time_ms
    view = _View(store, topo, program, t, cfg.delta_ms)
    try:
        groups = affected_groups(store, topo, trigger, cfg.delta_ms)
    except FalseTrigger:
        return RootCauseReport(FAILURE, trigger, "false_trigger", analysis_ms=t, records_scanned=view.scanned)
    order = {k: i for i, k in enumerate(GROUP_KINDS)}
    groups = sorted(groups, key=lambda g: (order[g.kind], g.comm_id))

    seeds: List[int] = []
    for g in groups:
        for r in _seed_suspects(view, store, g, t):
            if r not in seeds:
                seeds.append(r)
    # every member of an affected group is explained too, so exonerations are listed with their chain
    candidates = list(seeds)
    for g in groups:
        candidates += [r for r in g.members if r not in candidates]

    diags: Dict[int, _Diagnosis] = {}
    reach: Dict[int, frozenset] = {}

    def resolve(start: int) -> frozenset:
        # iterative depth-first walk over blame edges; a cycle contributes no root
        stack = [start]
        walks: Dict[int, Iterable[int]] = {}
        acc: Dict[int, set] = {}

        def finish(r: int, found: frozenset) -> None:
            reach[r] = found
            stack.pop()
            if stack:
                acc[stack[-1]] |= found

        while stack:
            r = stack[-1]
            if r not in walks:
                if r not in diags:
                    diags[r] = _diagnose(view, r)
                if diags[r].root is not None:
                    finish(r, frozenset([r]))
                    continue
                walks[r] = iter(diags[r].blames)
                acc[r] = set()
            nxt = next(walks[r], None)
            if nxt is None:
                finish(r, frozenset(acc.pop(r)))
            elif nxt in reach:
                acc[r] |= reach[nxt]
            elif nxt not in stack:
                stack.append(nxt)
        return reach[start]

    roots: Dict[int, Suspect] = {}
    evidence: Dict[tuple, TraceRecord] = {}
    for c in candidates:
        for r in reach[c] if c in reach else resolve(c):
            if r not in roots:
                roots[r] = diags[r].root
                for e in diags[r].evidence:
                    if e is not None:
                        evidence[(e.type, e.rank, e.channel, e.op_seq, e.time_ms)] = e
    exonerated = sorted(r for r, rs in reach.items() if rs and r not in roots)

    suspects = [roots[r] for r in sorted(roots)]
    ev = sorted(evidence.values(), key=lambda e: (e.time_ms, e.rank, e.channel))
    if not suspects:
        ev = [view.latest(r) for r in seeds if view.latest(r) is not None]
        return RootCauseReport(FAILURE, trigger, "undetermined", [], [g.comm_id for g in groups], ev,
                               exonerated, t, view.scanned)
    if not ev:
        ev = [view.latest(s.rank) for s in suspects if view.latest(s.rank) is not None]
    return RootCauseReport(FAILURE, trigger, "root_cause", suspects, [g.comm_id for g in groups], ev,
                           exonerated, t, view.scanned)


# --- straggler path --------------------------------------------------------


def _iteration_bounds(comps: Iterable[CompletionRecord], n_ops: int) -> Dict[int, Tuple[float, float]]:
    out: Dict[int, List[float]] = {}
    for c in comps:
        it = c.op_seq // n_ops
        b = out.setdefault(it, [c.start_ms, c.end_ms])
        b[0] = min(b[0], c.start_ms)
        b[1] = max(b[1], c.end_ms)
    return {it: (lo, hi) for it, (lo, hi) in out.items()}


def _late_ranks(per_rank: Dict[int, Dict[int, Tuple[float, float]]], iters: List[int], which: int,
                threshold: float) -> List[int]:
    late = []
    for r, bounds in per_rank.items():
        ok = True
        for it in iters:
            others = [per_rank[o][it][which] for o in per_rank if o != r and it in per_rank[o]]
            if it not in bounds or not others:
                ok = False
                break
            if bounds[it][which] - statistics.median(others) < threshold:
                ok = False
                break
        if ok:
            late.append(r)
    return late


def analyze_straggler(store: TraceStore, topo: Topology, trigger: TriggerEvent, cfg: AnalysisConfig,
                      program: Optional[OpProgram] = None) -> RootCauseReport:
    """Flag ranks that start or end late on k consecutive iterations, then skewed or stuck flows.

    Lateness is measured against the median of the other group members, so a
    two-member group compares the rank against its single peer.
    """
    t = trigger.time_ms
    n_ops = len(program) if program is not None and len(program) else 1
    k = cfg.consecutive_iterations_k
    scanned = 0
    comps_by_rank: Dict[int, List[CompletionRecord]] = {}
    states_by_rank: Dict[int, List[StateRecord]] = {}
    for r in range(topo.world_size):
        recs = store.records(r, t1=t)
        scanned += len(recs)
        comps_by_rank[r] = [x for x in recs if x.type == "completion"]
        states_by_rank[r] = [x for x in recs if x.type == "state"]

    all_iters = sorted({c.op_seq // n_ops for cs in comps_by_rank.values() for c in cs})
    if len(all_iters) < k:
        raise InsufficientHistory(f"need {k} iterations of history, found {len(all_iters)}")

    found: Dict[int, Suspect] = {}
    evidence: List[TraceRecord] = []
    groups_hit: List[int] = []
    for g in topo.groups:
        per_rank = {}
        for r in g.members:
            cs = [c for c in comps_by_rank[r] if c.comm_id == g.comm_id]
            if cs:
                per_rank[r] = _iteration_bounds(cs, n_ops)
        if len(per_rank) < 2:
            continue
        common = sorted(set.intersection(*(set(b) for b in per_rank.values())))
        if len(common) < k:
            continue
        recent = common[-k:]
        for which, cat in ((0, RcCategory.StragglerLateStart), (1, RcCategory.StragglerLateEnd)):
            for r in _late_ranks(per_rank, recent, which, cfg.straggler_threshold_ms):
                if r not in found:
                    found[r] = Suspect(r, cat, Side.Local)
                    evidence.extend(c for c in comps_by_rank[r]
                                    if c.comm_id == g.comm_id and c.op_seq // n_ops == recent[-1])
                if g.comm_id not in groups_hit:
                    groups_hit.append(g.comm_id)

    lo = t - cfg.delta_ms * max(1, k)
    for r in range(topo.world_size):
        if r in found:
            continue
        by_op: Dict[int, List[CompletionRecord]] = defaultdict(list)
        for c in comps_by_rank[r]:
            if c.end_ms >= lo:
                by_op[c.op_seq].append(c)
        for seq in sorted(by_op):
            flows = by_op[seq]
            if len(flows) < 2:
                continue
            for f in flows:
                sib = [x.end_ms - x.start_ms for x in flows if x is not f]
                ref = statistics.median(sib)
                if ref > 0 and f.end_ms - f.start_ms > cfg.flow_skew_factor * ref:
                    found[r] = Suspect(r, RcCategory.FlowSkewed, Side.Local)
                    evidence.append(f)
                    groups_hit.append(f.comm_id)
                    break
            if r in found:
                break
        if r in found:
            continue
        if not states_by_rank[r]:
            continue
        cur = states_by_rank[r][-1].op_seq
        done = {c.channel for c in comps_by_rank[r] if c.op_seq == cur}
        if not done:
            continue
        for s in reversed(states_by_rank[r]):
            if s.op_seq != cur:
                break
            if s.channel not in done and s.stuck_ms >= cfg.straggler_threshold_ms:
                found[r] = Suspect(r, RcCategory.FlowIncomplete, Side.Local)
                evidence.append(s)
                groups_hit.append(s.comm_id)
                break

    suspects = [found[r] for r in sorted(found)]
    verdict = "root_cause" if suspects else "none"
    return RootCauseReport(STRAGGLER, trigger, verdict, suspects, sorted(set(groups_hit)), evidence, [], t, scanned)


def analyze(store: TraceStore, topo: Topology, trigger: TriggerEvent, cfg: AnalysisConfig,
            program: Optional[OpProgram] = None) -> RootCauseReport:
    if trigger.kind == FAILURE:
        return analyze_failure(store, topo, trigger, cfg, program)
    if trigger.kind == STRAGGLER:
        try:
            return analyze_straggler(store, topo, trigger, cfg, program)
        except InsufficientHistory:
            return RootCauseReport(STRAGGLER, trigger, "undetermined", analysis_ms=trigger.time_ms)
    raise AnalysisError(f"unknown trigger kind {trigger.kind!r}")
