"""Deterministic discrete-event simulation of ring collectives and
point-to-point transfers under hybrid parallelism, with fault injection.

Each sending flow runs a three-stage chunk pipeline:

    GPU staging (copy or reduce)  ->  RDMA write on the wire  ->  completion ack

Staging is serial per flow and limited by ``slots_per_flow`` buffers that are
only released by acks; the wire is serial per flow; acks are pure latency.
Ring steps after the first can only stage a chunk once the predecessor's copy
of that chunk has been acknowledged, which is what makes a slow rank cascade
around the ring.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, SimulatorBug
from .topology import CommGroup, NicId, Topology, ring_predecessor, ring_successor
from .tracelib import CompletionRecord, RingBuffer, StateRecord, TraceRecord, emit

MiB = 1 << 20

COLLECTIVES = ("AllGather", "ReduceScatter", "AllReduce")
P2P = ("Send", "Recv")

FAULT_KINDS = (
    "NicShutdown",
    "NicBandwidthLimit",
    "PcieDowngrade",
    "GpuPowerLimit",
    "BackgroundCompute",
    "BackgroundTraffic",
    "ProxyDelay",
)
NIC_FAULTS = ("NicShutdown", "NicBandwidthLimit", "BackgroundTraffic")
RANK_FAULTS = ("PcieDowngrade", "GpuPowerLimit", "ProxyDelay")
NODE_FAULTS = ("BackgroundCompute",)


@dataclass(frozen=True)
class SimConfig:
    chunk_bytes: int = 4 * MiB
    link_bandwidth: float = 4.0 * MiB  # bytes/ms per flow
    intra_bandwidth: Optional[float] = None  # defaults to 10x link_bandwidth
    link_latency: float = 0.005
    ack_latency: float = 0.005
    copy_rate: float = 8.0 * MiB  # bytes/ms
    reduce_cost: float = 1.0  # reduce staging time relative to a plain copy
    slots_per_flow: int = 8
    state_log_window: float = 100.0
    abandon_after_ms: float = 5000.0
    seed: int = 0
    iteration_count: int = 1
    buffer_capacity: int = 1 << 20

    def __post_init__(self):
        for name in ("chunk_bytes", "link_bandwidth", "link_latency", "ack_latency", "copy_rate",
                     "reduce_cost", "slots_per_flow", "state_log_window", "abandon_after_ms",
                     "buffer_capacity"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"sim.{name} must be > 0, got {getattr(self, name)!r}")
        if self.intra_bandwidth is not None and not self.intra_bandwidth > 0:
            raise ConfigError("sim.intra_bandwidth must be > 0")
        if self.iteration_count < 0:
            raise ConfigError("sim.iteration_count must be >= 0")

    @property
    def intra_bw(self) -> float:
        return self.intra_bandwidth if self.intra_bandwidth is not None else 10.0 * self.link_bandwidth


@dataclass(frozen=True)
class CollOpSpec:
    op_seq: int
    op_name: str
    group: int
    msg_bytes: int
    depends_on: Tuple[int, ...] = ()
    src: Optional[int] = None  # Send only
    dst: Optional[int] = None  # Send only


@dataclass
class OpProgram:
    """Ops of one iteration; repeated ``iteration_count`` times."""

    ops: List[CollOpSpec]

    def __len__(self) -> int:
        return len(self.ops)

    def validate(self, topo: Topology) -> None:
        for i, op in enumerate(self.ops):
            if op.op_seq != i:
                raise ConfigError(f"op_seq {op.op_seq} at position {i}; op_seq must equal list position")
            if not 0 <= op.group < len(topo.groups):
                raise ConfigError(f"op {i} references unknown group {op.group}")
            if op.msg_bytes <= 0:
                raise ConfigError(f"op {i} has non-positive msg_bytes")
            for d in op.depends_on:
                if not 0 <= d < i:
                    raise ConfigError(f"op {i} depends on {d}, which is not an earlier op")
            g = topo.group(op.group)
            if op.op_name in COLLECTIVES:
                if len(g) < 2:
                    raise ConfigError(f"op {i}: {op.op_name} on singleton group {g.comm_id}")
            elif op.op_name == "Send":
                if op.src not in g or op.dst not in g or op.src == op.dst:
                    raise ConfigError(f"op {i}: Send endpoints must be distinct members of group {g.comm_id}")
            else:
                raise ConfigError(f"op {i}: unsupported op_name {op.op_name!r}")

    def participants(self, op: CollOpSpec, topo: Topology) -> Tuple[int, ...]:
        if op.op_name == "Send":
            return (op.src, op.dst)
        return topo.group(op.group).members

    def flow_peer(self, op: CollOpSpec, topo: Topology, rank: int) -> Tuple[int, int]:
        """``(src, dst)`` of the flows ``rank`` traces for this op."""
        if op.op_name == "Send":
            return op.src, op.dst
        return rank, ring_successor(topo.group(op.group), rank)

    def side(self, op: CollOpSpec, rank: int) -> str:
        """Name recorded by ``rank`` for this op (the receiver logs Send as Recv)."""
        if op.op_name == "Send" and rank == op.dst:
            return "Recv"
        return op.op_name

    def spec_for(self, op_seq: int) -> CollOpSpec:
        return self.ops[op_seq % len(self.ops)]


def _gid(g: CommGroup) -> int:
    return g.comm_id


def default_program(topo: Topology, msg_bytes: int) -> OpProgram:
    """One training iteration: per PP stage, Recv -> TP AllGather -> Send -> DP ReduceScatter -> DP AllGather."""
    ops: List[CollOpSpec] = []

    def add(name, group, deps, src=None, dst=None) -> int:
        ops.append(CollOpSpec(len(ops), name, group, msg_bytes, tuple(sorted(set(deps))), src, dst))
        return len(ops) - 1

    sends_into: Dict[Tuple[int, int], int] = {}  # (dp_i, tp_i) -> op index of send into current stage
    for s in range(topo.pp):
        tp_ops: Dict[int, Optional[int]] = {}
        for d in range(topo.dp):
            g = topo.group_of(topo.coords_to_rank(d, s, 0), "TP")
            deps = [sends_into[(d, t)] for t in range(topo.tp) if (d, t) in sends_into]
            tp_ops[d] = add("AllGather", g.comm_id, deps) if len(g) > 1 else None
        next_sends: Dict[Tuple[int, int], int] = {}
        if s + 1 < topo.pp:
            for d in range(topo.dp):
                for t in range(topo.tp):
                    src = topo.coords_to_rank(d, s, t)
                    dst = topo.coords_to_rank(d, s + 1, t)
                    deps = [tp_ops[d]] if tp_ops[d] is not None else []
                    if (d, t) in sends_into:
                        deps.append(sends_into[(d, t)])
                    next_sends[(d, t)] = add("Send", topo.group_of(src, "PP").comm_id, deps, src, dst)
        if topo.dp > 1:
            for t in range(topo.tp):
                g = topo.group_of(topo.coords_to_rank(0, s, t), "DP")
                deps = [tp_ops[d] for d in range(topo.dp) if tp_ops[d] is not None]
                deps += [sends_into[(d, t)] for d in range(topo.dp) if (d, t) in sends_into]
                rs = add("ReduceScatter", g.comm_id, deps)
                add("AllGather", g.comm_id, [rs])
        sends_into = next_sends
    return OpProgram(ops)


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    target: Union[int, Tuple[int, int]]
    onset: float = 0.0
    bandwidth_factor: float = 1.0
    copy_factor: float = 1.0
    delay_ms: float = 0.0
    delay_prob: float = 0.0
    stop_logs_after_ms: Optional[float] = None

    def validate(self, topo: Topology) -> None:
        if self.kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {self.kind!r}")
        if self.onset < 0:
            raise ConfigError("fault onset must be >= 0")
        for name in ("bandwidth_factor", "copy_factor"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if not 0 <= self.delay_prob <= 1:
            raise ConfigError(f"delay_prob must be in [0, 1], got {self.delay_prob}")
        if self.delay_ms < 0:
            raise ConfigError("delay_ms must be >= 0")
        n_nodes = len(topo.nodes)
        if self.kind in NIC_FAULTS:
            t = self.target
            if not (isinstance(t, tuple) and len(t) == 2 and 0 <= t[0] < n_nodes
                    and 0 <= t[1] < topo.nics_per_node):
                raise ConfigError(f"{self.kind} target must be an existing (node, nic) pair, got {t!r}")
        elif self.kind in RANK_FAULTS:
            if not (isinstance(self.target, int) and 0 <= self.target < topo.world_size):
                raise ConfigError(f"{self.kind} target must be an existing rank, got {self.target!r}")
        else:
            if not (isinstance(self.target, int) and 0 <= self.target < n_nodes):
                raise ConfigError(f"{self.kind} target must be an existing node, got {self.target!r}")

    def target_node(self, topo: Topology) -> int:
        if self.kind in NIC_FAULTS:
            return self.target[0]
        if self.kind in RANK_FAULTS:
            return topo.node_of(self.target)
        return self.target

    def target_ranks(self, topo: Topology) -> Tuple[int, ...]:
        if self.kind in RANK_FAULTS:
            return (self.target,)
        return topo.ranks_on_node(self.target_node(topo))


@dataclass
class RateTable:
    """Fault-adjusted rates; every lookup takes the current simulated time."""

    copy: Dict[int, List[Tuple[float, float]]] = field(default_factory=lambda: defaultdict(list))
    nic_bw: Dict[NicId, List[Tuple[float, float]]] = field(default_factory=lambda: defaultdict(list))
    nic_ack: Dict[NicId, List[Tuple[float, float]]] = field(default_factory=lambda: defaultdict(list))
    nic_down: Dict[NicId, float] = field(default_factory=dict)
    proxy: Dict[int, List[FaultSpec]] = field(default_factory=lambda: defaultdict(list))
    stop_logs: Dict[int, float] = field(default_factory=dict)

    def copy_factor(self, rank: int, now: float) -> float:
        f = 1.0
        for onset, factor in self.copy.get(rank, ()):
            if now >= onset:
                f *= factor
        return f

    def bw_factor(self, nic: NicId, now: float) -> float:
        down = self.nic_down.get(nic)
        if down is not None and now >= down:
            return 0.0
        f = 1.0
        for onset, factor in self.nic_bw.get(nic, ()):
            if now >= onset:
                f *= factor
        return f

    def ack_extra(self, nic: NicId, now: float) -> float:
        return sum(extra for onset, extra in self.nic_ack.get(nic, ()) if now >= onset)


def apply_fault(fault: FaultSpec, table: RateTable, topo: Topology) -> RateTable:
    """Register a fault's effect in the rate table; effects gate on ``onset`` at lookup time.

    NIC faults act on the egress side of the target NIC and only on
    inter-node flows; intra-node traffic does not touch the RNIC.
    """
    fault.validate(topo)
    kind = fault.kind
    if kind == "NicShutdown":
        nic = NicId(*fault.target)
        table.nic_down[nic] = min(fault.onset, table.nic_down.get(nic, math.inf))
        if fault.stop_logs_after_ms is not None:
            for r in topo.ranks_on_node(nic.node):
                t = fault.onset + fault.stop_logs_after_ms
                table.stop_logs[r] = min(t, table.stop_logs.get(r, math.inf))
    elif kind == "NicBandwidthLimit":
        table.nic_bw[NicId(*fault.target)].append((fault.onset, fault.bandwidth_factor))
    elif kind == "BackgroundTraffic":
        nic = NicId(*fault.target)
        table.nic_bw[nic].append((fault.onset, fault.bandwidth_factor))
        table.nic_ack[nic].append((fault.onset, fault.delay_ms))
    elif kind in ("PcieDowngrade", "GpuPowerLimit"):
        table.copy[fault.target].append((fault.onset, fault.copy_factor))
    elif kind == "BackgroundCompute":
        for r in topo.ranks_on_node(fault.target):
            table.copy[r].append((fault.onset, fault.copy_factor))
    elif kind == "ProxyDelay":
        table.proxy[fault.target].append(fault)
    else:  # pragma: no cover - validate() already rejects this
        raise ConfigError(f"unknown fault kind {kind!r}")
    return table


# --- simulation state --------------------------------------------------------


class _OpInst:
    __slots__ = ("op_seq", "spec", "iteration", "participants", "rankops", "finished", "done", "waiters",
                 "chunks_per_step", "n_steps", "seg_sizes")

    def __init__(self, op_seq, spec, iteration, participants):
        self.op_seq = op_seq
        self.spec = spec
        self.iteration = iteration
        self.participants = participants
        self.rankops: Dict[int, _RankOp] = {}
        self.finished = 0
        self.done = False
        self.waiters: List[int] = []


class _Flow:
    __slots__ = ("rop", "rank", "peer", "channel", "net", "sizes", "steps", "ready", "reduce", "k",
                 "staged", "transmitted", "done", "next_stage", "next_tx", "stage_busy", "wire_busy",
                 "first_post", "last_change", "finished_ms", "src_nic", "frozen")

    def __init__(self, rop, peer, channel, net, sizes, steps, reduce, k, now, src_nic):
        self.rop = rop
        self.rank = rop.rank
        self.peer = peer
        self.channel = channel
        self.net = net
        self.sizes = sizes
        self.steps = steps
        self.ready = [s == 0 for s in steps]
        self.reduce = reduce
        self.k = k  # chunks per step on this channel
        self.staged = self.transmitted = self.done = 0
        self.next_stage = self.next_tx = 0
        self.stage_busy = self.wire_busy = False
        self.first_post: Optional[float] = None
        self.last_change = now
        self.finished_ms: Optional[float] = None
        self.src_nic = src_nic
        self.frozen = False


class _RecvView:
    """Receiver-side counters for one channel of a point-to-point transfer."""

    __slots__ = ("channel", "total", "arrived", "last_change", "bytes", "peer")

    def __init__(self, channel, total, nbytes, now, peer):
        self.channel = channel
        self.total = total
        self.arrived = 0
        self.last_change = now
        self.bytes = nbytes
        self.peer = peer


class _RankOp:
    __slots__ = ("rank", "inst", "flows", "recv_views", "arrivals", "arrivals_needed", "started",
                 "finished", "step_arrivals", "proxy_drawn", "proxy_ready", "last_progress")

    def __init__(self, rank, inst, now):
        self.rank = rank
        self.inst = inst
        self.flows: List[_Flow] = []
        self.recv_views: Dict[int, _RecvView] = {}
        self.arrivals = 0
        self.arrivals_needed = 0
        self.started = now
        self.finished: Optional[float] = None
        self.step_arrivals: List[float] = []
        self.proxy_drawn = False
        self.proxy_ready = 0.0
        self.last_progress = now


@dataclass
class SimSummary:
    end_ms: float
    rank_op_times: Dict[Tuple[int, int], Tuple[float, Optional[float]]]
    step_arrivals: Dict[Tuple[int, int], List[float]]
    unfinished: List[Tuple[int, int]]
    completed: bool
    records_emitted: int
    records_dropped: int

    def op_durations(self) -> Dict[int, float]:
        spans: Dict[int, List[float]] = {}
        for (_, seq), (start, end) in self.rank_op_times.items():
            if end is None:
                continue
            lo_hi = spans.setdefault(seq, [start, end])
            lo_hi[0] = min(lo_hi[0], start)
            lo_hi[1] = max(lo_hi[1], end)
        return {seq: hi - lo for seq, (lo, hi) in sorted(spans.items())}

    def completion_times(self, op_seq: int) -> Dict[int, float]:
        return {r: end for (r, seq), (_, end) in self.rank_op_times.items() if seq == op_seq and end is not None}

    def to_dict(self) -> dict:
        per_rank: Dict[int, float] = {}
        for (r, _), (_, end) in self.rank_op_times.items():
            if end is not None:
                per_rank[r] = max(per_rank.get(r, 0.0), end)
        return {
            "end_ms": self.end_ms,
            "completed": self.completed,
            "rank_last_completion_ms": {str(r): per_rank[r] for r in sorted(per_rank)},
            "unfinished_ops": len(self.unfinished),
            "records_emitted": self.records_emitted,
            "records_dropped": self.records_dropped,
        }


class Simulator:
    """Event loop over one program run; drive with ``run()`` or ``run_until(t)``."""

    def __init__(self, topo: Topology, program: OpProgram, faults: Sequence[FaultSpec], cfg: SimConfig,
                 buffer: Optional[RingBuffer] = None):
        program.validate(topo)
        self.topo = topo
        self.program = program
        self.cfg = cfg
        self.faults = list(faults)
        self.rates = RateTable()
        for f in self.faults:
            apply_fault(f, self.rates, topo)
        self.buffer = buffer if buffer is not None else RingBuffer(cfg.buffer_capacity)
        self.rng = np.random.Generator(np.random.Philox(cfg.seed))
        self.now = 0.0
        self._heap: List[tuple] = []
        self._seq = 0
        self._pending_work = 0  # non-tick events in the heap
        self._tick_scheduled = False

        n_ops = len(program)
        self._insts: Dict[int, _OpInst] = {}
        self._rank_ops: Dict[int, List[int]] = {r: [] for r in range(topo.world_size)}
        for it in range(cfg.iteration_count):
            for spec in program.ops:
                seq = it * n_ops + spec.op_seq
                parts = program.participants(spec, topo)
                self._insts[seq] = _OpInst(seq, spec, it, parts)
                for r in parts:
                    self._rank_ops[r].append(seq)
        self._rank_idx = {r: 0 for r in self._rank_ops}
        self._active: Dict[int, _RankOp] = {}
        self._abandoned: set = set()
        self._all_rankops: List[_RankOp] = []
        self._started = False
        self.finished = False
        self.stalled = False

    # -- event plumbing --

    def _at(self, t: float, fn: Callable, *args) -> None:
        heapq.heappush(self._heap, (t, 0, self._seq, fn, args))
        self._seq += 1
        self._pending_work += 1

    def _schedule_tick(self, t: float) -> None:
        heapq.heappush(self._heap, (t, 1, self._seq, self._tick, ()))
        self._seq += 1
        self._tick_scheduled = True

    def _emit(self, rec: TraceRecord) -> None:
        stop = self.rates.stop_logs.get(rec.rank)
        if stop is not None and self.now >= stop:
            return
        emit(rec, self.buffer)

    def _start(self) -> None:
        self._started = True
        for r in sorted(self._rank_ops):
            self._try_start_rank(r)
        if (self._active or self._pending_work) and not self._tick_scheduled:
            self._schedule_tick(self.cfg.state_log_window)

    def run_until(self, t: float) -> None:
        """Process every event with time <= t (state ticks at exactly t included)."""
        if not self._started:
            self._start()
        while self._heap and self._heap[0][0] <= t:
            time, prio, _, fn, args = heapq.heappop(self._heap)
            if prio == 0:
                self._pending_work -= 1
            else:
                self._tick_scheduled = False
            self.now = time
            fn(*args)
        if not self._heap:
            self._finish_check()
        else:
            self.now = max(self.now, t)

    def run(self) -> SimSummary:
        self.run_until(math.inf)
        return self.summary()

    @property
    def idle(self) -> bool:
        return not self._heap

    def _finish_check(self) -> None:
        unfinished = [r for r, ops in self._rank_ops.items() if self._rank_idx[r] < len(ops)]
        if not unfinished:
            self.finished = True
            return
        if any(f.onset <= self.now for f in self.faults):
            self.stalled = True
            return
        raise SimulatorBug(
            f"event queue empty at t={self.now} with {len(unfinished)} rank(s) unfinished and no active fault"
        )

    # -- rank / op lifecycle --

    def _try_start_rank(self, r: int) -> None:
        idx = self._rank_idx[r]
        ops = self._rank_ops[r]
        if idx >= len(ops) or r in self._active:
            return
        inst = self._insts[ops[idx]]
        base = inst.iteration * len(self.program)
        for d in inst.spec.depends_on:
            dep = self._insts[base + d]
            if not dep.done:
                dep.waiters.append(r)
                return
        self._start_rankop(r, inst)

    def _start_rankop(self, r: int, inst: _OpInst) -> None:
        cfg = self.cfg
        topo = self.topo
        now = self.now
        rop = _RankOp(r, inst, now)
        inst.rankops[r] = rop
        self._active[r] = rop
        self._all_rankops.append(rop)
        spec = inst.spec
        F = topo.channels_per_pair

        if spec.op_name == "Send":
            chunks = _split(spec.msg_bytes, cfg.chunk_bytes)
            if r == spec.src:
                self._make_flows(rop, spec.dst, [chunks], reduce_from=None)
            else:
                for ch in range(F):
                    mine = chunks[ch::F]
                    if mine:
                        rop.recv_views[ch] = _RecvView(ch, len(mine), sum(mine), now, spec.src)
                rop.arrivals_needed = len(chunks)
                rop.step_arrivals = [0.0]
        else:
            group = topo.group(spec.group)
            n = len(group)
            seg = _split(-(-spec.msg_bytes // n), cfg.chunk_bytes)
            if spec.op_name == "AllReduce":
                n_steps = 2 * (n - 1)
                reduce_steps = set(range(1, n))
            elif spec.op_name == "ReduceScatter":
                n_steps = n - 1
                reduce_steps = set(range(1, n - 1))
            else:
                n_steps = n - 1
                reduce_steps = set()
            succ = ring_successor(group, r)
            self._make_flows(rop, succ, [seg] * n_steps, reduce_from=reduce_steps)
            rop.arrivals_needed = len(seg) * n_steps
            rop.step_arrivals = [0.0] * n_steps

        # the predecessor may already be waiting for this receiver to show up
        for other in inst.rankops.values():
            if other is rop:
                continue
            for fl in other.flows:
                if fl.peer == r:
                    self._try_tx(fl)
        for fl in rop.flows:
            self._try_stage(fl)
        if not rop.flows and rop.arrivals_needed == 0:
            self._finish_rankop(rop)
        elif not self._tick_scheduled:
            self._schedule_tick(_next_tick(self.now, cfg.state_log_window))

    def _make_flows(self, rop: _RankOp, peer: int, steps_chunks: List[List[int]], reduce_from) -> None:
        topo = self.topo
        F = topo.channels_per_pair
        net = not topo.same_node(rop.rank, peer)
        for ch in range(F):
            sizes: List[int] = []
            steps: List[int] = []
            reduce: List[bool] = []
            k = 0
            for s, chunks in enumerate(steps_chunks):
                mine = chunks[ch::F]
                k = len(mine)
                sizes.extend(mine)
                steps.extend([s] * len(mine))
                reduce.extend([bool(reduce_from) and s in reduce_from] * len(mine))
            if not sizes:
                continue
            rop.flows.append(_Flow(rop, peer, ch, net, sizes, steps, reduce, k, self.now,
                                   topo.rank_to_nic(rop.rank, ch)))

    def _finish_rankop(self, rop: _RankOp) -> None:
        rop.finished = self.now
        r = rop.rank
        del self._active[r]
        self._rank_idx[r] += 1
        inst = rop.inst
        inst.finished += 1
        if inst.finished == len(inst.participants):
            inst.done = True
            waiters, inst.waiters = inst.waiters, []
            for w in waiters:
                self._try_start_rank(w)
        self._try_start_rank(r)

    def _maybe_finish(self, rop: _RankOp) -> None:
        if rop.finished is not None:
            return
        if rop.arrivals < rop.arrivals_needed:
            return
        if any(fl.finished_ms is None for fl in rop.flows):
            return
        self._finish_rankop(rop)

    # -- chunk pipeline --

    def _try_stage(self, fl: _Flow) -> None:
        if fl.stage_busy or fl.next_stage >= len(fl.sizes):
            return
        i = fl.next_stage
        if not fl.ready[i]:
            return
        if i >= self.cfg.slots_per_flow and fl.done <= i - self.cfg.slots_per_flow:
            return
        rate = self.cfg.copy_rate * self.rates.copy_factor(fl.rank, self.now)
        dur = fl.sizes[i] / rate
        if fl.reduce[i]:
            dur *= self.cfg.reduce_cost
        fl.stage_busy = True
        self._at(self.now + dur, self._on_staged, fl)

    def _on_staged(self, fl: _Flow) -> None:
        fl.stage_busy = False
        fl.next_stage += 1
        fl.staged += 1
        fl.last_change = self.now
        fl.rop.last_progress = self.now
        self._try_stage(fl)
        self._try_tx(fl)

    def _try_tx(self, fl: _Flow) -> None:
        if fl.wire_busy or fl.frozen or fl.next_tx >= fl.staged:
            return
        if fl.peer not in fl.rop.inst.rankops:
            return  # receiver has not posted its side of the op yet
        rop = fl.rop
        if fl.net and fl.rank in self.rates.proxy:
            if not rop.proxy_drawn:
                rop.proxy_drawn = True
                delay = 0.0
                for f in self.rates.proxy[fl.rank]:
                    if self.now >= f.onset and self.rng.random() < f.delay_prob:
                        delay += f.delay_ms
                if delay > 0:
                    rop.proxy_ready = self.now + delay
                    self._at(rop.proxy_ready, self._proxy_wake, rop)
            if self.now < rop.proxy_ready:
                return
        if fl.net:
            bw = self.cfg.link_bandwidth * self.rates.bw_factor(fl.src_nic, self.now)
        else:
            bw = self.cfg.intra_bw
        if bw <= 0:
            fl.frozen = True
            return
        i = fl.next_tx
        fl.next_tx += 1
        fl.wire_busy = True
        if fl.first_post is None:
            fl.first_post = self.now
        ser = fl.sizes[i] / bw
        self._at(self.now + ser, self._on_wire_free, fl)
        self._at(self.now + ser + self.cfg.link_latency, self._on_transmitted, fl, i)

    def _proxy_wake(self, rop: _RankOp) -> None:
        for fl in rop.flows:
            self._try_tx(fl)

    def _on_wire_free(self, fl: _Flow) -> None:
        fl.wire_busy = False
        self._try_tx(fl)

    def _on_transmitted(self, fl: _Flow, i: int) -> None:
        fl.transmitted += 1
        fl.last_change = self.now
        fl.rop.last_progress = self.now
        extra = self.rates.ack_extra(fl.src_nic, self.now) if fl.net else 0.0
        self._at(self.now + self.cfg.ack_latency + extra, self._on_ack, fl, i)

    def _on_ack(self, fl: _Flow, i: int) -> None:
        fl.done += 1
        fl.last_change = self.now
        rop = fl.rop
        rop.last_progress = self.now
        self._try_stage(fl)
        # delivery at the receiver
        recv = rop.inst.rankops[fl.peer]
        recv.arrivals += 1
        recv.last_progress = self.now
        step = fl.steps[i]
        if recv.recv_views:
            view = recv.recv_views[fl.channel]
            view.arrived += 1
            view.last_change = self.now
            recv.step_arrivals[0] = self.now
            if view.arrived == view.total:
                self._emit(CompletionRecord(
                    node=self.topo.node_of(recv.rank), comm_id=rop.inst.spec.group, rank=recv.rank,
                    channel=fl.channel, op_seq=rop.inst.op_seq, op_name="Recv", msg_bytes=view.bytes,
                    start_ms=recv.started, end_ms=self.now))
        else:
            recv.step_arrivals[step] = max(recv.step_arrivals[step], self.now)
            j = i + fl.k
            if step + 1 < len(recv.step_arrivals):
                for rfl in recv.flows:
                    if rfl.channel == fl.channel:
                        rfl.ready[j] = True
                        self._try_stage(rfl)
                        break
        if fl.done == len(fl.sizes):
            fl.finished_ms = self.now
            self._emit(CompletionRecord(
                node=self.topo.node_of(fl.rank), comm_id=rop.inst.spec.group, rank=fl.rank,
                channel=fl.channel, op_seq=rop.inst.op_seq, op_name=self.program.side(rop.inst.spec, fl.rank),
                msg_bytes=sum(fl.sizes), start_ms=fl.first_post, end_ms=self.now))
            self._maybe_finish(rop)
        self._maybe_finish(recv)

    # -- periodic state log --

    def _tick(self) -> None:
        now = self.now
        cfg = self.cfg
        for r in sorted(self._active):
            rop = self._active[r]
            if r in self._abandoned:
                continue
            if now - rop.last_progress >= cfg.abandon_after_ms:
                self._abandoned.add(r)
                continue
            node = self.topo.node_of(r)
            seq = rop.inst.op_seq
            gid = rop.inst.spec.group
            for fl in rop.flows:
                self._emit(StateRecord(
                    node=node, comm_id=gid, rank=r, channel=fl.channel, op_seq=seq, window_end_ms=now,
                    stuck_ms=now - fl.last_change, total_chunks=len(fl.sizes), gpu_ready=fl.staged,
                    rdma_transmitted=fl.transmitted, rdma_done=fl.done))
            for ch in sorted(rop.recv_views):
                v = rop.recv_views[ch]
                self._emit(StateRecord(
                    node=node, comm_id=gid, rank=r, channel=ch, op_seq=seq, window_end_ms=now,
                    stuck_ms=now - v.last_change, total_chunks=v.total, gpu_ready=v.arrived,
                    rdma_transmitted=v.arrived, rdma_done=v.arrived))
        live = any(r not in self._abandoned for r in self._active)
        if self._pending_work or live:
            self._schedule_tick(now + cfg.state_log_window)

    # -- results --

    def summary(self) -> SimSummary:
        times = {}
        arrivals = {}
        for rop in self._all_rankops:
            key = (rop.rank, rop.inst.op_seq)
            times[key] = (rop.started, rop.finished)
            arrivals[key] = list(rop.step_arrivals)
        unfinished = []
        for r, ops in self._rank_ops.items():
            unfinished.extend((r, seq) for seq in ops[self._rank_idx[r]:])
        return SimSummary(
            end_ms=self.now if math.isfinite(self.now) else 0.0,
            rank_op_times=times,
            step_arrivals=arrivals,
            unfinished=unfinished,
            completed=not unfinished,
            records_emitted=self.buffer.emitted_count,
            records_dropped=self.buffer.dropped_count,
        )


def _split(nbytes: int, chunk: int) -> List[int]:
    full, rest = divmod(nbytes, chunk)
    return [chunk] * full + ([rest] if rest else [])


def _next_tick(now: float, window: float) -> float:
    return (math.floor(now / window) + 1) * window


def run(topo: Topology, program: OpProgram, faults: Sequence[FaultSpec], cfg: SimConfig,
        buffer: Optional[RingBuffer] = None) -> Tuple[List[TraceRecord], SimSummary]:
    """Run to completion and return the drained trace together with the summary."""
    sim = Simulator(topo, program, faults, cfg, buffer)
    out: List[TraceRecord] = []
    sim.run_until(math.inf)
    out.extend(sim.buffer.pop_all())
    return out, sim.summary()
