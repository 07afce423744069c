"""Trace records, the lock-light circular buffer, the local store and the
line-delimited trace file format.

Two record shapes exist: a completion record written once per
(rank, flow, op) when that flow finishes, and a state record written for
every in-flight flow at each state-log window boundary.
"""

from __future__ import annotations

import bisect
import json
import threading
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from .errors import RecordValidationError, TraceParseError
from .topology import CommGroup


@dataclass(frozen=True)
class CompletionRecord:
    node: int
    comm_id: int
    rank: int
    channel: int
    op_seq: int
    op_name: str
    msg_bytes: int
    start_ms: float
    end_ms: float

    @property
    def type(self) -> str:
        return "completion"

    @property
    def time_ms(self) -> float:
        return self.end_ms

    def validate(self) -> None:
        if self.end_ms < self.start_ms:
            raise RecordValidationError(f"end_ms {self.end_ms} < start_ms {self.start_ms}")
        if self.msg_bytes <= 0:
            raise RecordValidationError(f"msg_bytes must be positive, got {self.msg_bytes}")


@dataclass(frozen=True)
class StateRecord:
    node: int
    comm_id: int
    rank: int
    channel: int
    op_seq: int
    window_end_ms: float
    stuck_ms: float
    total_chunks: int
    gpu_ready: int
    rdma_transmitted: int
    rdma_done: int

    @property
    def type(self) -> str:
        return "state"

    @property
    def time_ms(self) -> float:
        return self.window_end_ms

    @property
    def counters(self) -> Tuple[int, int, int]:
        return self.gpu_ready, self.rdma_transmitted, self.rdma_done

    def validate(self) -> None:
        if not (self.total_chunks >= self.gpu_ready >= self.rdma_transmitted >= self.rdma_done >= 0):
            raise RecordValidationError(
                "pipeline counters out of order: total_chunks={} gpu_ready={} rdma_transmitted={} "
                "rdma_done={}".format(self.total_chunks, self.gpu_ready, self.rdma_transmitted, self.rdma_done)
            )
        if self.stuck_ms < 0:
            raise RecordValidationError(f"stuck_ms must be >= 0, got {self.stuck_ms}")


TraceRecord = Union[CompletionRecord, StateRecord]

_TYPE_ORDER = {"completion": 0, "state": 1}


def sort_key(rec: TraceRecord) -> tuple:
    """Total order used by every query: time, then rank, then a stable tiebreak."""
    return (rec.time_ms, rec.rank, _TYPE_ORDER[rec.type], rec.op_seq, rec.comm_id, rec.channel)


class RingBuffer:
    """Fixed-capacity circular buffer; a full buffer overwrites its oldest slot.

    Intended for one writer (the simulator) and one reader (``drain``). The
    lock is only held for index arithmetic, so the writer never waits on I/O.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._slots: List[Optional[TraceRecord]] = [None] * capacity
        self.head = 0  # oldest element
        self.size = 0
        self.dropped_count = 0
        self.emitted_count = 0
        self.drained_count = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self.size

    @property
    def tail(self) -> int:
        return (self.head + self.size) % self.capacity

    def push(self, rec: TraceRecord) -> None:
        with self._lock:
            self._slots[self.tail] = rec
            if self.size == self.capacity:
                self.head = (self.head + 1) % self.capacity
                self.dropped_count += 1
            else:
                self.size += 1
            self.emitted_count += 1

    def pop_all(self) -> List[TraceRecord]:
        with self._lock:
            out = []
            for i in range(self.size):
                idx = (self.head + i) % self.capacity
                out.append(self._slots[idx])
                self._slots[idx] = None
            self.head = self.tail
            self.size = 0
            self.drained_count += len(out)
            return out


class TraceStore:
    """In-memory record index keyed by rank, each list kept in time order."""

    def __init__(self) -> None:
        self._by_rank: Dict[int, List[tuple]] = {}
        self._seq = 0

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_rank.values())

    def add(self, rec: TraceRecord) -> None:
        lst = self._by_rank.setdefault(rec.rank, [])
        entry = (sort_key(rec), self._seq, rec)
        self._seq += 1
        if not lst or lst[-1][0] <= entry[0]:
            lst.append(entry)
        else:
            bisect.insort(lst, entry)

    def extend(self, recs: Iterable[TraceRecord]) -> None:
        for rec in recs:
            self.add(rec)

    def ranks(self) -> List[int]:
        return sorted(self._by_rank)

    def records(self, rank: int, t0: float = float("-inf"), t1: float = float("inf")) -> List[TraceRecord]:
        """Records of one rank with ``t0 <= time <= t1`` in sort order."""
        lst = self._by_rank.get(rank)
        if not lst:
            return []
        lo = bisect.bisect_left(lst, ((t0,),))
        hi = bisect.bisect_right(lst, ((t1, float("inf")),))
        return [e[2] for e in lst[lo:hi]]

    def all_records(self) -> List[TraceRecord]:
        out = [e for lst in self._by_rank.values() for e in lst]
        out.sort()
        return [e[2] for e in out]


def emit(record: TraceRecord, buf: RingBuffer) -> None:
    record.validate()
    buf.push(record)


def drain(buf: RingBuffer, store: TraceStore) -> int:
    recs = buf.pop_all()
    store.extend(recs)
    return len(recs)


def query(store: TraceStore, ranks: Sequence[int], t0: float, t1: float) -> List[TraceRecord]:
    if t0 > t1:
        raise ValueError(f"empty range: t0={t0} > t1={t1}")
    out: List[TraceRecord] = []
    for r in set(ranks):
        out.extend(store.records(r, t0, t1))
    out.sort(key=sort_key)
    return out


def last_log_per_rank(store: TraceStore, group: CommGroup, t: float) -> Dict[int, TraceRecord]:
    """Most recent record of each member for this group's communicator, at or before ``t``."""
    if not group.members:
        raise ValueError("group has no members")
    out: Dict[int, TraceRecord] = {}
    for r in group.members:
        for rec in reversed(store.records(r, t1=t)):
            if rec.comm_id == group.comm_id:
                out[r] = rec
                break
    return out


# --- line-delimited file format -------------------------------------------

_SCHEMAS = {
    "completion": (CompletionRecord, {f.name: f.type for f in fields(CompletionRecord)}),
    "state": (StateRecord, {f.name: f.type for f in fields(StateRecord)}),
}
_FLOAT_FIELDS = {"start_ms", "end_ms", "window_end_ms", "stuck_ms"}


def to_line(rec: TraceRecord) -> str:
    payload = {"type": rec.type}
    payload.update(asdict(rec))
    return json.dumps(payload, separators=(",", ":"))


def serialize(records: Iterable[TraceRecord]) -> str:
    return "".join(to_line(r) + "\n" for r in records)


def parse_line(line: str, lineno: int = 1) -> TraceRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceParseError(lineno, f"malformed JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise TraceParseError(lineno, "record is not an object")
    kind = obj.pop("type", None)
    if kind not in _SCHEMAS:
        raise TraceParseError(lineno, f"unknown or missing record type {kind!r}")
    cls, schema = _SCHEMAS[kind]
    for name in schema:
        if name not in obj:
            raise TraceParseError(lineno, f"missing field '{name}'")
    extra = sorted(set(obj) - set(schema))
    if extra:
        raise TraceParseError(lineno, f"unknown field(s) {', '.join(extra)}")
    for name, value in obj.items():
        if name == "op_name":
            ok = isinstance(value, str)
        elif name in _FLOAT_FIELDS:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        else:
            ok = isinstance(value, int) and not isinstance(value, bool)
        if not ok:
            raise TraceParseError(lineno, f"field '{name}' has wrong type")
        if name in _FLOAT_FIELDS:
            obj[name] = float(value)
    rec = cls(**obj)
    try:
        rec.validate()
    except RecordValidationError as exc:
        raise TraceParseError(lineno, str(exc)) from None
    return rec


def iter_deserialize(lines: Iterable[str]) -> Iterator[TraceRecord]:
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        yield parse_line(line, lineno)


def deserialize(text: str) -> List[TraceRecord]:
    return list(iter_deserialize(text.splitlines()))


def read_trace(path) -> List[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_deserialize(fh))
