"""Always-on detection over a few sampled ranks.

Every detection tick looks back ``delta_ms`` on each sampled rank:

* state records but no completions in the window -> Failure
* throughput halved or mean op interval doubled versus the rank's own
  moving baseline -> Straggler
* otherwise the baseline absorbs the window.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .errors import ConfigError
from .topology import Topology
from .tracelib import CompletionRecord, TraceStore

FAILURE = "Failure"
STRAGGLER = "Straggler"


@dataclass(frozen=True)
class TriggerConfig:
    delta_ms: float = 200.0
    detect_interval_ms: float = 500.0
    throughput_drop_factor: float = 0.5
    interval_inflation_factor: float = 2.0
    max_sampled_ranks: int = 10
    ema_alpha: float = 0.3
    warmup_windows: int = 3

    def __post_init__(self):
        if not self.delta_ms > 0:
            raise ConfigError("trigger.delta_ms must be > 0")
        if not self.detect_interval_ms > 0:
            raise ConfigError("trigger.detect_interval_ms must be > 0")
        if not 0 < self.throughput_drop_factor < 1:
            raise ConfigError("trigger.throughput_drop_factor must be in (0, 1)")
        if not self.interval_inflation_factor > 1:
            raise ConfigError("trigger.interval_inflation_factor must be > 1")
        if self.max_sampled_ranks < 1:
            raise ConfigError("trigger.max_sampled_ranks must be >= 1")
        if not 0 < self.ema_alpha <= 1:
            raise ConfigError("trigger.ema_alpha must be in (0, 1]")
        if self.warmup_windows < 0:
            raise ConfigError("trigger.warmup_windows must be >= 0")


@dataclass
class Baseline:
    normal_throughput: Optional[float] = None  # bytes/ms
    normal_op_interval: Optional[float] = None  # ms
    windows: int = 0

    def warmed(self, cfg: TriggerConfig) -> bool:
        return self.windows >= cfg.warmup_windows

    def update(self, throughput: float, interval: Optional[float], alpha: float) -> None:
        if self.normal_throughput is None:
            self.normal_throughput = throughput
        else:
            self.normal_throughput += alpha * (throughput - self.normal_throughput)
        if interval is not None:
            if self.normal_op_interval is None:
                self.normal_op_interval = interval
            else:
                self.normal_op_interval += alpha * (interval - self.normal_op_interval)
        self.windows += 1


@dataclass(frozen=True)
class TriggerEvent:
    kind: str
    suspect_rank: int
    time_ms: float
    reason: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "suspect_rank": self.suspect_rank, "time_ms": self.time_ms,
                "reason": self.reason}


def sample_ranks(topo: Topology, cfg: TriggerConfig, seed: int = 0) -> List[int]:
    """One seeded rank per DP group, covering a seeded subset of groups when over the cap."""
    rng = random.Random(seed)
    groups = topo.groups_of_kind("DP")
    if len(groups) > cfg.max_sampled_ranks:
        groups = sorted(rng.sample(groups, cfg.max_sampled_ranks), key=lambda g: g.comm_id)
    return sorted(rng.choice(g.members) for g in groups)


def window_stats(completions: List[CompletionRecord], delta_ms: float):
    """Throughput (bytes/ms) and mean gap between consecutive op completions."""
    throughput = sum(c.msg_bytes for c in completions) / delta_ms
    op_end: Dict[tuple, float] = {}
    for c in completions:
        key = (c.comm_id, c.op_seq)
        op_end[key] = max(op_end.get(key, c.end_ms), c.end_ms)
    ends = sorted(op_end.values())
    interval = (ends[-1] - ends[0]) / (len(ends) - 1) if len(ends) >= 2 else None
    return throughput, interval


def evaluate(store: TraceStore, sampled: List[int], t: float, baselines: Dict[int, Baseline],
             cfg: TriggerConfig) -> Optional[TriggerEvent]:
    """Run one detection tick at time ``t``; the lowest tripped rank wins."""
    if t < cfg.delta_ms:
        raise ValueError(f"t={t} is earlier than delta_ms={cfg.delta_ms}")
    lo = t - cfg.delta_ms
    tripped: List[TriggerEvent] = []
    for r in sorted(sampled):
        recs = store.records(r, lo, t)
        comps = [x for x in recs if x.type == "completion"]
        if not recs:
            prev = [x for x in store.records(r, lo - cfg.delta_ms, lo) if x.time_ms < lo]
            if prev:
                tripped.append(TriggerEvent(FAILURE, r, t, "records stopped"))
            continue
        if not comps:
            tripped.append(TriggerEvent(FAILURE, r, t, "no op completed in window"))
            continue
        throughput, interval = window_stats(comps, cfg.delta_ms)
        b = baselines.setdefault(r, Baseline())
        if b.warmed(cfg):
            if throughput <= cfg.throughput_drop_factor * b.normal_throughput:
                tripped.append(TriggerEvent(STRAGGLER, r, t, "throughput drop"))
                continue
            if (interval is not None and b.normal_op_interval is not None
                    and interval >= cfg.interval_inflation_factor * b.normal_op_interval):
                tripped.append(TriggerEvent(STRAGGLER, r, t, "op interval inflation"))
                continue
        b.update(throughput, interval, cfg.ema_alpha)
    return tripped[0] if tripped else None


@dataclass
class Detector:
    """Stateful tick driver; after firing it stays quiet until a tick sees nothing wrong."""

    sampled: List[int]
    cfg: TriggerConfig
    baselines: Dict[int, Baseline] = field(default_factory=dict)
    armed: bool = True

    def ticks_until(self, t_end: float, after: float = 0.0) -> List[float]:
        step = self.cfg.detect_interval_ms
        k = int(after // step) + 1
        out = []
        while k * step <= t_end:
            if k * step >= self.cfg.delta_ms:
                out.append(k * step)
            k += 1
        return out

    def step(self, store: TraceStore, t: float) -> Optional[TriggerEvent]:
        ev = evaluate(store, self.sampled, t, self.baselines, self.cfg)
        if ev is None:
            self.armed = True
            return None
        if not self.armed:
            return None
        self.armed = False
        return ev
