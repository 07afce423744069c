"""Scenario configs and the drivers behind the CLI: simulate, e2e and replay."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .collsim import FaultSpec, OpProgram, SimConfig, SimSummary, Simulator, default_program, MiB
from .errors import ConfigError
from .rca import AnalysisConfig, RootCauseReport, analyze
from .topology import Topology, build_layout
from .tracelib import TraceRecord, TraceStore, iter_deserialize, to_line
from .trigger import Detector, TriggerConfig, TriggerEvent, sample_ranks

SCENARIO_DIR = Path(__file__).parent / "scenarios"

_LAYOUT_KEYS = ("tp", "pp", "dp", "ranks_per_node", "channels_per_pair", "nics_per_node")
_TOP_KEYS = {"name", "description", "layout", "sim", "trigger", "analysis", "faults", "iterations", "seed",
             "msg_bytes", "msg_mib", "expect"}


@dataclass
class ScenarioConfig:
    name: str
    layout: Dict[str, int]
    sim: SimConfig
    trigger: TriggerConfig
    analysis: AnalysisConfig
    faults: List[FaultSpec]
    msg_bytes: int = 256 * MiB
    description: str = ""
    expect: Dict[str, Any] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.sim.seed

    @property
    def iterations(self) -> int:
        return self.sim.iteration_count

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(self, sim=dataclasses.replace(self.sim, seed=seed))

    def build(self) -> Tuple[Topology, OpProgram]:
        topo = build_layout(**self.layout)
        program = default_program(topo, self.msg_bytes)
        program.validate(topo)
        for f in self.faults:
            f.validate(topo)
        return topo, program

    def first_onset(self) -> Optional[float]:
        return min((f.onset for f in self.faults), default=None)


def _section(raw: dict, key: str, cls) -> Any:
    body = raw.get(key) or {}
    if not isinstance(body, dict):
        raise ConfigError(f"{key}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(body) - names)
    if unknown:
        raise ConfigError(f"{key}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**body)
    except TypeError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _fault(i: int, body: Any) -> FaultSpec:
    if not isinstance(body, dict):
        raise ConfigError(f"faults[{i}]: expected a mapping")
    names = {f.name for f in dataclasses.fields(FaultSpec)}
    unknown = sorted(set(body) - names)
    if unknown:
        raise ConfigError(f"faults[{i}]: unknown field(s) {', '.join(unknown)}")
    body = dict(body)
    if "kind" not in body or "target" not in body:
        raise ConfigError(f"faults[{i}]: 'kind' and 'target' are required")
    if isinstance(body["target"], list):
        body["target"] = tuple(body["target"])
    return FaultSpec(**body)


def config_from_dict(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {', '.join(unknown)}")
    layout = dict(raw.get("layout") or {})
    bad = sorted(set(layout) - set(_LAYOUT_KEYS))
    if bad:
        raise ConfigError(f"layout: unknown field(s) {', '.join(bad)}")
    missing = [k for k in _LAYOUT_KEYS[:5] if k not in layout]
    if missing:
        raise ConfigError(f"layout: missing field(s) {', '.join(missing)}")
    sim_raw = dict(raw.get("sim") or {})
    if "iterations" in raw:
        sim_raw["iteration_count"] = raw["iterations"]
    if "seed" in raw:
        sim_raw["seed"] = raw["seed"]
    sim = _section({"sim": sim_raw}, "sim", SimConfig)
    trig = _section(raw, "trigger", TriggerConfig)
    analysis_raw = dict(raw.get("analysis") or {})
    analysis_raw.setdefault("delta_ms", trig.delta_ms)
    ana = _section({"analysis": analysis_raw}, "analysis", AnalysisConfig)
    faults = [_fault(i, f) for i, f in enumerate(raw.get("faults") or [])]
    if "msg_bytes" in raw:
        msg = raw["msg_bytes"]
    else:
        msg = int(raw.get("msg_mib", 256) * MiB)
    if not isinstance(msg, int) or msg <= 0:
        raise ConfigError("msg_bytes must be a positive integer")
    cfg = ScenarioConfig(raw.get("name", "scenario"), layout, sim, trig, ana, faults, msg,
                         raw.get("description", ""), dict(raw.get("expect") or {}))
    cfg.build()  # validate everything up front
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(raw)


def catalog() -> Dict[str, Path]:
    """Shipped scenario files by name."""
    return {p.stem: p for p in sorted(SCENARIO_DIR.glob("*.yaml"))}


# --- drivers ----------------------------------------------------------------


def simulate(cfg: ScenarioConfig, out_path=None) -> Tuple[List[TraceRecord], SimSummary]:
    """Run the simulator to the end, draining the buffer once per state window."""
    topo, program = cfg.build()
    sim = Simulator(topo, program, cfg.faults, cfg.sim)
    records: List[TraceRecord] = []
    fh = open(out_path, "w", encoding="utf-8") if out_path is not None else None
    try:
        t = 0.0
        while True:
            t += cfg.sim.state_log_window
            sim.run_until(t)
            batch = sim.buffer.pop_all()
            records.extend(batch)
            if fh is not None:
                fh.writelines(to_line(r) + "\n" for r in batch)
            if sim.idle:
                break
    finally:
        if fh is not None:
            fh.close()
    return records, sim.summary()


@dataclass
class E2EResult:
    events: List[TriggerEvent]
    reports: List[RootCauseReport]
    lines: List[str]  # structured report stream, one JSON object per line
    store: TraceStore
    summary: Optional[SimSummary] = None
    ticks: int = 0


def _event_line(ev: TriggerEvent, onset: Optional[float]) -> dict:
    d = {"record": "trigger"}
    d.update(ev.to_dict())
    d["onset_ms"] = onset
    d["trigger_latency_ms"] = (ev.time_ms - onset) if onset is not None and ev.time_ms >= onset else None
    return d


def _report_line(rep: RootCauseReport, topo: Topology) -> dict:
    d = {"record": "report"}
    d.update(rep.to_dict(topo))
    return d


def _detect(cfg: ScenarioConfig, topo, program, detector: Detector, store: TraceStore, t: float,
            result: E2EResult) -> None:
    ev = detector.step(store, t)
    result.ticks += 1
    if ev is None:
        return
    rep = analyze(store, topo, ev, cfg.analysis, program)
    result.events.append(ev)
    result.reports.append(rep)
    result.lines.append(json.dumps(_event_line(ev, cfg.first_onset()), sort_keys=True))
    result.lines.append(json.dumps(_report_line(rep, topo), sort_keys=True))


def run_e2e(cfg: ScenarioConfig, trace_out=None) -> E2EResult:
    """Simulation and detection interleaved on the simulated clock."""
    topo, program = cfg.build()
    sim = Simulator(topo, program, cfg.faults, cfg.sim)
    store = TraceStore()
    detector = Detector(sample_ranks(topo, cfg.trigger, cfg.seed), cfg.trigger)
    result = E2EResult([], [], [], store)
    fh = open(trace_out, "w", encoding="utf-8") if trace_out is not None else None
    last_time = -math.inf
    step = cfg.trigger.detect_interval_ms
    k = 0
    try:
        while True:
            k += 1
            t = k * step
            sim.run_until(t)
            batch = sim.buffer.pop_all()
            store.extend(batch)
            if fh is not None:
                fh.writelines(to_line(r) + "\n" for r in batch)
            if batch:
                last_time = max(last_time, max(r.time_ms for r in batch))
            if sim.idle and t > last_time:
                break
            if t >= cfg.trigger.delta_ms:
                _detect(cfg, topo, program, detector, store, t, result)
    finally:
        if fh is not None:
            fh.close()
    result.summary = sim.summary()
    return result


def replay(cfg: ScenarioConfig, records: List[TraceRecord]) -> E2EResult:
    """Detection loop over a stored trace with the same cadence as ``run_e2e``."""
    topo, program = cfg.build()
    store = TraceStore()
    store.extend(records)
    detector = Detector(sample_ranks(topo, cfg.trigger, cfg.seed), cfg.trigger)
    result = E2EResult([], [], [], store)
    last_time = max((r.time_ms for r in records), default=-math.inf)
    step = cfg.trigger.detect_interval_ms
    k = 0
    while True:
        k += 1
        t = k * step
        if t > last_time:
            break
        if t >= cfg.trigger.delta_ms:
            _detect(cfg, topo, program, detector, store, t, result)
    return result


def replay_file(cfg: ScenarioConfig, trace_path) -> E2EResult:
    with open(trace_path, encoding="utf-8") as fh:
        records = list(iter_deserialize(fh))
    return replay(cfg, records)
