"""Figures for the report path: per-rank op timelines and progress curves."""

from __future__ import annotations

import os
from typing import Iterable, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.lines import Line2D  # noqa: E402

from .rca import RootCauseReport  # noqa: E402
from .topology import Topology  # noqa: E402
from .tracelib import TraceRecord  # noqa: E402
from .trigger import TriggerEvent  # noqa: E402

_KIND_COLORS = {"TP": "#4c72b0", "PP": "#dd8452", "DP": "#55a868"}


def _mark_events(ax, events: Sequence[TriggerEvent]) -> None:
    for ev in events:
        ax.axvline(ev.time_ms, color="#c44e52", lw=1.0, ls="--")


def plot_timeline(records: Iterable[TraceRecord], topo: Topology, events: Sequence[TriggerEvent],
                  reports: Sequence[RootCauseReport], path: str) -> str:
    """One row per rank, one bar per completed flow, coloured by group kind."""
    fig, ax = plt.subplots(figsize=(11, 0.22 * topo.world_size + 1.5))
    bars = {}
    stalled = {}
    for rec in records:
        if rec.type == "completion":
            kind = topo.group(rec.comm_id).kind
            bars.setdefault((rec.rank, kind), []).append((rec.start_ms, max(rec.end_ms - rec.start_ms, 0.5)))
        elif rec.stuck_ms >= 100:
            stalled.setdefault(rec.rank, []).append(rec.window_end_ms)
    for (rank, kind), spans in bars.items():
        ax.broken_barh(spans, (rank - 0.4, 0.8), facecolors=_KIND_COLORS[kind])
    for rank, times in stalled.items():
        ax.plot(times, [rank] * len(times), "x", color="#8172b3", ms=3)
    suspects = {s.rank for rep in reports for s in rep.suspects}
    for r in suspects:
        ax.axhspan(r - 0.5, r + 0.5, color="#c44e52", alpha=0.12)
    _mark_events(ax, events)
    ax.set_xlabel("simulated time (ms)")
    ax.set_ylabel("rank")
    ax.set_ylim(-1, topo.world_size)
    ax.invert_yaxis()
    handles = [Line2D([0], [0], color=c, lw=6, label=k) for k, c in _KIND_COLORS.items()]
    handles.append(Line2D([0], [0], color="#8172b3", marker="x", ls="", label="stuck >= 100 ms"))
    handles.append(Line2D([0], [0], color="#c44e52", ls="--", label="trigger"))
    ax.legend(handles=handles, loc="upper right", fontsize=7, ncol=5)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_progress(records: Iterable[TraceRecord], topo: Topology, events: Sequence[TriggerEvent],
                  path: str) -> str:
    """Cumulative completed bytes per rank; a stalled rank flattens out."""
    per_rank = {}
    for rec in records:
        if rec.type == "completion":
            per_rank.setdefault(rec.rank, []).append((rec.end_ms, rec.msg_bytes))
    fig, ax = plt.subplots(figsize=(9, 5))
    cmap = plt.get_cmap("viridis")
    for r in sorted(per_rank):
        pts = sorted(per_rank[r])
        xs, ys, total = [0.0], [0.0], 0
        for t, b in pts:
            total += b
            xs.append(t)
            ys.append(total / (1 << 30))
        ax.step(xs, ys, where="post", lw=0.8, color=cmap(r / max(1, topo.world_size - 1)))
    _mark_events(ax, events)
    ax.set_xlabel("simulated time (ms)")
    ax.set_ylabel("completed traffic (GiB)")
    sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(0, topo.world_size - 1))
    fig.colorbar(sm, ax=ax, label="rank")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_figures(records: List[TraceRecord], topo: Topology, events: Sequence[TriggerEvent],
                   reports: Sequence[RootCauseReport], out_dir: str, prefix: str = "run") -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    return [
        plot_timeline(records, topo, events, reports, os.path.join(out_dir, f"{prefix}_timeline.png")),
        plot_progress(records, topo, events, os.path.join(out_dir, f"{prefix}_progress.png")),
    ]
