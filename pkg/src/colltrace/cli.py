"""Command line entry point.

    colltrace simulate --config CFG --out TRACE
    colltrace e2e      --config CFG --out REPORT [--trace-out TRACE]
    colltrace analyze  --trace TRACE --config CFG --out REPORT
    colltrace catalog

Exit status: 0 ran clean (reports may be non-empty), 2 config error,
3 trace parse error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from .errors import ConfigError, TraceParseError
from .runner import E2EResult, catalog, load_config, replay_file, run_e2e, simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRACE = 3


def _resolve_config(arg: str):
    """Accept a path or the name of a shipped scenario."""
    cat = catalog()
    if arg in cat:
        return load_config(cat[arg])
    return load_config(arg)


def _load(args):
    cfg = _resolve_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _write_reports(result: E2EResult, cfg, out: Optional[str], figures: Optional[str], label: str) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.writelines(line + "\n" for line in result.lines)
    topo, _ = cfg.build()
    print(f"{label} {cfg.name}: {result.ticks} detection ticks, {len(result.events)} trigger(s)")
    for ev, rep in zip(result.events, result.reports):
        print(f"trigger {ev.kind} at {ev.time_ms:.1f} ms on rank {ev.suspect_rank} ({ev.reason})")
        print(rep.to_text(topo))
    if figures:
        from .plotting import render_figures

        paths = render_figures(result.store.all_records(), topo, result.events, result.reports, figures,
                               prefix=cfg.name)
        for p in paths:
            print(f"figure: {p}")


def cmd_simulate(args) -> int:
    cfg = _load(args)
    records, summary = simulate(cfg, args.out)
    info = summary.to_dict()
    info["records_written"] = len(records)
    print(json.dumps(info, indent=1, sort_keys=True))
    if args.figures:
        from .plotting import render_figures

        topo, _ = cfg.build()
        for p in render_figures(records, topo, [], [], args.figures, prefix=cfg.name):
            print(f"figure: {p}")
    return EXIT_OK


def cmd_e2e(args) -> int:
    cfg = _load(args)
    result = run_e2e(cfg, trace_out=args.trace_out)
    _write_reports(result, cfg, args.out, args.figures, "e2e")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load(args)
    result = replay_file(cfg, args.trace)
    _write_reports(result, cfg, args.out, args.figures, "analyze")
    return EXIT_OK


def cmd_catalog(args) -> int:
    for name, path in catalog().items():
        cfg = load_config(path)
        print(f"{name:22s} {cfg.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="colltrace", description="Collective-communication trace simulation and diagnosis")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", required=True, help="scenario YAML file or shipped scenario name")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--figures", metavar="DIR", help="render timeline and progress figures into DIR")

    sp = sub.add_parser("simulate", help="run the simulator and write a trace file")
    common(sp, "trace file (JSON lines)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("e2e", help="simulate with detection and analysis in lockstep")
    common(sp, "report stream (JSON lines)")
    sp.add_argument("--trace-out", help="also write the trace file")
    sp.set_defaults(func=cmd_e2e)

    sp = sub.add_parser("analyze", help="replay detection and analysis over a saved trace")
    common(sp, "report stream (JSON lines)")
    sp.add_argument("--trace", required=True, help="trace file written by simulate")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("catalog", help="list shipped scenarios")
    sp.set_defaults(func=cmd_catalog)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceParseError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE


if __name__ == "__main__":
    sys.exit(main())
