"""Command-line entry point.

Exit codes:
  0  success
  1  the sequencer failed (the partial event log is still written)
  2  invalid config or unreadable/empty event log
  3  I/O error
  4  ``repro``: at least one acceptance row failed
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from . import acceptance, calibrate, metrics
from . import events as ev
from .simulation import apply_seed_override, load_scenario, paper_repro, run_scenario
from .workload import ConfigInvalid

EXIT_OK = 0
EXIT_SEQUENCER_FAILED = 1
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_ACCEPTANCE = 4


def _err(msg: str) -> None:
    print(f"rollupbench: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    if args.config is not None:
        cfg = load_scenario(args.config)
    else:
        cfg = paper_repro()
        apply_seed_override(cfg)
    result = run_scenario(cfg)
    ev.write_event_log(args.out, result.events)
    n_sent = sum(r.kind == ev.SENT for r in result.events)
    n_inc = sum(r.kind == ev.INCLUDED for r in result.events)
    print(f"{cfg.name}: {n_sent} sent, {n_inc} included, {len(result.batches)} batches -> {args.out}")
    if result.failed:
        _err(f"sequencer failed at t={result.failed_at:.3f}s")
        return EXIT_SEQUENCER_FAILED
    return EXIT_OK


def cmd_analyze(args) -> int:
    records = ev.parse_event_log(args.log)
    report = metrics.write_report(records, args.report)
    print(f"final TPS {report.get('final_tps')}, median latency "
          f"{report.get('latency_s', {}).get('median')}s -> {args.report}")
    return EXIT_OK


def cmd_repro(args) -> int:
    thresholds = acceptance.load_thresholds(args.thresholds)
    cfg = paper_repro(args.time_scale)
    apply_seed_override(cfg)
    ctx = acceptance.Context(thresholds, seed=cfg.seed, time_scale=args.time_scale)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        ev.write_event_log(args.out / "events.jsonl", ctx.repro.events)
        metrics.write_report(ev.parse_event_log(args.out / "events.jsonl"), args.out / "report")
    fin = metrics.finality_summary(ctx.repro.events)
    print(f"time_scale {cfg.pipeline.time_scale:g}: hard finality "
          f"{fin['hard_min_s']:.1f}-{fin['hard_max_s']:.1f}s after send")
    results = acceptance.run_all(ctx)
    for r in results:
        print(r.line())
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failing: {failed}" if failed else ""))
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def _grid(spec: str) -> List[float]:
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ConfigInvalid(f"grid {spec!r} must look like lo:hi:step") from None
    if step <= 0 or hi < lo:
        raise ConfigInvalid(f"grid {spec!r} is empty")
    return calibrate.frange(lo, hi, step)


def cmd_calibrate(args) -> int:
    fits = calibrate.grid_search(_grid(args.bases), _grid(args.alphas), seed=args.seed)
    print(json.dumps([calibrate.summarize(f) for f in fits[:args.top]], indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rollupbench",
                                description="Deterministic ZK-rollup sequencer benchmark.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write its event log")
    run.add_argument("--config", type=Path, help="scenario JSON (default: paper-repro)")
    run.add_argument("--out", type=Path, required=True, help="event log path (JSON lines)")
    run.set_defaults(func=cmd_run)

    an = sub.add_parser("analyze", help="turn an event log into report.json and CSVs")
    an.add_argument("--log", type=Path, required=True)
    an.add_argument("--report", type=Path, required=True, help="output directory")
    an.set_defaults(func=cmd_analyze)

    rp = sub.add_parser("repro", help="run paper-repro and check the acceptance thresholds")
    rp.add_argument("--time-scale", type=float, default=None,
                    help="L1 lifecycle time scale (default 1/60; 1 gives real minutes)")
    rp.add_argument("--thresholds", type=Path, default=None, help="thresholds JSON override")
    rp.add_argument("--out", type=Path, default=None, help="also write events.jsonl and report/")
    rp.set_defaults(func=cmd_repro)

    cal = sub.add_parser("calibrate", help="grid-search the contention model")
    cal.add_argument("--bases", default="100:1000:50", help="lo:hi:step")
    cal.add_argument("--alphas", default="0:1:0.05", help="lo:hi:step")
    cal.add_argument("--seed", type=int, default=42)
    cal.add_argument("--top", type=int, default=5)
    cal.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigInvalid, metrics.EmptyLog, metrics.OrphanInclude,
            ev.MalformedLine, ev.UnknownEventKind) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_INVALID
    except OSError as exc:
        _err(f"IoError: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
