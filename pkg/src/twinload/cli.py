"""Command line: single runs, latency sweeps, trace tools and the cost model.

Exit status: 0 ok, 1 configuration error, 2 trace error, 3 simulator
invariant failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .config import Settings, load_settings
from .cost import cost_report
from .engine import ConfigError, SimulationInvariantError, run, sweep
from .frontend import parse_mechanism
from .metrics import emit_stats
from .timing import ns
from .trace import TraceError, format_trace, gen_synthetic, load_trace, parse_generator

EXIT_OK, EXIT_CONFIG, EXIT_TRACE, EXIT_INVARIANT = 0, 1, 2, 3


def _size(text: str) -> int:
    """Byte counts with an optional K/M/G suffix."""
    units = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30}
    t = text.strip().lower().rstrip("b")
    if t and t[-1] in units:
        return int(float(t[:-1]) * units[t[-1]])
    return int(t, 0)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file (default: $TWINLOAD_CONFIG if set)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--seed", type=int, help="override engine.seed")


def _add_input(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--trace", help="trace file")
    src.add_argument("--gen", metavar="SPEC", help="synthetic trace: uniform | chase | stride:<bytes>")
    p.add_argument("--count", type=int, help="records for --gen")
    p.add_argument("--footprint", type=_size, help="bytes covered by --gen (e.g. 16M)")
    p.add_argument("--store-fraction", type=float, help="share of stores for --gen")


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("csv", "table"), default="csv")
    p.add_argument("-o", "--output", help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinload", description="Twin-load memory extension simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one trace under one mechanism")
    _add_common(p)
    _add_input(p)
    p.add_argument("--mech", help="ideal | tl-lf | tl-ooo | inc-trl:<ns>")
    _add_output(p)

    p = sub.add_parser("sweep", help="normalised performance across extra latencies")
    _add_common(p)
    _add_input(p)
    p.add_argument("--latencies", help="comma separated extra latencies in ns")
    p.add_argument("--mechanisms", help="comma separated mechanisms")
    p.add_argument("--jobs", type=int, help="worker processes")
    _add_output(p)

    p = sub.add_parser("gen-trace", help="write a synthetic trace file")
    _add_common(p)
    p.add_argument("spec", nargs="?", help="uniform | chase | stride:<bytes> (default: trace.generator)")
    p.add_argument("--count", type=int)
    p.add_argument("--footprint", type=_size)
    p.add_argument("--store-fraction", type=float)
    p.add_argument("--gap", type=int, help="non-memory instructions before each record")
    p.add_argument("-o", "--output", help="trace path (default: stdout)")

    p = sub.add_parser("validate-trace", help="check a trace file against the address layout")
    _add_common(p)
    p.add_argument("path")

    p = sub.add_parser("cost", help="cost table and performance per dollar")
    _add_common(p)
    p.add_argument("--steps", type=int, default=20, help="points on the parallel efficiency curve")
    p.add_argument("-o", "--output")
    return parser


def _settings(args) -> Settings:
    overrides = list(args.overrides)
    for attr, key in (("count", "trace.count"), ("footprint", "trace.footprint"),
                      ("store_fraction", "trace.store_fraction"), ("gap", "trace.gap"),
                      ("jobs", "sweep.jobs"), ("latencies", "sweep.latencies"),
                      ("mechanisms", "sweep.mechanisms"), ("mech", "mechanism.name")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    gen = getattr(args, "gen", None) or getattr(args, "spec", None)
    if gen:
        overrides.append(f"trace.generator={gen}")
    return load_settings(args.config, overrides, args.seed)


def _synthetic(settings: Settings):
    t = settings.trace
    try:
        kind, stride = parse_generator(t.generator)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seed = settings.sim.seed if t.seed is None else t.seed
    return gen_synthetic(kind, t.footprint, t.count, seed, settings.sim.layout, stride=stride,
                         store_fraction=t.store_fraction, gap=t.gap, line_size=settings.sim.geometry.line_size)


def _records(args, settings: Settings):
    if args.trace:
        if not Path(args.trace).is_file():
            raise TraceError(f"trace file not found: {args.trace}")
        return load_trace(args.trace, settings.sim.layout)
    return _synthetic(settings)


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    settings = _settings(args)
    stats = run(settings.sim, _records(args, settings))
    _emit(emit_stats(stats, args.format), args.output)
    return EXIT_OK


def cmd_sweep(args) -> int:
    settings = _settings(args)
    records = _records(args, settings)
    sw = settings.sweep
    mechs = [parse_mechanism(m) for m in sw.mechanisms]
    rows = sweep(settings.sim, records, [ns(x) for x in sw.latencies], mechs, jobs=sw.jobs)
    extra = [{"latency_ns": r.latency_ns, "normalized": r.normalized} for r in rows]
    _emit(emit_stats([r.stats for r in rows], args.format, extra), args.output)
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    settings = _settings(args)
    _emit(format_trace(_synthetic(settings)), args.output)
    return EXIT_OK


def cmd_validate_trace(args) -> int:
    settings = _settings(args)
    if not Path(args.path).is_file():
        raise TraceError(f"trace file not found: {args.path}")
    records = load_trace(args.path, settings.sim.layout)
    print(f"{args.path}: {len(records)} records ok")
    return EXIT_OK


def cmd_cost(args) -> int:
    settings = _settings(args)
    if args.steps < 1:
        raise ConfigError("--steps must be at least 1")
    _emit(cost_report(settings.cost, args.steps), args.output)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gen-trace": cmd_gen_trace,
            "validate-trace": cmd_validate_trace, "cost": cmd_cost}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"twinload: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceError as exc:
        print(f"twinload: trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except SimulationInvariantError as exc:
        print(f"twinload: invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
