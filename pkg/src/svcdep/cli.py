"""Command-line entry point: ``svcdep run | matrix | gen``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .graph import ProtocolViolation, export_dot, export_json
from .harness.benchmarks import BENCHMARKS
from .harness.matrix import DEFAULT_AGENTS, format_table, matrix_json, run_matrix
from .harness.runner import execute
from .harness.scenario import AGENTS, ScenarioError, benchmark_scenario, load_scenario
from .netsim import SimulationError, TopologyError
from .topology import TEMPLATES


def _window(text: str) -> tuple[int, int]:
    a, sep, b = text.partition(":")
    try:
        start, end = int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be start:end, got {text!r}") from None
    if not sep or end < start:
        raise argparse.ArgumentTypeError(f"window must be start:end with start <= end, got {text!r}")
    return start, end


def _write(path: str, text: str) -> None:
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True)
    p.write_text(text)


def cmd_run(args) -> int:
    s = load_scenario(args.scenario)
    if args.seed is not None:
        s.seed = args.seed
    r = execute(s, agent=args.agent, window=args.window)
    g = r.graph if args.abstract else r.raw_graph
    if args.out_graph:
        text = export_dot(g) if args.out_graph.endswith(".dot") else export_json(g)
        _write(args.out_graph, text)
    metrics = r.report.to_json()
    if args.out_metrics:
        _write(args.out_metrics, metrics)
    else:
        sys.stdout.write(metrics)
    if args.trace:
        _write(args.trace, "\n".join(r.world.trace) + "\n")
    return 0


def cmd_matrix(args) -> int:
    agents = tuple(a.strip() for a in args.agents.split(",")) if args.agents else DEFAULT_AGENTS
    results = run_matrix(args.suite, agents, jobs=args.jobs)
    sys.stdout.write(format_table(results))
    if args.out:
        _write(args.out, matrix_json(results))
    return 0


def cmd_gen(args) -> int:
    s = benchmark_scenario(args.benchmark, args.network, hosts=args.hosts, agent=args.agent, seed=args.seed)
    text = s.to_json()
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svcdep", description="Service dependency discovery simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--scenario", required=True)
    run.add_argument("--agent", choices=AGENTS, default=None, help="override the scenario's agent")
    run.add_argument("--out-graph", help="graph output; .dot for Graphviz, anything else JSON")
    run.add_argument("--out-metrics", help="metrics JSON path (default stdout)")
    run.add_argument("--seed", type=int)
    run.add_argument("--trace", help="write the per-delivery packet trace here")
    run.add_argument("--window", type=_window, help="mark edges active within start:end ticks")
    run.add_argument("--abstract", action="store_true", help="export the graph with forwarders contracted")
    run.set_defaults(func=cmd_run)

    mx = sub.add_parser("matrix", help="run every scenario in a directory")
    mx.add_argument("--suite", required=True)
    mx.add_argument("--agents", help=f"comma-separated, default {','.join(DEFAULT_AGENTS)}")
    mx.add_argument("--jobs", type=int, default=1)
    mx.add_argument("--out", help="write JSON results here")
    mx.set_defaults(func=cmd_matrix)

    gen = sub.add_parser("gen", help="emit a benchmark scenario file")
    gen.add_argument("--benchmark", required=True, choices=BENCHMARKS)
    gen.add_argument("--network", required=True, choices=TEMPLATES)
    gen.add_argument("--hosts", type=int, default=3)
    gen.add_argument("--agent", choices=AGENTS, default="ripple")
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--out")
    gen.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, TopologyError, ValueError) as e:
        print(f"svcdep: invalid input: {e}", file=sys.stderr)
        return 2
    except ProtocolViolation as e:
        print(f"svcdep: protocol violation: {e}", file=sys.stderr)
        return 3
    except (SimulationError, FileNotFoundError) as e:
        print(f"svcdep: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
