"""Command-line entry points: benchmark sweeps and the live gateway."""

from __future__ import annotations

import argparse
import os
import sys

from . import bench
from .model import MS, ClusterConfig, LatencyModel


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.replace(",", " ").split()]


def _model_from_args(args) -> LatencyModel:
    return LatencyModel(
        base_delay=int(args.base_delay_ms * MS),
        jitter=int(args.jitter_ms * MS),
        proc_delay=int(args.proc_delay_ms * MS),
        exec_delay=int(args.exec_delay_ms * MS),
    )


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--base-delay-ms", type=float, default=24.0,
                        help="per-hop network delay in milliseconds")
    parser.add_argument("--jitter-ms", type=float, default=4.0,
                        help="max additive per-hop jitter in milliseconds")
    parser.add_argument("--proc-delay-ms", type=float, default=2.0,
                        help="per-message dequeue cost at each node")
    parser.add_argument("--exec-delay-ms", type=float, default=4.0,
                        help="per-execution handler cost at each node")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sessionbft",
        description="Session-buffered BFT web services: benchmark harness and gateway",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="sweep cluster configurations and report latencies")
    b.add_argument("--l1-nodes", type=_int_list, default=[4, 7, 10, 13, 16],
                   help="consensus-layer sizes to sweep, e.g. '4,7,10'")
    b.add_argument("--l2-nodes", type=_int_list, default=[1, 2],
                   help="interactive-layer sizes to sweep, e.g. '1,2'")
    b.add_argument("--iterations", type=int, default=100)
    _add_model_args(b)
    b.add_argument("--format", choices=("table", "csv", "json"), default="table")
    b.add_argument("--out", default=None, help="write output to this path instead of stdout")
    b.add_argument("--trace-dir", default=None,
                   help="dump one JSON-lines trace file per configuration")

    s = sub.add_parser("serve", help="run the HTTP gateway over a live in-process cluster")
    s.add_argument("--l1-nodes", type=int, default=4)
    s.add_argument("--l2-nodes", type=int, default=1)
    _add_model_args(s)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--pace", type=float, default=1.0,
                   help="wall seconds per virtual second while serving (0 = instant)")
    s.add_argument("--commit-timeout", type=float, default=30.0,
                   help="seconds before a commit request returns 202 + poll location")
    s.add_argument("--persist-dir", default=None,
                   help="directory for per-node append-only ledger files")
    s.add_argument("--console-dir", default=None,
                   help="serve the operator console statics from this directory at /console")
    return parser


def cmd_bench(args) -> int:
    model = _model_from_args(args)
    reports = bench.run_sweep(
        args.l1_nodes,
        args.l2_nodes,
        iterations=args.iterations,
        seed=args.seed,
        model=model,
        trace_dir=args.trace_dir,
    )
    rendered = bench.emit(reports, fmt=args.format, out_path=args.out)
    if not args.out:
        sys.stdout.write(rendered)
    if args.format == "table" and len(args.l2_nodes) == 2 and not args.out:
        by_label = {r.config_label: r for r in reports}
        lines = ["interactive-layer advantage (single vs dual):"]
        for n_l1 in args.l1_nodes:
            a = by_label[f"{n_l1}-{args.l2_nodes[0]}"]
            b = by_label[f"{n_l1}-{args.l2_nodes[1]}"]
            comparison = bench.compare(a, b)
            lines.append(
                f"  n_l1={n_l1:>2}: speedup {a.speedup:.2f}x vs {b.speedup:.2f}x "
                f"(delta {comparison['advantage_delta']:+.2f})"
            )
        sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_serve(args) -> int:
    from .gateway import serve

    config = ClusterConfig(
        n_l1=args.l1_nodes,
        n_l2=args.l2_nodes,
        seed=args.seed,
        latency_model=_model_from_args(args),
    )
    if args.persist_dir:
        os.makedirs(args.persist_dir, exist_ok=True)
    print(f"gateway on http://{args.host}:{args.port} (cluster {config.label}, "
          f"pace {args.pace}x)")
    serve(
        config,
        host=args.host,
        port=args.port,
        pace=args.pace,
        commit_timeout_s=args.commit_timeout,
        persist_dir=args.persist_dir,
        console_dir=args.console_dir,
    )
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench":
        return cmd_bench(args)
    if args.command == "serve":
        return cmd_serve(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
