"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 input error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

from .config import Config, load_config
from .engine import Engine
from .errors import (
    ConfigError,
    DatasetMalformed,
    DuplicateDocId,
    IoFailure,
    MalformedRecord,
    ReapError,
)
from .llm.prompts import Role
from .retrieval import ingest_corpus
from .trace import DEFAULT_MAX_CHARS, export_traces, load_traces, replay_mismatches, write_traces

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("reap")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _effective_config(args: argparse.Namespace) -> Config:
    config = load_config(args.config)
    return config.with_overrides(
        max_iterations=args.max_iterations,
        top_k=args.top_k,
        index=args.index,
        backend_assignments=args.backend or (),
    )


def cmd_ingest(args: argparse.Namespace) -> int:
    try:
        index = ingest_corpus(args.corpus)
    except FileNotFoundError:
        _err(f"corpus file not found: {args.corpus}")
        return EXIT_INPUT
    except (MalformedRecord, DuplicateDocId) as exc:
        _err(str(exc))
        return EXIT_INPUT
    except OSError as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        index.save(args.index)
    except OSError as exc:
        _err(f"cannot write index: {exc}")
        return EXIT_RUNTIME
    stats = index.stats()
    print(f"{stats['documents']} documents, {stats['tokens']} tokens, "
          f"{stats['vocabulary']} terms -> {args.index}")
    return EXIT_OK


def cmd_ask(args: argparse.Namespace) -> int:
    try:
        config = _effective_config(args)
        engine = Engine.from_config(config)
    except (ConfigError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        answer, trace = engine.run(args.question)
    except ReapError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        partial = getattr(exc, "trace", None)
        if args.trace and partial is not None:
            write_traces([partial], args.trace)
        return EXIT_RUNTIME
    if args.trace:
        write_traces([trace], args.trace)
    print(answer)
    if trace.termination != "resolved":
        log.warning("stopped early (%s) after %d iterations", trace.termination, trace.iterations)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    from .eval.benchmark import run_benchmark

    try:
        config = _effective_config(args)
        engine = Engine.from_config(config)
    except (ConfigError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    judge = engine.gateway.judge if engine.gateway.has_role(Role.JUDGE) else None
    traces: list[dict] = []
    try:
        report = run_benchmark(args.dataset, engine, judge=judge, parallel=args.parallel,
                               limit=args.limit, on_trace=traces.append, config=config.to_dict())
    except DatasetMalformed as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        paths = report.write(args.out, figures=not args.no_figures)
        if args.trace:
            write_traces(traces, args.trace)
    except IoFailure as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(report.summary_table(), end="")
    print(f"report written to {paths['report']}")
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    if not Path(args.traces).is_file():
        _err(f"trace file not found: {args.traces}")
        return EXIT_INPUT
    try:
        traces = load_traces(args.traces)
    except (IoFailure, ValueError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        report = export_traces(traces, args.out, require_correct=args.require_correct,
                               max_chars=args.max_chars)
    except IoFailure as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(f"kept {report.kept} of {report.total}; dropped incorrect={report.dropped_incorrect} "
          f"missing_gold={report.dropped_missing_gold} too_long={report.dropped_too_long}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        traces = load_traces(args.traces)
    except (IoFailure, ValueError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    status = EXIT_OK
    for n, t in enumerate(traces, start=1):
        kinds = Counter(e["type"] for e in t.get("events", []))
        try:
            replay_ok = not replay_mismatches(t)
        except (ReapError, ValueError) as exc:
            replay_ok = False
            log.error("trace %d: replay failed: %s", n, exc)
        if not replay_ok:
            status = EXIT_RUNTIME
        print(f"[{n}] {t['question']}")
        print(f"    answer: {t.get('answer')!r}  status: {t.get('status')}  "
              f"termination: {t.get('termination')}  iterations: {t.get('iterations')}")
        print("    events: " + ", ".join(f"{k}={v}" for k, v in sorted(kinds.items())))
        print(f"    plan replay: {'ok' if replay_ok else 'MISMATCH'}")
    return status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0)

    run_opts = argparse.ArgumentParser(add_help=False)
    run_opts.add_argument("--config", required=True, help="YAML/JSON config file")
    run_opts.add_argument("--index", help="saved corpus index (overrides the config retriever)")
    run_opts.add_argument("--max-iterations", type=int)
    run_opts.add_argument("--top-k", type=int)
    run_opts.add_argument("--backend", action="append", metavar="ROLE=PROFILE",
                          help="assign a config profile to a role (repeatable)")
    run_opts.add_argument("--trace", help="write traces as JSON lines to this file")

    parser = argparse.ArgumentParser(prog="reap", description="Recursive plan-and-extract multi-hop QA")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="build and save a BM25 corpus index")
    p.add_argument("corpus")
    p.add_argument("--index", required=True, help="output index file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("ask", parents=[common, run_opts], help="answer one question")
    p.add_argument("question")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("bench", parents=[common, run_opts], help="evaluate on a dataset file")
    p.add_argument("dataset")
    p.add_argument("--out", default="bench_out", help="report directory")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--limit", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export", parents=[common], help="export filtered training trajectories")
    p.add_argument("traces")
    p.add_argument("--out", required=True)
    p.add_argument("--require-correct", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--max-chars", type=int, default=DEFAULT_MAX_CHARS)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("inspect", parents=[common], help="summarize traces and check plan replay")
    p.add_argument("traces")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
