"""``abtm`` command line: check, run, simulate, bench.

Exit codes: 0 success, 1 failure of the thing being checked (invalid tree,
runtime error, inconsistent replicas, engine mismatch), 2 bad invocation,
unreadable files or invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, TextIO

from .errors import AbtmError, ConfigError, ExecutorError, OracleMismatch

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _json_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True)


def _range(text: str) -> tuple[int, int]:
    try:
        lo, _, hi = text.partition("..")
        return int(lo), int(hi or lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None


def _read(path: str) -> str:
    return Path(path).read_text()


# -- check ---------------------------------------------------------------


def cmd_check(args, out: TextIO, err: TextIO) -> int:
    from .dsl import parse_tree, validate

    try:
        text = _read(args.file)
    except OSError as exc:
        print(f"error: cannot read {args.file}: {exc.strerror or exc}", file=err)
        return EXIT_USAGE
    try:
        definition = parse_tree(text)
    except AbtmError as exc:
        print(f"{args.file}:{exc}", file=out)
        return EXIT_FAIL
    diagnostics = validate(definition)
    for d in diagnostics:
        print(f"{args.file}: {d}", file=out)
    errors = sum(d.is_error for d in diagnostics)
    if errors:
        return EXIT_FAIL
    nodes = sum(1 for _ in definition.root.walk())
    print(f"{args.file}: ok ({nodes} nodes, {len(diagnostics)} warnings)", file=out)
    return EXIT_OK


# -- run -----------------------------------------------------------------


def _describe(exc: Exception) -> str:
    node = getattr(exc, "node", None)
    where = f" in node {node!r}" if node else ""
    return f"{type(exc).__name__}{where}: {exc}"


def cmd_run(args, out: TextIO, err: TextIO, stdin: TextIO) -> int:
    from .dsl import build, parse_tree

    try:
        text = _read(args.file)
    except OSError as exc:
        print(f"error: cannot read {args.file}: {exc.strerror or exc}", file=err)
        return EXIT_USAGE
    try:
        tree = build(parse_tree(text))
    except AbtmError as exc:
        print(f"error: {args.file}: {exc}", file=err)
        return EXIT_FAIL

    def emit(step: int, outputs: dict) -> None:
        if args.trace:
            line = {"step": step, "root": tree.root.state.name, "out": outputs}
            print(_json_line(line), file=out)
        elif outputs:
            print(_json_line(outputs), file=out)

    if args.samples in (None, "-"):
        source = stdin
        close = False
    else:
        try:
            source = open(args.samples)
        except OSError as exc:
            print(f"error: cannot read {args.samples}: {exc.strerror or exc}", file=err)
            return EXIT_USAGE
        close = True
    try:
        try:
            first = tree.start()
        except AbtmError as exc:
            print(f"error: start: {_describe(exc)}", file=err)
            return EXIT_FAIL
        emit(0, first)
        index = 0
        for line in source:
            if not line.strip():
                continue
            index += 1
            try:
                sample = json.loads(line)
                if not isinstance(sample, dict):
                    raise ValueError("sample must be a JSON object")
                sample = {str(k): float(v) for k, v in sample.items()}
            except (ValueError, TypeError) as exc:
                print(f"error: sample {index}: {exc}", file=err)
                return EXIT_FAIL
            try:
                result = tree.callback(sample)
            except AbtmError as exc:
                print(f"error: sample {index}: {_describe(exc)}", file=err)
                return EXIT_FAIL
            emit(index, result)
    finally:
        if close:
            source.close()
    return EXIT_OK


# -- simulate ------------------------------------------------------------


def cmd_simulate(args, out: TextIO, err: TextIO) -> int:
    from .sim import ScenarioConfig, run_scenario

    try:
        cfg = ScenarioConfig.from_file(args.scenario)
    except OSError as exc:
        print(f"error: cannot read {args.scenario}: {exc.strerror or exc}", file=err)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE
    try:
        report = run_scenario(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE
    except ExecutorError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_FAIL
    if args.report:
        Path(args.report).write_text(report.to_json())
    out.write(report.to_text())
    return EXIT_OK if report.verdict else EXIT_FAIL


# -- bench ---------------------------------------------------------------


def cmd_bench(args, out: TextIO, err: TextIO) -> int:
    from .bench import BenchConfig, check_against_reference, generate_random_tree, generate_samples, run_bench

    seed = args.seed
    env_seed = os.environ.get("ABTM_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            print(f"error: ABTM_SEED must be an integer, got {env_seed!r}", file=err)
            return EXIT_USAGE
    try:
        cfg = BenchConfig(
            tree_count=args.trees,
            height=args.height,
            children=args.children,
            mode=args.mode,
            samples=args.samples,
            seed=seed,
            repetitions=args.repetitions,
            target_nodes=args.nodes,
        )
    except ConfigError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE

    # Gate first: both engines against the reference transcription.
    for tree_id in range(cfg.tree_count):
        tree_seed = cfg.seed * 1_000_003 + tree_id
        definition = generate_random_tree(tree_seed, cfg, cfg.tiers[tree_id % len(cfg.tiers)])
        for mode in cfg.modes:
            stream = generate_samples(definition, mode, min(cfg.samples, args.gate_samples), tree_seed ^ 0x5EED)
            try:
                check_against_reference(definition, stream)
            except OracleMismatch as exc:
                print(f"error: tree {tree_id} ({mode}): {exc}", file=err)
                return EXIT_FAIL

    report = run_bench(cfg)
    csv_path, json_path = report.write(Path(args.out))
    agg = report.aggregate()
    for mode, stats in agg.items():
        print(
            f"{mode}: trees={stats['trees']} median R={stats['median_R']:.3g} "
            f"min={stats['min_R']:.3g} max={stats['max_R']:.3g} "
            f"classical/async divergent={stats['divergent']}",
            file=out,
        )
    print("reference range for sparse trees of ~300 nodes: R in [10, 70]", file=out)
    print(f"wrote {csv_path} and {json_path}", file=out)
    return EXIT_OK


# -- entry point ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abtm", description="Asynchronous behavior trees with memory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="parse and validate a tree file")
    p.add_argument("file")

    p = sub.add_parser("run", help="run a tree over JSON-lines samples")
    p.add_argument("file")
    p.add_argument("--samples", default=None, help="JSON-lines file, or - for stdin (default)")
    p.add_argument("--trace", action="store_true",
                   help="one line per step (0 is start) with the root state, even when nothing is output")

    p = sub.add_parser("simulate", help="run a multi-replica scenario")
    p.add_argument("scenario")
    p.add_argument("--report", default=None, help="write the JSON report here")

    p = sub.add_parser("bench", help="time classical against asynchronous propagation")
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--height", type=_range, default=(3, 5))
    p.add_argument("--children", type=_range, default=(3, 7))
    p.add_argument("--mode", choices=("dense", "sparse", "both"), default="both")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=None, help="keep trees near this node count")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--gate-samples", type=int, default=25,
                   help="stream prefix checked against the reference engine per tree")
    p.add_argument("--out", default="bench-out")
    return parser


def main(argv: Optional[list[str]] = None, stdin: Optional[TextIO] = None,
         stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    out = stdout or sys.stdout
    err = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "check":
        return cmd_check(args, out, err)
    if args.command == "run":
        return cmd_run(args, out, err, stdin or sys.stdin)
    if args.command == "simulate":
        return cmd_simulate(args, out, err)
    return cmd_bench(args, out, err)


if __name__ == "__main__":
    sys.exit(main())
