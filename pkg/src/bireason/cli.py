"""Command-line surface: solve, bench, build-dataset, train-toy, inspect-trace."""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .bench import (
    BenchConfig,
    ConfigInvalid,
    KNOWN_METHODS,
    NotFound,
    TaskFileInvalid,
    inspect_trace,
    load_seed_corpus,
    run_bench,
    train_toy,
    write_report,
)
from .dataset import build_dataset
from .endpoints import (
    EndpointError,
    EndpointUnreachable,
    HttpChatClient,
    parse_endpoint_flag,
)
from .orchestrator import Query, RefinePolicy, solve, trace_id


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--cache-dir", default=None,
                        help="content-addressed response cache directory")
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bireason",
        description="Two-stage formal reasoning pipeline with a toy bilevel trainer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one question end to end")
    p_solve.add_argument("--question", required=True)
    p_solve.add_argument("--instruction", default="Answer the question.")
    p_solve.add_argument("--id", default="cli")
    p_solve.add_argument("--endpoint-ogf", required=True,
                         help="formalization endpoint as BASE_URL::MODEL_NAME")
    p_solve.add_argument("--endpoint-lg", required=True,
                         help="logic-generation endpoint as BASE_URL::MODEL_NAME")
    p_solve.add_argument("--n-candidates", type=int, default=1)
    p_solve.add_argument("--max-attempts", type=int, default=4)
    p_solve.add_argument("--no-context-isolation", action="store_true")
    p_solve.add_argument("--out", default=None, help="trace log to append to")
    _add_common_flags(p_solve)

    p_bench = sub.add_parser("bench", help="run methods over a task file")
    p_bench.add_argument("task_file")
    p_bench.add_argument("--endpoint-ogf", required=True)
    p_bench.add_argument("--endpoint-lg", required=True)
    p_bench.add_argument("--methods", nargs="+", default=list(KNOWN_METHODS),
                         choices=list(KNOWN_METHODS))
    p_bench.add_argument("--parallelism", type=int, default=4)
    p_bench.add_argument("--shots", type=int, default=2)
    p_bench.add_argument("--baseline", default=None,
                         help="force the relative-gain baseline method")
    p_bench.add_argument("--out", default="bench_out", help="report directory")
    _add_common_flags(p_bench)

    p_data = sub.add_parser("build-dataset", help="construct an SFT dataset")
    p_data.add_argument("seed_corpus")
    p_data.add_argument("--endpoint-teacher", required=True)
    p_data.add_argument("--endpoint-judge", required=True)
    p_data.add_argument("-N", "--candidates", type=int, default=8,
                        help="candidates sampled per question")
    p_data.add_argument("-K", "--keep", type=int, default=2,
                        help="retained samples per question")
    p_data.add_argument("--out", default="dataset.jsonl")
    _add_common_flags(p_data)

    p_train = sub.add_parser("train-toy", help="run the alternating trainer")
    p_train.add_argument("--config", default=None,
                         help="JSON config; defaults to the shipped dominant-model task")
    p_train.add_argument("--out", default="train_out", help="output directory")

    p_inspect = sub.add_parser("inspect-trace", help="render one persisted trace")
    p_inspect.add_argument("trace_id")
    p_inspect.add_argument("--trace-log", default="traces.jsonl")

    return parser


def _client(args: argparse.Namespace) -> HttpChatClient:
    return HttpChatClient(cache_dir=args.cache_dir)


def cmd_solve(args: argparse.Namespace) -> int:
    ogf = parse_endpoint_flag(args.endpoint_ogf)
    lg = parse_endpoint_flag(args.endpoint_lg)
    policy = RefinePolicy(max_attempts=args.max_attempts,
                          n_candidates=args.n_candidates,
                          context_isolation=not args.no_context_isolation)
    query = Query(question=args.question, instruction=args.instruction, id=args.id)
    trace = solve(query, ogf, lg, policy, _client(args), trace_log=args.out)
    if trace.final_answer is not None:
        print(trace.final_answer)
        print(f"trace: {trace_id(trace)}", file=sys.stderr)
        return 0
    print(f"unsolved: {trace.abort_cause}", file=sys.stderr)
    print(f"trace: {trace_id(trace)}", file=sys.stderr)
    return 1


def cmd_bench(args: argparse.Namespace) -> int:
    ogf = parse_endpoint_flag(args.endpoint_ogf)
    lg = parse_endpoint_flag(args.endpoint_lg)
    config = BenchConfig(methods=tuple(args.methods), parallelism=args.parallelism,
                         seed=args.seed, shots=args.shots,
                         baseline_override=args.baseline)
    out_dir = Path(args.out)
    report = run_bench(args.task_file, ogf, lg, _client(args), config,
                       trace_log=out_dir / "traces.jsonl" if args.out else None)
    paths = write_report(report, out_dir)
    print(report.render_table())
    print(f"report: {paths['report']}", file=sys.stderr)
    return 0


def cmd_build_dataset(args: argparse.Namespace) -> int:
    teacher = parse_endpoint_flag(args.endpoint_teacher)
    judge = parse_endpoint_flag(args.endpoint_judge)
    queries = load_seed_corpus(args.seed_corpus)
    if args.keep == 0:
        print("warning: K=0 retains nothing; the dataset will be empty", file=sys.stderr)
    manifest = build_dataset(queries, teacher, judge, _client(args),
                             n=args.candidates, k=args.keep, out_path=args.out,
                             source_corpus_id=str(args.seed_corpus))
    manifest_path = Path(args.out).with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def default_train_config() -> Path:
    with resources.as_file(resources.files("bireason")
                           .joinpath("configs/train_dominant.json")) as path:
        return path


def cmd_train_toy(args: argparse.Namespace) -> int:
    config_path = Path(args.config) if args.config else default_train_config()
    _, summary, ok = train_toy(config_path, args.out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if ok else 1


def cmd_inspect_trace(args: argparse.Namespace) -> int:
    print(inspect_trace(args.trace_log, args.trace_id), end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "solve": cmd_solve,
        "bench": cmd_bench,
        "build-dataset": cmd_build_dataset,
        "train-toy": cmd_train_toy,
        "inspect-trace": cmd_inspect_trace,
    }
    try:
        return handlers[args.command](args)
    except (TaskFileInvalid, ConfigInvalid, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NotFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (EndpointError, EndpointUnreachable) as exc:
        print(f"endpoint failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
