"""Benchmark harness: task files, method runners, reports, toy training.

Accuracy is kept as an exact fraction and only rendered as a percentage
at output time.  Relative gain follows the reporting convention
(ours - best baseline) / best baseline, rounded to one decimal of a
percent.  Reports land as JSON plus a CSV of per-item outcomes and a
rendered figure alongside.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import figures
from .bilevel import (
    TrainConfig,
    TrainHistory,
    bilevel_gap,
    constant_reward_task,
    dominant_model_task,
    enumerate_optimum,
    single_output_task,
    train_alternating,
)
from .endpoints import ChatClient, ChatEndpoint, EndpointError, EndpointUnreachable
from .executor import (
    AnswerKind,
    ExecStatus,
    ExecutionLimits,
    ExecutorBackend,
    MiniInterpreterBackend,
    answers_match,
    execute,
    normalize_answer,
    try_normalize_answer,
)
from .orchestrator import Query, RefinePolicy, solve, trace_id
from .prompts import (
    chat_messages,
    format_cot_exemplars,
    format_pal_exemplars,
    parse_final_answer_line,
    render_template,
    split_plan_and_program,
)

OURS_METHOD = "two_stage"
BASELINE_METHODS = ("program_aided", "cot")
KNOWN_METHODS = (OURS_METHOD,) + BASELINE_METHODS


class TaskFileInvalid(Exception):
    pass


class ConfigInvalid(Exception):
    pass


class NotFound(Exception):
    pass


@dataclass(frozen=True)
class TaskItem:
    id: str
    question: str
    instruction: str
    gold_answer: str
    answer_kind: AnswerKind


def load_task_file(path: str | Path) -> list[TaskItem]:
    """Parse and validate a JSON-lines task file."""
    path = Path(path)
    if not path.exists():
        raise TaskFileInvalid(f"task file not found: {path}")
    items: list[TaskItem] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TaskFileInvalid(f"line {lineno}: not valid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise TaskFileInvalid(f"line {lineno}: record must be an object")
        for fld in ("id", "question", "instruction", "gold_answer", "answer_kind"):
            if fld not in record or not isinstance(record[fld], str) or not record[fld]:
                raise TaskFileInvalid(f"line {lineno}: missing or empty field {fld!r}")
        try:
            kind = AnswerKind(record["answer_kind"])
        except ValueError as exc:
            raise TaskFileInvalid(f"line {lineno}: unknown answer_kind "
                                  f"{record['answer_kind']!r}") from exc
        if record["id"] in seen_ids:
            raise TaskFileInvalid(f"line {lineno}: duplicate id {record['id']!r}")
        seen_ids.add(record["id"])
        items.append(TaskItem(id=record["id"], question=record["question"],
                              instruction=record["instruction"],
                              gold_answer=record["gold_answer"], answer_kind=kind))
    if not items:
        raise TaskFileInvalid(f"task file is empty: {path}")
    return items


def load_seed_corpus(path: str | Path) -> list[Query]:
    """Seed corpus for dataset building: task items without answer_kind."""
    path = Path(path)
    if not path.exists():
        raise TaskFileInvalid(f"seed corpus not found: {path}")
    queries: list[Query] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TaskFileInvalid(f"line {lineno}: not valid JSON: {exc}") from exc
        for fld in ("id", "question", "instruction", "gold_answer"):
            if fld not in record or not isinstance(record[fld], str) or not record[fld]:
                raise TaskFileInvalid(f"line {lineno}: missing or empty field {fld!r}")
        if record["id"] in seen:
            raise TaskFileInvalid(f"line {lineno}: duplicate id {record['id']!r}")
        seen.add(record["id"])
        queries.append(Query(question=record["question"], instruction=record["instruction"],
                             id=record["id"], gold_answer=record["gold_answer"]))
    if not queries:
        raise TaskFileInvalid(f"seed corpus is empty: {path}")
    return queries


def relative_gain(ours: float, best_baseline: float) -> float:
    """Percent gain over the baseline, one decimal: 100*(ours-base)/base."""
    if best_baseline <= 0:
        raise ValueError("baseline accuracy must be positive for a relative gain")
    return round(100.0 * (ours - best_baseline) / best_baseline, 1)


@dataclass(frozen=True)
class BenchConfig:
    methods: tuple[str, ...] = KNOWN_METHODS
    parallelism: int = 4
    seed: int = 0
    shots: int = 2
    item_timeout: float = 120.0
    baseline_override: str | None = None
    n_candidates: int = 1
    limits: ExecutionLimits = ExecutionLimits()

    def __post_init__(self) -> None:
        if not self.methods:
            raise ValueError("at least one method is required")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ValueError(f"unknown method {m!r}; known: {KNOWN_METHODS}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.shots < 0 or self.shots > 3:
            raise ValueError("shots must be in 0..3")
        if self.item_timeout <= 0:
            raise ValueError("item_timeout must be positive")

    def to_dict(self) -> dict:
        return {
            "methods": list(self.methods), "parallelism": self.parallelism,
            "seed": self.seed, "shots": self.shots,
            "item_timeout": self.item_timeout,
            "baseline_override": self.baseline_override,
            "n_candidates": self.n_candidates,
            "limits": {"wall_timeout": self.limits.wall_timeout,
                       "memory_cap": self.limits.memory_cap,
                       "output_cap": self.limits.output_cap},
        }


@dataclass
class ItemOutcome:
    item_id: str
    method: str
    answer: str | None
    correct: bool
    error: str | None
    elapsed: float
    trace_id: str | None = None

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "method": self.method, "answer": self.answer,
                "correct": self.correct, "error": self.error,
                "elapsed": self.elapsed, "trace_id": self.trace_id}


@dataclass
class BenchReport:
    accuracies: dict[str, Fraction]
    outcomes: list[ItemOutcome]
    baseline: str | None
    gain_percent: float | None
    config: BenchConfig
    seed: int
    notes: list[str] = field(default_factory=list)
    total_elapsed: float = 0.0

    def to_dict(self) -> dict:
        config_blob = json.dumps(self.config.to_dict(), sort_keys=True,
                                 separators=(",", ":"))
        return {
            "accuracy": {
                method: {"correct": acc.numerator, "total": acc.denominator,
                         "percent": round(100.0 * float(acc), 2)}
                for method, acc in self.accuracies.items()
            },
            "relative_gain": {"baseline": self.baseline, "percent": self.gain_percent},
            "items": [o.to_dict() for o in self.outcomes],
            "notes": self.notes,
            "config": self.config.to_dict(),
            "config_hash": hashlib.sha256(config_blob.encode("utf-8")).hexdigest(),
            "seed": self.seed,
            "runtime": {
                "total_elapsed": self.total_elapsed,
                "mean_item_elapsed": (
                    sum(o.elapsed for o in self.outcomes) / len(self.outcomes)
                    if self.outcomes else 0.0),
            },
        }

    def render_table(self) -> str:
        lines = [f"{'method':<16} {'correct':>8} {'total':>6} {'accuracy':>9}"]
        for method, acc in self.accuracies.items():
            lines.append(f"{method:<16} {acc.numerator:>8} {acc.denominator:>6} "
                         f"{100.0 * float(acc):>8.1f}%")
        if self.gain_percent is not None:
            sign = "+" if self.gain_percent >= 0 else ""
            lines.append(f"relative gain vs {self.baseline}: {sign}{self.gain_percent}%")
        return "\n".join(lines)


def _gold_canonical(item: TaskItem):
    gold = try_normalize_answer(item.gold_answer, item.answer_kind)
    if gold is None:
        raise TaskFileInvalid(f"item {item.id}: gold answer {item.gold_answer!r} "
                              f"does not normalize as {item.answer_kind.value}")
    return gold


def _check_answer(raw_answer: str | None, item: TaskItem) -> bool:
    if raw_answer is None:
        return False
    gold = _gold_canonical(item)
    candidate = try_normalize_answer(raw_answer, item.answer_kind)
    return candidate is not None and answers_match(candidate, gold)


def run_two_stage(item: TaskItem, ogf: ChatEndpoint, lg: ChatEndpoint,
                  client: ChatClient, config: BenchConfig,
                  backend: ExecutorBackend, trace_log: Path | None) -> ItemOutcome:
    started = time.monotonic()
    query = Query(question=item.question, instruction=item.instruction,
                  id=item.id, gold_answer=item.gold_answer)
    policy = RefinePolicy(n_candidates=config.n_candidates)
    trace = solve(query, ogf, lg, policy, client, backend=backend,
                  limits=config.limits, trace_log=trace_log)
    answer = trace.execution.answer if trace.execution is not None else None
    return ItemOutcome(item_id=item.id, method=OURS_METHOD, answer=trace.final_answer,
                       correct=_check_answer(answer, item),
                       error=trace.abort_cause, elapsed=time.monotonic() - started,
                       trace_id=trace_id(trace))


def run_program_aided(item: TaskItem, lg: ChatEndpoint, client: ChatClient,
                      config: BenchConfig, backend: ExecutorBackend,
                      exemplars: str) -> ItemOutcome:
    started = time.monotonic()
    prompt = render_template("pal_v1", question=item.question, exemplars=exemplars)
    completion = client.complete(lg, chat_messages(prompt), 1)[0]
    split = split_plan_and_program(completion)
    if split is None:
        return ItemOutcome(item_id=item.id, method="program_aided", answer=None,
                           correct=False, error="no fenced program",
                           elapsed=time.monotonic() - started)
    result = execute(split[1], config.limits, backend)
    answer = result.answer if result.status is ExecStatus.OK else None
    error = None if result.status is ExecStatus.OK else result.status.value
    return ItemOutcome(item_id=item.id, method="program_aided", answer=answer,
                       correct=_check_answer(answer, item), error=error,
                       elapsed=time.monotonic() - started)


def run_cot(item: TaskItem, lg: ChatEndpoint, client: ChatClient,
            config: BenchConfig, exemplars: str) -> ItemOutcome:
    started = time.monotonic()
    prompt = render_template("cot_v1", question=item.question, exemplars=exemplars)
    completion = client.complete(lg, chat_messages(prompt), 1)[0]
    answer = parse_final_answer_line(completion)
    error = None if answer is not None else "no final answer line"
    return ItemOutcome(item_id=item.id, method="cot", answer=answer,
                       correct=_check_answer(answer, item), error=error,
                       elapsed=time.monotonic() - started)


def run_bench(task_path: str | Path, ogf: ChatEndpoint, lg: ChatEndpoint,
              client: ChatClient, config: BenchConfig = BenchConfig(),
              backend: ExecutorBackend | None = None,
              trace_log: str | Path | None = None) -> BenchReport:
    """Run every configured method over every item; failures count as wrong."""
    backend = backend or MiniInterpreterBackend()
    items = load_task_file(task_path)
    for item in items:
        _gold_canonical(item)  # validate up front so bad gold fails fast
    trace_log = Path(trace_log) if trace_log is not None else None
    rng = np.random.Generator(np.random.Philox(config.seed))
    cot_exemplars = format_cot_exemplars(config.shots, rng)
    pal_exemplars = format_pal_exemplars(config.shots, rng)
    started = time.monotonic()

    def run_one(method: str, item: TaskItem) -> ItemOutcome:
        try:
            if method == OURS_METHOD:
                return run_two_stage(item, ogf, lg, client, config, backend, trace_log)
            if method == "program_aided":
                return run_program_aided(item, lg, client, config, backend, pal_exemplars)
            return run_cot(item, lg, client, config, cot_exemplars)
        except (EndpointError, EndpointUnreachable) as exc:
            return ItemOutcome(item_id=item.id, method=method, answer=None,
                               correct=False, error=str(exc), elapsed=0.0)

    jobs = [(method, item) for method in config.methods for item in items]
    outcomes: list[ItemOutcome | None] = [None] * len(jobs)
    with concurrent.futures.ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        futures = {pool.submit(run_one, method, item): i
                   for i, (method, item) in enumerate(jobs)}
        for future, i in futures.items():
            method, item = jobs[i]
            try:
                outcomes[i] = future.result(timeout=config.item_timeout)
            except concurrent.futures.TimeoutError:
                outcomes[i] = ItemOutcome(item_id=item.id, method=method, answer=None,
                                          correct=False, error="item timeout",
                                          elapsed=config.item_timeout)
    settled = [o for o in outcomes if o is not None]

    accuracies: dict[str, Fraction] = {}
    for method in config.methods:
        per_method = [o for o in settled if o.method == method]
        correct = sum(1 for o in per_method if o.correct)
        accuracies[method] = Fraction(correct, len(per_method))

    baseline, gain, notes = _pick_baseline(accuracies, config.baseline_override)
    return BenchReport(accuracies=accuracies, outcomes=settled, baseline=baseline,
                       gain_percent=gain, config=config, seed=config.seed,
                       notes=notes, total_elapsed=time.monotonic() - started)


def _pick_baseline(accuracies: Mapping[str, Fraction],
                   override: str | None) -> tuple[str | None, float | None, list[str]]:
    notes: list[str] = []
    baselines = {m: a for m, a in accuracies.items() if m != OURS_METHOD}
    if OURS_METHOD not in accuracies or not baselines:
        notes.append("relative gain omitted: need both the two-stage method and a baseline")
        return None, None, notes
    if override is not None:
        if override not in baselines:
            raise ValueError(f"baseline override {override!r} was not run")
        chosen = override
        notes.append(f"baseline fixed by override to {override!r}")
    else:
        best = max(baselines.values())
        best_methods = sorted(m for m, a in baselines.items() if a == best)
        chosen = best_methods[0]
        if len(best_methods) > 1:
            notes.append(f"baseline tie between {best_methods}; using {chosen!r}")
    base = float(baselines[chosen])
    ours = float(accuracies[OURS_METHOD])
    if base <= 0:
        notes.append("relative gain omitted: best baseline accuracy is zero")
        return chosen, None, notes
    gain = relative_gain(ours, base)
    others = {m: round(100 * float(a), 2) for m, a in baselines.items() if m != chosen}
    if others:
        notes.append(f"gain computed against {chosen!r}; other baselines (%): {others}")
    return chosen, gain, notes


def write_report(report: BenchReport, out_dir: str | Path) -> dict[str, Path]:
    """Persist report.json, items.csv, and the accuracy figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out_dir / "report.json",
        "items": out_dir / "items.csv",
        "figure": out_dir / "accuracy.png",
    }
    paths["report"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    with open(paths["items"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "method", "answer", "correct", "error",
                         "elapsed", "trace_id"])
        for o in report.outcomes:
            writer.writerow([o.item_id, o.method, o.answer if o.answer is not None else "",
                             int(o.correct), o.error or "", f"{o.elapsed:.3f}",
                             o.trace_id or ""])
    figures.render_accuracy_bars({m: float(a) for m, a in report.accuracies.items()},
                                 paths["figure"])
    return paths


# --- toy training entry -------------------------------------------------------

TASK_BUILDERS = {
    "dominant_model": dominant_model_task,
    "single_output": single_output_task,
    "constant": constant_reward_task,
}


def load_train_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("config must be a JSON object")
    for section in ("task", "train", "thresholds"):
        if section not in data or not isinstance(data[section], dict):
            raise ConfigInvalid(f"config must contain a {section!r} object")
    task_spec = dict(data["task"])
    kind = task_spec.pop("kind", None)
    if kind not in TASK_BUILDERS:
        raise ConfigInvalid(f"task kind must be one of {sorted(TASK_BUILDERS)}")
    try:
        data["_task"] = TASK_BUILDERS[kind](**task_spec)
        data["_train"] = TrainConfig.from_dict(data["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc
    thresholds = data["thresholds"]
    for key in ("min_reward_ratio", "max_gap"):
        if key not in thresholds or not isinstance(thresholds[key], (int, float)):
            raise ConfigInvalid(f"thresholds must declare numeric {key!r}")
    return data


def train_toy(config_path: str | Path, out_dir: str | Path) -> tuple[TrainHistory, dict, bool]:
    """Train on the configured toy task, persist history and summary.

    Returns (history, summary, thresholds_met).
    """
    config = load_train_config(config_path)
    task = config["_task"]
    train_cfg: TrainConfig = config["_train"]
    history = train_alternating(task, train_cfg)

    optimum, assignments = enumerate_optimum(task)
    final_reward = history.final_expected_reward()
    ratio = final_reward / optimum if optimum > 0 else 1.0
    last = history.records[-1]
    theta_x = _policy_from_snapshot(last.theta_x, {q: task.models(q) for q in task.questions})
    theta_y = _policy_from_snapshot(last.theta_y, {m: task.outputs(m) for m in task.all_models()})
    gap = bilevel_gap(task, theta_x, theta_y)
    dominant_hit = all(theta_x.argmax(q) == assignments[q][0] for q in task.questions)

    thresholds = config["thresholds"]
    ok = (ratio >= thresholds["min_reward_ratio"] and gap <= thresholds["max_gap"])
    summary = {
        "final_expected_reward": final_reward,
        "enumerated_optimum": optimum,
        "reward_ratio": ratio,
        "bilevel_gap": gap,
        "argmax_matches_optimum": dominant_hit,
        "thresholds": {"min_reward_ratio": thresholds["min_reward_ratio"],
                       "max_gap": thresholds["max_gap"]},
        "thresholds_met": ok,
        "iterations": train_cfg.iterations,
        "seed": train_cfg.seed,
    }

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history.write_jsonl(out_dir / "history.jsonl")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    with open(out_dir / "history.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "expected_reward", "j_h", "j_l",
                         "grad_norm_upper", "grad_norm_lower"])
        for rec in history.records:
            writer.writerow([rec.iteration, f"{rec.expected_reward:.10f}",
                             f"{rec.j_h:.10f}", f"{rec.j_l:.10f}",
                             f"{rec.grad_norm_upper:.10f}", f"{rec.grad_norm_lower:.10f}"])
    figures.render_training_curves(
        [r.expected_reward for r in history.records],
        [r.grad_norm_upper for r in history.records],
        [r.grad_norm_lower for r in history.records],
        out_dir / "training.png")
    return history, summary, ok


def _policy_from_snapshot(snapshot: Mapping[str, list[float]],
                          candidates: Mapping[str, tuple[str, ...]]):
    from .bilevel import SoftmaxPolicy

    return SoftmaxPolicy(candidates, {ctx: np.asarray(row) for ctx, row in snapshot.items()})


# --- trace inspection ----------------------------------------------------------


def inspect_trace(trace_log: str | Path, wanted_id: str) -> str:
    """Render one persisted trace as a structured text report."""
    from .orchestrator import find_trace

    trace_log = Path(trace_log)
    if not trace_log.exists():
        raise NotFound(f"trace log not found: {trace_log}")
    record = find_trace(trace_log, wanted_id)
    if record is None:
        raise NotFound(f"no trace with id {wanted_id!r} in {trace_log}")
    lines = [f"trace {record['trace_id']}",
             f"question: {record['query']['question']}",
             f"instruction: {record['query']['instruction']}"]
    if record.get("chosen_model"):
        lines += ["", "model:", record["chosen_model"].rstrip("\n")]
    else:
        lines += ["", "model: (none parsed)"]
    if record.get("logic_plan"):
        lines += ["", "plan:", record["logic_plan"]]
    if record.get("program"):
        lines += ["", "program:", record["program"]]
    execution = record.get("execution")
    if execution:
        lines += ["", f"execution: status={execution['status']} "
                      f"answer={execution['answer']!r}"]
        if execution.get("stderr_excerpt"):
            lines.append(f"stderr: {execution['stderr_excerpt']}")
    steps = record.get("refinement_steps") or []
    if steps:
        lines += ["", "refinement:"]
        for step in steps:
            lines.append(f"  {step['attempt']}. {step['kind']}: {step['cause']}")
    if record.get("abort_cause"):
        lines += ["", f"aborted: {record['abort_cause']}"]
    if record.get("final_answer") is not None:
        lines += ["", f"final answer: {record['final_answer']}"]
    return "\n".join(lines) + "\n"
