"""Two-stage solve pipeline with bidirectional refinement.

A query first goes to the formalization policy, which emits candidate
model documents; the first one that parses cleanly is handed to the
logic-generation policy, which must answer with a plan and a fenced
program.  The program runs in the executor.  Failures feed a small state
machine: program-level failures retry logic generation a bounded number
of times per model, then escalate back to formalization with the
diagnostic attached; the whole loop stops at a fixed attempt budget.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .endpoints import ChatClient, ChatEndpoint
from .executor import (
    ExecutionLimits,
    ExecutionResult,
    ExecStatus,
    ExecutorBackend,
    MiniInterpreterBackend,
    normalize_answer,
)
from .prompts import chat_messages, render_template, split_plan_and_program
from .schema import FormalModel, SchemaViolation, parse_model, serialize


@dataclass(frozen=True)
class Query:
    question: str
    instruction: str
    id: str
    gold_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("question must be nonempty")
        if not self.id:
            raise ValueError("query id must be nonempty")


class StepKind(Enum):
    REGENERATE_PROGRAM = "RegenerateProgram"
    FEEDBACK_TO_OGF = "FeedbackToOGF"


@dataclass(frozen=True)
class RefinementStep:
    kind: StepKind
    cause: str
    attempt: int  # ordinal, strictly increasing within a trace


@dataclass(frozen=True)
class Abort:
    cause: str


@dataclass(frozen=True)
class RefinePolicy:
    max_attempts: int = 4
    program_retries_per_model: int = 1
    n_candidates: int = 1
    context_isolation: bool = True

    def __post_init__(self) -> None:
        if self.max_attempts < 0:
            raise ValueError("max_attempts must be >= 0")
        if self.program_retries_per_model < 0:
            raise ValueError("program_retries_per_model must be >= 0")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


ModelCandidate = tuple[str, "FormalModel | tuple[SchemaViolation, ...]"]


@dataclass(frozen=True)
class ReasoningTrace:
    query: Query
    model_candidates: tuple[ModelCandidate, ...]
    chosen_model: FormalModel | None
    logic_plan: str
    program: str
    execution: ExecutionResult | None
    final_answer: str | None
    refinement_steps: tuple[RefinementStep, ...]
    token_counts: tuple[int, int, int]  # (T_m, T_p, T_a) whitespace tokens
    abort_cause: str | None

    def __post_init__(self) -> None:
        solved = self.execution is not None and self.execution.status is ExecStatus.OK
        if solved != (self.final_answer is not None):
            raise ValueError("final_answer must be present exactly when execution succeeded")
        attempts = [s.attempt for s in self.refinement_steps]
        if attempts != sorted(attempts) or len(set(attempts)) != len(attempts):
            raise ValueError("refinement attempts must be strictly increasing")


class AllCandidatesInvalid(Exception):
    """Every sampled model document failed to parse; candidates attached."""

    def __init__(self, candidates: list[ModelCandidate]):
        super().__init__(f"all {len(candidates)} model candidates failed to parse")
        self.candidates = candidates


class NoCodeBlock(Exception):
    """The logic-generation completion lacked a fenced program."""


def _count_tokens(text: str | None) -> int:
    return len(text.split()) if text else 0


def formalize(query: Query, endpoint: ChatEndpoint, client: ChatClient,
              n_candidates: int = 1, feedback: str | None = None) -> list[ModelCandidate]:
    """Sample n candidate model documents and attempt to parse each one.

    Entries come back in sampling order.  Raises AllCandidatesInvalid when
    no candidate parses; the exception carries the annotated entries so the
    caller can still record them.
    """
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    if feedback is None:
        prompt = render_template("ogf_v1", question=query.question,
                                 instruction=query.instruction)
    else:
        prompt = render_template("ogf_feedback_v1", question=query.question,
                                 instruction=query.instruction, feedback=feedback)
    completions = client.complete(endpoint, chat_messages(prompt), n_candidates)
    entries: list[ModelCandidate] = []
    for raw in completions:
        parsed = parse_model(raw)
        if isinstance(parsed, FormalModel):
            entries.append((raw, parsed))
        else:
            entries.append((raw, tuple(parsed)))
    if not any(isinstance(parsed, FormalModel) for _, parsed in entries):
        raise AllCandidatesInvalid(entries)
    return entries


def generate_logic(model: FormalModel, endpoint: ChatEndpoint, client: ChatClient,
                   feedback: str | None = None,
                   extra_context: str | None = None) -> tuple[str, str]:
    """Ask the logic policy for a plan and program given the serialized model.

    The prompt carries only the model document unless extra_context is
    supplied (context isolation disabled).  The last fenced block is the
    program; everything else is the plan.
    """
    document = serialize(model)
    if feedback is None:
        prompt = render_template("lg_v1", model_document=document)
    else:
        prompt = render_template("lg_feedback_v1", model_document=document,
                                 feedback=feedback)
    if extra_context:
        prompt = prompt + "\nOriginal problem:\n" + extra_context + "\n"
    completion = client.complete(endpoint, chat_messages(prompt), 1)[0]
    split = split_plan_and_program(completion)
    if split is None:
        raise NoCodeBlock("completion contained no fenced program")
    return split


@dataclass(frozen=True)
class Diagnostic:
    stage: str  # "model" or "program"
    message: str

    def __post_init__(self) -> None:
        if self.stage not in ("model", "program"):
            raise ValueError("diagnostic stage must be 'model' or 'program'")


def decide_refinement(failure: Diagnostic, history: Sequence[RefinementStep],
                      policy: RefinePolicy) -> RefinementStep | Abort:
    """Pick the next refinement move, or Abort once the budget is spent.

    Model-level failures always go back to formalization.  Program-level
    failures retry logic generation until the per-model retry allowance is
    used up, then escalate.
    """
    if len(history) >= policy.max_attempts:
        return Abort(cause=failure.message)
    if failure.stage == "model":
        kind = StepKind.FEEDBACK_TO_OGF
    else:
        retries_on_model = 0
        for step in reversed(history):
            if step.kind is not StepKind.REGENERATE_PROGRAM:
                break
            retries_on_model += 1
        if retries_on_model >= policy.program_retries_per_model:
            kind = StepKind.FEEDBACK_TO_OGF
        else:
            kind = StepKind.REGENERATE_PROGRAM
    return RefinementStep(kind=kind, cause=failure.message, attempt=len(history) + 1)


def _first_valid(entries: Sequence[ModelCandidate]) -> FormalModel:
    for _, parsed in entries:
        if isinstance(parsed, FormalModel):
            return parsed
    raise AssertionError("no valid candidate in entries")  # guarded by formalize


def solve(query: Query, ogf: ChatEndpoint, lg: ChatEndpoint, policy: RefinePolicy,
          client: ChatClient, backend: ExecutorBackend | None = None,
          limits: ExecutionLimits = ExecutionLimits(),
          trace_log: str | Path | None = None) -> ReasoningTrace:
    """Run the full two-stage pipeline for one query.

    Always returns a trace; budget exhaustion is recorded in abort_cause
    rather than raised.  Endpoint transport errors propagate to the caller.
    """
    backend = backend or MiniInterpreterBackend()
    history: list[RefinementStep] = []
    candidates: list[ModelCandidate] = []
    model: FormalModel | None = None
    plan, program = "", ""
    execution: ExecutionResult | None = None
    final_answer: str | None = None
    abort_cause: str | None = None
    ogf_feedback: str | None = None
    lg_feedback: str | None = None

    def handle_failure(diag: Diagnostic) -> bool:
        """Apply one refinement decision; True means keep looping."""
        nonlocal model, ogf_feedback, lg_feedback, abort_cause
        decision = decide_refinement(diag, history, policy)
        if isinstance(decision, Abort):
            abort_cause = f"budget exhausted: {decision.cause}"
            return False
        history.append(decision)
        if decision.kind is StepKind.REGENERATE_PROGRAM:
            lg_feedback = diag.message
        else:
            model = None
            ogf_feedback = diag.message
            lg_feedback = None
        return True

    while True:
        if model is None:
            try:
                entries = formalize(query, ogf, client, policy.n_candidates,
                                    feedback=ogf_feedback)
            except AllCandidatesInvalid as exc:
                candidates.extend(exc.candidates)
                summary = _violation_summary(exc.candidates)
                if handle_failure(Diagnostic("model", summary)):
                    continue
                break
            candidates.extend(entries)
            model = _first_valid(entries)
        extra = None if policy.context_isolation else query.question
        try:
            plan, program = generate_logic(model, lg, client, feedback=lg_feedback,
                                           extra_context=extra)
        except NoCodeBlock as exc:
            if handle_failure(Diagnostic("program", str(exc))):
                continue
            break
        execution = backend.run(program, limits)
        if execution.status is ExecStatus.OK:
            final_answer = normalize_answer(execution.answer).render()
            break
        detail = execution.stderr_excerpt or execution.status.value
        if not handle_failure(Diagnostic("program", f"{execution.status.value}: {detail}")):
            break

    trace = ReasoningTrace(
        query=query,
        model_candidates=tuple(candidates),
        chosen_model=model,
        logic_plan=plan,
        program=program,
        execution=execution,
        final_answer=final_answer,
        refinement_steps=tuple(history),
        token_counts=(
            _count_tokens(serialize(model)) if model is not None else 0,
            _count_tokens(program),
            _count_tokens(final_answer),
        ),
        abort_cause=abort_cause,
    )
    if trace_log is not None:
        append_trace(trace, trace_log)
    return trace


def _violation_summary(entries: Sequence[ModelCandidate]) -> str:
    parts = []
    for i, (_, parsed) in enumerate(entries):
        if isinstance(parsed, FormalModel):
            continue
        codes = ", ".join(v.message for v in parsed[:3])
        parts.append(f"candidate {i}: {codes}")
    return "no candidate model parsed: " + "; ".join(parts)


# --- trace serialization ----------------------------------------------------

def _trace_payload(trace: ReasoningTrace, include_timing: bool) -> dict:
    def candidate_entry(entry: ModelCandidate) -> dict:
        raw, parsed = entry
        if isinstance(parsed, FormalModel):
            return {"raw": raw, "model": serialize(parsed), "violations": None}
        return {"raw": raw, "model": None,
                "violations": [{"code": v.code.value, "section": v.section,
                                "line": v.line, "message": v.message}
                               for v in parsed]}

    execution = None
    if trace.execution is not None:
        execution = {
            "status": trace.execution.status.value,
            "answer": trace.execution.answer,
            "stderr_excerpt": trace.execution.stderr_excerpt,
        }
        if include_timing:
            execution["elapsed"] = trace.execution.elapsed
    return {
        "query": {"id": trace.query.id, "question": trace.query.question,
                  "instruction": trace.query.instruction,
                  "gold_answer": trace.query.gold_answer},
        "model_candidates": [candidate_entry(e) for e in trace.model_candidates],
        "chosen_model": serialize(trace.chosen_model) if trace.chosen_model else None,
        "logic_plan": trace.logic_plan,
        "program": trace.program,
        "execution": execution,
        "final_answer": trace.final_answer,
        "refinement_steps": [{"kind": s.kind.value, "cause": s.cause, "attempt": s.attempt}
                             for s in trace.refinement_steps],
        "token_counts": list(trace.token_counts),
        "abort_cause": trace.abort_cause,
    }


def trace_to_dict(trace: ReasoningTrace, include_timing: bool = True) -> dict:
    payload = _trace_payload(trace, include_timing)
    payload["trace_id"] = trace_id(trace)
    return payload


def trace_fingerprint(trace: ReasoningTrace) -> str:
    """Content hash over everything except timing, for determinism checks."""
    blob = json.dumps(_trace_payload(trace, include_timing=False),
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def trace_id(trace: ReasoningTrace) -> str:
    return f"{trace.query.id}-{trace_fingerprint(trace)[:12]}"


def append_trace(trace: ReasoningTrace, path: str | Path) -> None:
    record = json.dumps(trace_to_dict(trace), sort_keys=True)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(record + "\n")


def read_traces(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def find_trace(path: str | Path, wanted_id: str) -> dict | None:
    for record in read_traces(path):
        if record.get("trace_id") == wanted_id or record.get("query", {}).get("id") == wanted_id:
            return record
    return None
