"""Program execution behind a pluggable backend, plus answer normalization.

Two backends share one interface: the built-in straight-line interpreter
(hermetic, used by the primary test suite) and a subprocess adapter that
speaks a line-delimited JSON protocol to an external runner process.  All
failures are encoded in the result status; nothing escapes ``execute``.
"""

from __future__ import annotations

import json
import math
import re
import subprocess
import time
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, Sequence

from . import interp


class ExecStatus(Enum):
    OK = "ok"
    TIMEOUT = "timeout"
    RUNTIME_ERROR = "runtime_error"
    FORBIDDEN_OPERATION = "forbidden_operation"
    OUTPUT_OVERFLOW = "output_overflow"


@dataclass(frozen=True)
class ExecutionLimits:
    wall_timeout: float = 10.0
    memory_cap: int = 512 * 1024 * 1024
    output_cap: int = 64 * 1024

    def __post_init__(self) -> None:
        if self.wall_timeout <= 0 or self.memory_cap <= 0 or self.output_cap <= 0:
            raise ValueError("all execution limits must be positive")


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecStatus
    answer: str | None
    stderr_excerpt: str
    elapsed: float

    def __post_init__(self) -> None:
        if (self.status is ExecStatus.OK) != (self.answer is not None):
            raise ValueError("answer must be present exactly when status is ok")


class ExecutorBackend(Protocol):
    def run(self, program: str, limits: ExecutionLimits) -> ExecutionResult: ...


def _failure(status: ExecStatus, message: str, elapsed: float) -> ExecutionResult:
    return ExecutionResult(status=status, answer=None, stderr_excerpt=message[:500], elapsed=elapsed)


def extract_channel_answer(namespace: dict[str, object], printed_lines: Sequence[str]) -> str | None:
    """Answer-channel convention: final nonempty printed line, else ``answer``."""
    for line in reversed(list(printed_lines)):
        if line.strip():
            return line.strip()
    if "answer" in namespace:
        return interp.render_value(namespace["answer"])
    return None


class MiniInterpreterBackend:
    """Hermetic in-process backend over the straight-line interpreter."""

    def run(self, program: str, limits: ExecutionLimits) -> ExecutionResult:
        start = time.monotonic()
        try:
            namespace, printed = interp.run_program(program, limits.wall_timeout, limits.output_cap)
        except SyntaxError as exc:
            return _failure(ExecStatus.RUNTIME_ERROR, f"syntax error: {exc}", time.monotonic() - start)
        except interp.ForbiddenConstruct as exc:
            return _failure(ExecStatus.FORBIDDEN_OPERATION, str(exc), time.monotonic() - start)
        except interp.BudgetExceeded as exc:
            return _failure(ExecStatus.TIMEOUT, str(exc), time.monotonic() - start)
        except interp.OutputOverflow as exc:
            return _failure(ExecStatus.OUTPUT_OVERFLOW, str(exc), time.monotonic() - start)
        except interp.EvaluationError as exc:
            return _failure(ExecStatus.RUNTIME_ERROR, str(exc), time.monotonic() - start)
        elapsed = time.monotonic() - start
        answer = extract_channel_answer(namespace, printed)
        if answer is None:
            return _failure(ExecStatus.RUNTIME_ERROR, "no answer produced", elapsed)
        return ExecutionResult(status=ExecStatus.OK, answer=answer, stderr_excerpt="", elapsed=elapsed)


class SubprocessRunnerBackend:
    """Adapter speaking single-line JSON requests/responses to a runner process.

    Request:  ``{"id", "program", "timeout_s", "mem_bytes"}``
    Response: ``{"id", "status", "answer", "stderr", "elapsed_s"}``

    The runner executes one request at a time; a fresh process is launched
    lazily and reused across requests until :meth:`close`.
    """

    def __init__(self, cmd: Sequence[str]) -> None:
        self.cmd = list(cmd)
        self._proc: subprocess.Popen[str] | None = None
        self._next_id = 0

    def _ensure_proc(self) -> subprocess.Popen[str]:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        return self._proc

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin is not None:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
            self._proc.wait(timeout=10)
            self._proc = None

    def __enter__(self) -> "SubprocessRunnerBackend":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def run(self, program: str, limits: ExecutionLimits) -> ExecutionResult:
        start = time.monotonic()
        self._next_id += 1
        request = {
            "id": self._next_id,
            "program": program,
            "timeout_s": limits.wall_timeout,
            "mem_bytes": limits.memory_cap,
        }
        try:
            proc = self._ensure_proc()
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (OSError, ValueError) as exc:
            return _failure(ExecStatus.RUNTIME_ERROR, f"runner transport error: {exc}",
                            time.monotonic() - start)
        if not line:
            return _failure(ExecStatus.RUNTIME_ERROR, "runner closed its output stream",
                            time.monotonic() - start)
        try:
            payload = json.loads(line)
            status = ExecStatus(payload["status"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            return _failure(ExecStatus.RUNTIME_ERROR, f"malformed runner response: {exc}",
                            time.monotonic() - start)
        if payload.get("id") != request["id"]:
            return _failure(ExecStatus.RUNTIME_ERROR, "runner response id mismatch",
                            time.monotonic() - start)
        answer = payload.get("answer")
        if status is not ExecStatus.OK:
            answer = None
        elif answer is None:
            return _failure(ExecStatus.RUNTIME_ERROR, "runner reported ok without an answer",
                            time.monotonic() - start)
        return ExecutionResult(
            status=status,
            answer=answer,
            stderr_excerpt=str(payload.get("stderr", ""))[:500],
            elapsed=float(payload.get("elapsed_s", time.monotonic() - start)),
        )


def execute(program: str, limits: ExecutionLimits, backend: ExecutorBackend) -> ExecutionResult:
    """Run one program; every failure mode comes back as a result status."""
    start = time.monotonic()
    if not program.strip():
        return _failure(ExecStatus.RUNTIME_ERROR, "empty program", 0.0)
    try:
        return backend.run(program, limits)
    except Exception as exc:  # backend bugs must not leak past this boundary
        return _failure(ExecStatus.RUNTIME_ERROR, f"backend failure: {exc}", time.monotonic() - start)


# --- answer normalization ---------------------------------------------------

class AnswerKind(Enum):
    NUMBER = "number"
    BOOLEAN = "boolean"
    CHOICE = "choice-label"
    STRING = "string"


class UnparseableAnswer(ValueError):
    def __init__(self, kind: AnswerKind, raw: str) -> None:
        super().__init__(f"cannot coerce {raw!r} to {kind.value}")
        self.kind = kind
        self.raw = raw


@dataclass(frozen=True)
class CanonicalAnswer:
    kind: AnswerKind
    value: float | bool | str

    def render(self) -> str:
        if self.kind is AnswerKind.NUMBER:
            number = float(self.value)
            if number.is_integer() and abs(number) < 1e16:
                return str(int(number))
            return repr(number)
        if self.kind is AnswerKind.BOOLEAN:
            return "true" if self.value else "false"
        return str(self.value)


_TRUE_TOKENS = {"yes", "true", "y"}
_FALSE_TOKENS = {"no", "false", "n"}
_GROUPED_COMMA_RE = re.compile(r"(?<=\d),(?=\d)")
_CHOICE_RE = re.compile(r"^[\(\[\{]?([A-Za-z][A-Za-z0-9]*)[\)\]\}]?[.:]?$")


def _parse_number(text: str) -> float | None:
    cleaned = _GROUPED_COMMA_RE.sub("", text.strip())
    cleaned = cleaned.lstrip("$").rstrip(".")
    if not cleaned:
        return None
    try:
        value = float(cleaned)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value


def _parse_boolean(text: str) -> bool | None:
    token = text.strip().casefold().rstrip(".!")
    if token in _TRUE_TOKENS:
        return True
    if token in _FALSE_TOKENS:
        return False
    return None


def _parse_choice(text: str) -> str | None:
    m = _CHOICE_RE.match(text.strip())
    if m is None:
        return None
    return m.group(1).upper()


def normalize_answer(raw: str, expected_kind: AnswerKind | None = None) -> CanonicalAnswer:
    """Fold a raw answer string into comparable canonical form.

    Idempotent: re-normalizing a rendered canonical answer (with the same
    ``expected_kind``) gives the same value back.  Raises
    :class:`UnparseableAnswer` when ``expected_kind`` is given and the text
    cannot be coerced to it.
    """
    text = raw.strip()
    if expected_kind is AnswerKind.NUMBER:
        number = _parse_number(text)
        if number is None:
            raise UnparseableAnswer(expected_kind, raw)
        return CanonicalAnswer(AnswerKind.NUMBER, number)
    if expected_kind is AnswerKind.BOOLEAN:
        flag = _parse_boolean(text)
        if flag is None:
            raise UnparseableAnswer(expected_kind, raw)
        return CanonicalAnswer(AnswerKind.BOOLEAN, flag)
    if expected_kind is AnswerKind.CHOICE:
        label = _parse_choice(text)
        if label is None:
            raise UnparseableAnswer(expected_kind, raw)
        return CanonicalAnswer(AnswerKind.CHOICE, label)
    if expected_kind is AnswerKind.STRING:
        return CanonicalAnswer(AnswerKind.STRING, " ".join(text.split()).casefold())

    flag = _parse_boolean(text)
    if flag is not None:
        return CanonicalAnswer(AnswerKind.BOOLEAN, flag)
    number = _parse_number(text)
    if number is not None:
        return CanonicalAnswer(AnswerKind.NUMBER, number)
    if len(text) <= 4:
        label = _parse_choice(text)
        if label is not None and len(label) == 1:
            return CanonicalAnswer(AnswerKind.CHOICE, label)
    return CanonicalAnswer(AnswerKind.STRING, " ".join(text.split()).casefold())


def try_normalize_answer(raw: str, expected_kind: AnswerKind | None = None) -> CanonicalAnswer | None:
    try:
        return normalize_answer(raw, expected_kind)
    except UnparseableAnswer:
        return None


def answers_match(a: CanonicalAnswer, b: CanonicalAnswer, tol: float = 1e-6) -> bool:
    """Symmetric equality; numbers use relative tolerance with an absolute floor."""
    if a.kind is not b.kind:
        return False
    if a.kind is AnswerKind.NUMBER:
        return math.isclose(float(a.value), float(b.value), rel_tol=tol, abs_tol=1e-9)
    return a.value == b.value
