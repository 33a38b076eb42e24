"""Bilevel reasoning stack: questions -> formal models -> programs -> answers.

The package splits natural-language reasoning into a formalization stage
that emits a structured model document and a logic-generation stage that
turns the model into a small executable program.  Around that core sit a
sandboxed executor, rule-based rewards with group-normalized advantages,
a dataset construction pipeline, and an alternating bilevel trainer
exercised on toy tabular policies.
"""

from .executor import (
    AnswerKind,
    CanonicalAnswer,
    ExecStatus,
    ExecutionLimits,
    ExecutionResult,
    MiniInterpreterBackend,
    SubprocessRunnerBackend,
    answers_match,
    execute,
    normalize_answer,
    try_normalize_answer,
)
from .schema import (
    ConstraintExpr,
    FormalModel,
    Objective,
    SchemaViolation,
    VariableDecl,
    ViolationCode,
    model_from_dict,
    model_from_json,
    model_to_dict,
    model_to_json,
    parse_model,
    serialize,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerKind",
    "CanonicalAnswer",
    "ConstraintExpr",
    "ExecStatus",
    "ExecutionLimits",
    "ExecutionResult",
    "FormalModel",
    "MiniInterpreterBackend",
    "Objective",
    "SchemaViolation",
    "SubprocessRunnerBackend",
    "VariableDecl",
    "ViolationCode",
    "answers_match",
    "execute",
    "model_from_dict",
    "model_from_json",
    "model_to_dict",
    "model_to_json",
    "normalize_answer",
    "parse_model",
    "serialize",
    "try_normalize_answer",
    "validate",
]
