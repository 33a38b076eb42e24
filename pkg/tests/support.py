"""Shared test fixtures: independent oracles, random generators, scripted
completions.  Oracle routines deliberately avoid the library's own code
paths (plain Python arithmetic, no numpy vector tricks) so they stay
independent checks.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping, Sequence

import numpy as np

from bireason.bilevel import SampledGroup, SoftmaxPolicy
from bireason.schema import (
    ConstraintExpr,
    FormalModel,
    KNOWN_MODEL_TYPES,
    OBJECTIVE_KINDS,
    Objective,
    VariableDecl,
    make_constraint,
)


# --- advantage oracle ---------------------------------------------------------

def oracle_advantages(rewards: Sequence[float], std_floor: float = 1e-8) -> list[float]:
    """Group standardization recomputed with plain Python arithmetic."""
    n = len(rewards)
    assert n > 0
    if all(r == rewards[0] for r in rewards):
        return [0.0] * n
    mean = sum(rewards) / n
    variance = sum((r - mean) ** 2 for r in rewards) / n  # population
    std = math.sqrt(variance)
    denom = std if std > std_floor else std_floor
    return [(r - mean) / denom for r in rewards]


# --- finite-difference gradient oracle -----------------------------------------

def fd_gradient(objective: Callable[[SoftmaxPolicy], float], policy: SoftmaxPolicy,
                h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of the objective w.r.t. every logit."""
    grad: dict[str, np.ndarray] = {}
    for ctx, row in policy.logits.items():
        out = np.zeros(len(row))
        for k in range(len(row)):
            bumped = policy.copy()
            bumped.logits[ctx] = row.copy()
            bumped.logits[ctx][k] = row[k] + h
            plus = objective(bumped)
            bumped.logits[ctx][k] = row[k] - h
            minus = objective(bumped)
            out[k] = (plus - minus) / (2 * h)
        grad[ctx] = out
    return grad


def flatten_gradient(grad: Mapping[str, np.ndarray], contexts: Sequence[str]) -> np.ndarray:
    return np.concatenate([np.asarray(grad.get(ctx, np.zeros(0)), dtype=np.float64)
                           for ctx in contexts])


def gradient_relative_error(analytic: Mapping[str, np.ndarray],
                            numeric: Mapping[str, np.ndarray]) -> float:
    contexts = sorted(set(analytic) | set(numeric))
    sized = {}
    for ctx in contexts:
        a = analytic.get(ctx)
        n = numeric.get(ctx)
        size = len(a) if a is not None else len(n)
        sized[ctx] = (np.asarray(a) if a is not None else np.zeros(size),
                      np.asarray(n) if n is not None else np.zeros(size))
    a_flat = np.concatenate([sized[ctx][0] for ctx in contexts])
    n_flat = np.concatenate([sized[ctx][1] for ctx in contexts])
    denom = max(float(np.linalg.norm(n_flat)), 1e-12)
    return float(np.linalg.norm(a_flat - n_flat)) / denom


def random_surrogate_config(rng: np.random.Generator, kink_margin: float = 1e-3):
    """Random (policy, old policy, groups, epsilon) away from clip kinks.

    Configurations whose sampled ratios land within kink_margin of either
    clip boundary are regenerated: the surrogate is nondifferentiable there,
    so finite differences would disagree by construction.
    """
    while True:
        n_contexts = int(rng.integers(1, 5))
        contexts = {f"c{i}": tuple(f"k{j}" for j in range(int(rng.integers(2, 6))))
                    for i in range(n_contexts)}
        policy = SoftmaxPolicy(contexts, {ctx: rng.normal(0, 1, len(cands))
                                          for ctx, cands in contexts.items()})
        old = SoftmaxPolicy(contexts, {ctx: rng.normal(0, 1, len(cands))
                                       for ctx, cands in contexts.items()})
        epsilon = float(rng.uniform(0.05, 0.4))
        groups = []
        ok = True
        for _ in range(int(rng.integers(1, 5))):
            ctx = f"c{int(rng.integers(n_contexts))}"
            size = int(rng.integers(2, 7))
            indices = tuple(int(rng.integers(len(contexts[ctx]))) for _ in range(size))
            advantages = tuple(float(a) for a in rng.normal(0, 1, size))
            p_new = policy.probs(ctx)
            p_old = old.probs(ctx)
            for idx in indices:
                rho = float(p_new[idx] / p_old[idx])
                if abs(rho - (1 + epsilon)) < kink_margin or abs(rho - (1 - epsilon)) < kink_margin:
                    ok = False
            groups.append(SampledGroup(context=ctx, indices=indices, advantages=advantages))
        if ok:
            return policy, old, groups, epsilon


# --- random formal models -------------------------------------------------------

_PROSE_WORDS = (
    "the", "puzzle", "asks", "for", "a", "total", "over", "two", "digits",
    "bounded", "grid", "steps", "holds", "count", "choices", "final", "state",
    "before", "after", "which", "value", "satisfies", "every", "rule",
)

_DOMAIN_POOL = (
    "integer", "integer 0..9", "boolean", "real", "one of red, green, blue",
    "nonnegative integer", "0..100", "set of days", "minutes",
)

_NOTE_POOL = (
    "first addend", "derived quantity", "observed count", "free choice",
    "from the statement", "per unit",
)


def _random_identifier(rng: np.random.Generator, taken: set[str]) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    while True:
        length = int(rng.integers(1, 8))
        head = letters[int(rng.integers(len(letters)))]
        tail = "".join(
            "abcdefghijklmnopqrstuvwxyz0123456789_"[int(rng.integers(37))]
            for _ in range(length - 1))
        name = head + tail
        if name not in taken:
            taken.add(name)
            return name


def _random_prose(rng: np.random.Generator, max_words: int = 8) -> str:
    n = int(rng.integers(2, max_words + 1))
    return " ".join(_PROSE_WORDS[int(rng.integers(len(_PROSE_WORDS)))] for _ in range(n))


def _random_constraint_text(rng: np.random.Generator, names: Sequence[str]) -> str:
    ops = ("==", "<=", ">=", "<", ">", "!=")
    op = ops[int(rng.integers(len(ops)))]
    if names and rng.random() < 0.9:
        left = names[int(rng.integers(len(names)))]
        if len(names) > 1 and rng.random() < 0.5:
            other = names[int(rng.integers(len(names)))]
            left = f"{left} + {other}"
        if rng.random() < 0.3:
            left = f"max({left}, 1)"
    else:
        left = str(int(rng.integers(1, 100)))
    right = str(int(rng.integers(0, 100)))
    text = f"{left} {op} {right}"
    if rng.random() < 0.2:
        text = f"not {text}" if rng.random() < 0.5 else f"{text} and {right} >= 0"
    return text


def random_formal_model(rng: np.random.Generator) -> FormalModel:
    """A random model that satisfies every validity invariant."""
    n_overview_lines = int(rng.integers(0, 4))
    overview_lines = [_random_prose(rng) for _ in range(n_overview_lines)]
    if len(overview_lines) >= 3 and rng.random() < 0.3:
        overview_lines[1] = ""  # interior blank line is legal
    overview = "\n".join(overview_lines)

    if rng.random() < 0.85:
        model_type = KNOWN_MODEL_TYPES[int(rng.integers(len(KNOWN_MODEL_TYPES)))]
    else:
        model_type = f"other({_random_prose(rng, 3)})"

    taken: set[str] = set()
    variables = []
    for _ in range(int(rng.integers(0, 7))):
        name = _random_identifier(rng, taken)
        domain = "" if rng.random() < 0.1 else _DOMAIN_POOL[int(rng.integers(len(_DOMAIN_POOL)))]
        note = _NOTE_POOL[int(rng.integers(len(_NOTE_POOL)))] if rng.random() < 0.4 else None
        variables.append(VariableDecl(name=name, domain=domain, note=note))
    names = [v.name for v in variables]

    constraints = []
    for i in range(int(rng.integers(0, 6))):
        constraints.append(make_constraint(i + 1, _random_constraint_text(rng, names)))

    objectives = []
    for _ in range(int(rng.integers(1, 4))):
        kind = OBJECTIVE_KINDS[int(rng.integers(len(OBJECTIVE_KINDS)))]
        objectives.append(Objective(kind=kind, text=_random_prose(rng)))

    return FormalModel(overview=overview, model_type=model_type,
                       variables=tuple(variables), constraints=tuple(constraints),
                       objectives=tuple(objectives))


# --- scripted completions --------------------------------------------------------

VALID_MODEL_DOC = """## OVERVIEW
Two integers are combined into a product.

## TYPE
arithmetic

## VARIABLES
x: integer | first factor
y: integer
product: integer

## CONSTRAINTS
product == x + y

## OBJECTIVES
compute: the product of the two factors
"""

MALFORMED_MODEL_DOC = """## OVERVIEW
Missing almost everything.

## TYPE
arithmetic
"""


def lg_completion(program: str = "print(6 * 7)",
                  plan: str = "Multiply the two factors.") -> str:
    return f"{plan}\n\n```python\n{program}\n```\n"


def teacher_completion(think: str, model_doc: str, code: str) -> str:
    return (f"⟨think⟩\n{think}\n⟨/think⟩\n"
            f"⟨model⟩\n{model_doc}\n⟨/model⟩\n"
            f"⟨code⟩\n{code}\n⟨/code⟩\n")


def judge_completion(score: int) -> str:
    return f"The reasoning is acceptable. <score>{score}</score>"
