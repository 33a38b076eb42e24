"""Prompt templates and completion parsing.

Templates ship as versioned text assets under ``bireason/prompts/``.
Rendering substitutes only a template's declared placeholders, so literal
braces elsewhere in the asset survive untouched.  The parsing half turns
raw completions back into structured pieces: fenced programs, tagged
candidate triples, judge scores, and final answer lines.
"""

from __future__ import annotations

import re
from importlib import resources

import numpy as np

TEMPLATES: dict[str, frozenset[str]] = {
    "ogf_v1": frozenset({"question", "instruction"}),
    "ogf_feedback_v1": frozenset({"question", "instruction", "feedback"}),
    "lg_v1": frozenset({"model_document"}),
    "lg_feedback_v1": frozenset({"model_document", "feedback"}),
    "judge_v1": frozenset({"question", "think", "model_document", "code"}),
    "teacher_v1": frozenset({"question", "instruction"}),
    "cot_v1": frozenset({"question", "exemplars"}),
    "pal_v1": frozenset({"question", "exemplars"}),
}

SYSTEM_MESSAGE = "You are a careful formal reasoning assistant."


def chat_messages(user_content: str) -> list[dict[str, str]]:
    return [{"role": "system", "content": SYSTEM_MESSAGE},
            {"role": "user", "content": user_content}]


def load_template(name: str) -> str:
    if name not in TEMPLATES:
        raise KeyError(f"unknown template {name!r}")
    return resources.files("bireason").joinpath(f"prompts/{name}.txt").read_text(encoding="utf-8")


def render_template(name: str, **values: str) -> str:
    required = TEMPLATES[name]
    provided = set(values)
    if provided != required:
        missing = sorted(required - provided)
        extra = sorted(provided - required)
        raise ValueError(f"template {name!r} placeholders: missing {missing}, unexpected {extra}")
    text = load_template(name)
    for key in sorted(values):  # deterministic substitution order
        text = text.replace("{" + key + "}", values[key])
    return text


# --- few-shot exemplars -----------------------------------------------------

COT_EXEMPLARS: tuple[tuple[str, str, str], ...] = (
    ("A shelf holds 3 boxes with 12 pens each. How many pens are there?",
     "Each box holds 12 pens and there are 3 boxes, so the total is 3 * 12 = 36.",
     "36"),
    ("Mia had 45 marbles and gave away 17. How many does she keep?",
     "Giving away 17 of 45 leaves 45 - 17 = 28.",
     "28"),
    ("A train covers 60 km per hour for 4 hours. How far does it travel?",
     "Distance is speed times time: 60 * 4 = 240 km.",
     "240"),
)

PAL_EXEMPLARS: tuple[tuple[str, str], ...] = (
    ("A shelf holds 3 boxes with 12 pens each. How many pens are there?",
     "boxes = 3\npens_per_box = 12\nprint(boxes * pens_per_box)"),
    ("Mia had 45 marbles and gave away 17. How many does she keep?",
     "start = 45\ngiven = 17\nprint(start - given)"),
    ("A train covers 60 km per hour for 4 hours. How far does it travel?",
     "speed = 60\nhours = 4\nprint(speed * hours)"),
)


def format_cot_exemplars(k: int, rng: np.random.Generator) -> str:
    if k == 0:
        return ""
    picks = rng.permutation(len(COT_EXEMPLARS))[:k]
    blocks = []
    for i in picks:
        q, reasoning, a = COT_EXEMPLARS[i]
        blocks.append(f"Problem:\n{q}\n{reasoning}\nAnswer: {a}\n")
    return "\n".join(blocks) + "\n"


def format_pal_exemplars(k: int, rng: np.random.Generator) -> str:
    if k == 0:
        return ""
    picks = rng.permutation(len(PAL_EXEMPLARS))[:k]
    blocks = []
    for i in picks:
        q, code = PAL_EXEMPLARS[i]
        blocks.append(f"Problem:\n{q}\n```python\n{code}\n```\n")
    return "\n".join(blocks) + "\n"


# --- completion parsing -----------------------------------------------------

_FENCE_RE = re.compile(r"```[ \t]*[A-Za-z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)


def extract_code_blocks(text: str) -> list[str]:
    return [m.group(1).strip("\n") for m in _FENCE_RE.finditer(text)]


def split_plan_and_program(completion: str) -> tuple[str, str] | None:
    """Last fenced block is the program; everything else is the plan.

    Returns None when there is no fenced block or it is empty.
    """
    matches = list(_FENCE_RE.finditer(completion))
    if not matches:
        return None
    last = matches[-1]
    program = last.group(1).strip("\n").strip()
    if not program:
        return None
    plan = (completion[:last.start()] + completion[last.end():]).strip()
    return plan, program


_TAG_NAMES = ("think", "model", "code")


def _tag_pattern(name: str, closing: bool) -> str:
    slash = "/" if closing else ""
    return rf"(?:⟨{slash}{name}⟩|<{slash}{name}>)"


def split_tagged_triple(completion: str) -> tuple[str, str, str]:
    """Split a teacher completion on the think/model/code tag grammar.

    Canonical tags use angle brackets U+27E8/U+27E9; ASCII lookalikes are
    accepted.  A section missing its closing tag runs to the next opening
    tag or the end of the text.  Missing sections come back empty.
    """
    sections: dict[str, str] = {}
    any_open = "|".join(_tag_pattern(n, closing=False) for n in _TAG_NAMES)
    for name in _TAG_NAMES:
        open_m = re.search(_tag_pattern(name, closing=False), completion)
        if open_m is None:
            sections[name] = ""
            continue
        rest = completion[open_m.end():]
        close_m = re.search(_tag_pattern(name, closing=True), rest)
        if close_m is not None:
            body = rest[:close_m.start()]
        else:
            next_m = re.search(any_open, rest)
            body = rest[:next_m.start()] if next_m else rest
        sections[name] = body.strip()
    return sections["think"], sections["model"], sections["code"]


_SCORE_RE = re.compile(r"<score>\s*(\d+)\s*</score>")


def parse_judge_score(completion: str) -> int | None:
    m = _SCORE_RE.search(completion)
    if m is None:
        return None
    score = int(m.group(1))
    if not 1 <= score <= 10:
        return None
    return score


_ANSWER_LINE_RE = re.compile(r"Answer:\s*(.+?)\s*$", re.IGNORECASE)


def parse_final_answer_line(completion: str) -> str | None:
    """Final `Answer: value` line of a chain-of-thought completion."""
    answer = None
    for line in completion.splitlines():
        m = _ANSWER_LINE_RE.match(line.strip())
        if m:
            answer = m.group(1)
    return answer
