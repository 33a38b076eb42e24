"""Structured model documents: parse, validate, and canonically serialize.

The upper formalization stage emits a five-part model (overview, model type,
variables, constraints, objectives) as a line-oriented tagged document; the
lower generation stage consumes the parsed form.  The wire format is::

    ## OVERVIEW
    Sum puzzle over two digits.
    ## TYPE
    arithmetic
    ## VARIABLES
    x: integer 0..9
    y: integer 0..9 | second digit
    ## CONSTRAINTS
    x + y == 10
    ## OBJECTIVES
    compute: calculate x

All five section headers are mandatory and canonical order is fixed, so
serialization is deterministic and ``parse(serialize(m)) == m`` for every
valid model.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

SECTION_ORDER = ("OVERVIEW", "TYPE", "VARIABLES", "CONSTRAINTS", "OBJECTIVES")

KNOWN_MODEL_TYPES = (
    "probabilistic",
    "SAT",
    "CSP",
    "arithmetic",
    "logical-inference",
    "temporal",
    "spatial",
)

OBJECTIVE_KINDS = ("compute", "decide", "optimize")

# Function names and connective keywords that may appear in constraint text
# without being declared variables.
DEFAULT_ALLOWLIST = frozenset(
    {
        "abs", "min", "max", "sum",
        "and", "or", "not", "in", "if", "else", "mod",
        "true", "false", "True", "False",
    }
)

IDENTIFIER_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")
# Tokens matching the identifier grammar; the lookbehind keeps the exponent
# of literals like 1e9 from matching.
TOKEN_RE = re.compile(r"(?<![A-Za-z0-9_])[A-Za-z][A-Za-z0-9_]*")
_HEADER_RE = re.compile(r"^## (\S+)\s*$")
_OTHER_TYPE_RE = re.compile(r"^other\((.*)\)$")

NOTE_SEPARATOR = " | "


class ViolationCode(Enum):
    MISSING_SECTION = "missing_section"
    DUPLICATE_VARIABLE = "duplicate_variable"
    UNKNOWN_VARIABLE_REF = "unknown_variable_ref"
    EMPTY_OBJECTIVE = "empty_objective"
    MALFORMED_DOCUMENT = "malformed_document"


@dataclass(frozen=True)
class SchemaViolation:
    """One defect found while parsing a document or validating a model."""

    code: ViolationCode
    section: str | None
    line: int | None
    message: str

    def __str__(self) -> str:
        where = self.section or "document"
        if self.line is not None:
            where = f"{where}:{self.line}"
        return f"[{self.code.value}] {where}: {self.message}"


@dataclass(frozen=True)
class VariableDecl:
    name: str
    domain: str
    note: str | None = None


@dataclass(frozen=True)
class ConstraintExpr:
    id: int
    text: str
    referenced_vars: frozenset[str]


@dataclass(frozen=True)
class Objective:
    kind: str
    text: str


def extract_identifiers(text: str, allowlist: frozenset[str] = DEFAULT_ALLOWLIST) -> frozenset[str]:
    """Identifier-grammar tokens in ``text`` minus the function allowlist."""
    return frozenset(t for t in TOKEN_RE.findall(text) if t not in allowlist)


def normalize_model_type(raw: str) -> str:
    """Map a raw type label onto the open enumeration.

    Known labels are matched case-insensitively and canonicalized; anything
    else is wrapped as ``other(<label>)`` rather than rejected.
    """
    label = raw.strip()
    for known in KNOWN_MODEL_TYPES:
        if label.lower() == known.lower():
            return known
    m = _OTHER_TYPE_RE.match(label)
    if m:
        return f"other({m.group(1)})"
    return f"other({label})"


def make_constraint(ordinal: int, text: str, allowlist: frozenset[str] = DEFAULT_ALLOWLIST) -> ConstraintExpr:
    return ConstraintExpr(id=ordinal, text=text, referenced_vars=extract_identifiers(text, allowlist))


@dataclass(frozen=True)
class FormalModel:
    """The five-part structured model the formalization stage produces.

    ``overview`` is the free-text task summary, ``model_type`` the category
    label, ``variables`` the declared decision/state variables, and
    ``constraints``/``objectives`` the symbolic relations and goals over
    them.  Objective text is free prose ("calculate x"), so variable
    mentions inside it are not resolved; constraint text is checked strictly
    against the declared variables.
    """

    overview: str
    model_type: str
    variables: tuple[VariableDecl, ...]
    constraints: tuple[ConstraintExpr, ...]
    objectives: tuple[Objective, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "model_type", normalize_model_type(self.model_type))
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "objectives", tuple(self.objectives))

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)


def _violation(code: ViolationCode, section: str | None, line: int | None, message: str) -> SchemaViolation:
    return SchemaViolation(code=code, section=section, line=line, message=message)


def _check_free_text(value: str, section: str, line: int | None, what: str,
                     out: list[SchemaViolation], forbid_separator: bool = False) -> None:
    if "\n" in value or "\r" in value:
        out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, section, line,
                              f"{what} must not contain line breaks"))
    if value != value.strip():
        out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, section, line,
                              f"{what} must not have surrounding whitespace"))
    if forbid_separator and NOTE_SEPARATOR in value:
        out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, section, line,
                              f"{what} must not contain the note separator {NOTE_SEPARATOR!r}"))


def validate(model: FormalModel, allowlist: frozenset[str] = DEFAULT_ALLOWLIST) -> list[SchemaViolation]:
    """Check every model invariant; the list is empty iff all hold.

    Validation is complete rather than fail-fast: every detectable defect is
    reported, including canonical-form defects (embedded newlines, unstripped
    fields) that would break the serialize/parse round trip.
    """
    out: list[SchemaViolation] = []

    overview_lines = model.overview.split("\n") if model.overview else []
    for i, ov_line in enumerate(overview_lines, start=1):
        if _HEADER_RE.match(ov_line):
            out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "OVERVIEW", i,
                                  "overview line looks like a section header"))
    if overview_lines and (overview_lines[0].strip() == "" or overview_lines[-1].strip() == ""):
        out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "OVERVIEW", None,
                              "overview must not start or end with a blank line"))

    seen: set[str] = set()
    for i, var in enumerate(model.variables, start=1):
        if not var.name or not IDENTIFIER_RE.match(var.name):
            out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "VARIABLES", i,
                                  f"variable name {var.name!r} does not match the identifier grammar"))
        if var.name in seen:
            out.append(_violation(ViolationCode.DUPLICATE_VARIABLE, "VARIABLES", i,
                                  f"variable {var.name!r} declared more than once"))
        seen.add(var.name)
        _check_free_text(var.domain, "VARIABLES", i, "domain", out, forbid_separator=True)
        if var.note is not None:
            if var.note == "":
                out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "VARIABLES", i,
                                      "note must be absent rather than empty"))
            else:
                _check_free_text(var.note, "VARIABLES", i, "note", out, forbid_separator=True)

    declared = {v.name for v in model.variables}
    for i, con in enumerate(model.constraints, start=1):
        if not con.text.strip():
            out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "CONSTRAINTS", i,
                                  "constraint text is empty"))
        _check_free_text(con.text, "CONSTRAINTS", i, "constraint text", out)
        expected = extract_identifiers(con.text, allowlist)
        if con.referenced_vars != expected:
            out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "CONSTRAINTS", i,
                                  "referenced_vars disagrees with identifiers extracted from text"))
        for name in sorted(expected - declared):
            out.append(_violation(ViolationCode.UNKNOWN_VARIABLE_REF, "CONSTRAINTS", i,
                                  f"constraint references undeclared variable {name!r}"))

    if not model.objectives:
        out.append(_violation(ViolationCode.EMPTY_OBJECTIVE, "OBJECTIVES", None,
                              "at least one objective is required"))
    for i, obj in enumerate(model.objectives, start=1):
        if obj.kind not in OBJECTIVE_KINDS:
            out.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "OBJECTIVES", i,
                                  f"objective kind {obj.kind!r} is not one of {OBJECTIVE_KINDS}"))
        if not obj.text.strip():
            out.append(_violation(ViolationCode.EMPTY_OBJECTIVE, "OBJECTIVES", i,
                                  "objective text is empty"))
        else:
            _check_free_text(obj.text, "OBJECTIVES", i, "objective text", out)

    return out


def serialize(model: FormalModel) -> str:
    """Render the canonical tagged-text document for a valid model.

    Sections are emitted in fixed order with deterministic whitespace, so two
    serializations of equal models are byte-identical.
    """
    lines: list[str] = ["## OVERVIEW"]
    if model.overview:
        lines.extend(model.overview.split("\n"))
    lines.append("## TYPE")
    lines.append(model.model_type)
    lines.append("## VARIABLES")
    for var in model.variables:
        decl = f"{var.name}: {var.domain}" if var.domain else f"{var.name}:"
        if var.note is not None:
            decl += f"{NOTE_SEPARATOR}{var.note}"
        lines.append(decl)
    lines.append("## CONSTRAINTS")
    for con in model.constraints:
        lines.append(con.text)
    lines.append("## OBJECTIVES")
    for obj in model.objectives:
        lines.append(f"{obj.kind}: {obj.text}")
    return "\n".join(lines) + "\n"


def _split_sections(document: str) -> tuple[dict[str, list[tuple[int, str]]], list[SchemaViolation]]:
    sections: dict[str, list[tuple[int, str]]] = {}
    violations: list[SchemaViolation] = []
    current: str | None = None
    for lineno, line in enumerate(document.split("\n"), start=1):
        header = _HEADER_RE.match(line)
        if header:
            name = header.group(1)
            if name not in SECTION_ORDER:
                violations.append(_violation(ViolationCode.MALFORMED_DOCUMENT, None, lineno,
                                             f"unknown section header {name!r}"))
                current = None
                continue
            if name in sections:
                violations.append(_violation(ViolationCode.MALFORMED_DOCUMENT, name, lineno,
                                             f"section {name} appears more than once"))
                current = None
                continue
            sections[name] = []
            current = name
            continue
        if current is None:
            if line.strip():
                violations.append(_violation(ViolationCode.MALFORMED_DOCUMENT, None, lineno,
                                             "content outside any section"))
            continue
        sections[current].append((lineno, line))
    return sections, violations


def _trim_blank_edges(entries: list[tuple[int, str]]) -> list[tuple[int, str]]:
    start, end = 0, len(entries)
    while start < end and not entries[start][1].strip():
        start += 1
    while end > start and not entries[end - 1][1].strip():
        end -= 1
    return entries[start:end]


def parse_model(
    document: str, allowlist: frozenset[str] = DEFAULT_ALLOWLIST
) -> FormalModel | list[SchemaViolation]:
    """Parse a tagged document into a model, or report every defect found.

    Returns a :class:`FormalModel` satisfying all invariants on success and a
    nonempty list of :class:`SchemaViolation` otherwise; it never raises on
    bad input.
    """
    sections, violations = _split_sections(document)

    for name in SECTION_ORDER:
        if name not in sections:
            violations.append(_violation(ViolationCode.MISSING_SECTION, name, None,
                                         f"section {name} is missing"))
    if violations and any(v.code is ViolationCode.MISSING_SECTION for v in violations):
        return violations

    overview_entries = _trim_blank_edges(sections["OVERVIEW"])
    overview = "\n".join(text for _, text in overview_entries)

    type_entries = [(n, t.strip()) for n, t in sections["TYPE"] if t.strip()]
    if len(type_entries) != 1:
        violations.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "TYPE",
                                     type_entries[1][0] if len(type_entries) > 1 else None,
                                     "TYPE must contain exactly one label"))
        model_type = "other(?)"
    else:
        model_type = normalize_model_type(type_entries[0][1])

    variables: list[VariableDecl] = []
    seen_names: set[str] = set()
    for lineno, raw in sections["VARIABLES"]:
        text = raw.strip()
        if not text:
            continue
        name, sep, rest = text.partition(":")
        name = name.strip()
        if not sep:
            violations.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "VARIABLES", lineno,
                                         f"expected 'name: domain', got {text!r}"))
            continue
        if not IDENTIFIER_RE.match(name):
            violations.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "VARIABLES", lineno,
                                         f"variable name {name!r} does not match the identifier grammar"))
            continue
        if name in seen_names:
            violations.append(_violation(ViolationCode.DUPLICATE_VARIABLE, "VARIABLES", lineno,
                                         f"variable {name!r} declared more than once"))
            continue
        seen_names.add(name)
        domain, note_sep, note = rest.partition(NOTE_SEPARATOR)
        variables.append(VariableDecl(
            name=name,
            domain=domain.strip(),
            note=note.strip() if note_sep else None,
        ))

    constraints: list[ConstraintExpr] = []
    for lineno, raw in sections["CONSTRAINTS"]:
        text = raw.strip()
        if not text:
            continue
        con = make_constraint(len(constraints) + 1, text, allowlist)
        for name in sorted(con.referenced_vars - seen_names):
            violations.append(_violation(ViolationCode.UNKNOWN_VARIABLE_REF, "CONSTRAINTS", lineno,
                                         f"constraint references undeclared variable {name!r}"))
        constraints.append(con)

    objectives: list[Objective] = []
    for lineno, raw in sections["OBJECTIVES"]:
        text = raw.strip()
        if not text:
            continue
        kind, sep, goal = text.partition(":")
        kind = kind.strip()
        if not sep or kind not in OBJECTIVE_KINDS:
            violations.append(_violation(ViolationCode.MALFORMED_DOCUMENT, "OBJECTIVES", lineno,
                                         f"expected '<kind>: <goal>' with kind in {OBJECTIVE_KINDS}, got {text!r}"))
            continue
        goal = goal.strip()
        if not goal:
            violations.append(_violation(ViolationCode.EMPTY_OBJECTIVE, "OBJECTIVES", lineno,
                                         "objective text is empty"))
            continue
        objectives.append(Objective(kind=kind, text=goal))
    if not objectives and not any(
        v.code in (ViolationCode.EMPTY_OBJECTIVE, ViolationCode.MALFORMED_DOCUMENT)
        and v.section == "OBJECTIVES" for v in violations
    ):
        violations.append(_violation(ViolationCode.EMPTY_OBJECTIVE, "OBJECTIVES", None,
                                     "at least one objective is required"))

    if violations:
        return violations
    return FormalModel(
        overview=overview,
        model_type=model_type,
        variables=tuple(variables),
        constraints=tuple(constraints),
        objectives=tuple(objectives),
    )


def model_to_dict(model: FormalModel) -> dict:
    """Structured-object form mirroring the document fields (for JSONL corpora)."""
    return {
        "overview": model.overview,
        "model_type": model.model_type,
        "variables": [
            {"name": v.name, "domain": v.domain, "note": v.note} for v in model.variables
        ],
        "constraints": [
            {"id": c.id, "text": c.text, "referenced_vars": sorted(c.referenced_vars)}
            for c in model.constraints
        ],
        "objectives": [{"kind": o.kind, "text": o.text} for o in model.objectives],
    }


def model_from_dict(data: Mapping) -> FormalModel:
    return FormalModel(
        overview=data["overview"],
        model_type=data["model_type"],
        variables=tuple(
            VariableDecl(name=v["name"], domain=v["domain"], note=v.get("note"))
            for v in data["variables"]
        ),
        constraints=tuple(
            ConstraintExpr(id=c["id"], text=c["text"], referenced_vars=frozenset(c["referenced_vars"]))
            for c in data["constraints"]
        ),
        objectives=tuple(Objective(kind=o["kind"], text=o["text"]) for o in data["objectives"]),
    )


def model_to_json(model: FormalModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, ensure_ascii=False)


def model_from_json(raw: str) -> FormalModel:
    return model_from_dict(json.loads(raw))
