"""Schema module: parsing, validation, canonical serialization."""

import numpy as np
import pytest

from bireason.schema import (
    DEFAULT_ALLOWLIST,
    ConstraintExpr,
    FormalModel,
    Objective,
    SchemaViolation,
    VariableDecl,
    ViolationCode,
    extract_identifiers,
    make_constraint,
    model_from_dict,
    model_from_json,
    model_to_dict,
    model_to_json,
    normalize_model_type,
    parse_model,
    serialize,
    validate,
)
from support import VALID_MODEL_DOC, random_formal_model


def codes(violations):
    return {v.code for v in violations}


class TestRoundTrip:
    def test_fixture_round_trip(self):
        model = parse_model(VALID_MODEL_DOC)
        assert isinstance(model, FormalModel)
        assert parse_model(serialize(model)) == model

    def test_random_models_round_trip(self):
        rng = np.random.Generator(np.random.Philox(1234))
        for _ in range(300):
            model = random_formal_model(rng)
            assert validate(model) == []
            again = parse_model(serialize(model))
            assert again == model

    def test_serialize_is_deterministic(self):
        rng = np.random.Generator(np.random.Philox(5))
        model = random_formal_model(rng)
        assert serialize(model) == serialize(model)
        assert serialize(model).endswith("\n")

    def test_sections_in_canonical_order(self):
        model = parse_model(VALID_MODEL_DOC)
        text = serialize(model)
        positions = [text.index(f"## {name}")
                     for name in ("OVERVIEW", "TYPE", "VARIABLES", "CONSTRAINTS", "OBJECTIVES")]
        assert positions == sorted(positions)

    def test_minimal_model_round_trips(self):
        model = FormalModel(overview="", model_type="arithmetic", variables=(),
                            constraints=(), objectives=(Objective("compute", "anything"),))
        assert validate(model) == []
        assert parse_model(serialize(model)) == model

    def test_variable_without_domain_round_trips(self):
        model = FormalModel(
            overview="one line", model_type="CSP",
            variables=(VariableDecl(name="x", domain=""),),
            constraints=(make_constraint(1, "x >= 0"),),
            objectives=(Objective("decide", "whether x fits"),))
        assert validate(model) == []
        assert parse_model(serialize(model)) == model


class TestViolationCodes:
    def test_missing_section(self):
        doc = VALID_MODEL_DOC.replace("## OBJECTIVES\n", "")
        result = parse_model(doc)
        assert isinstance(result, list)
        assert ViolationCode.MISSING_SECTION in codes(result)

    def test_every_missing_section_is_reported(self):
        result = parse_model("just some prose\n")
        assert isinstance(result, list)
        missing = [v for v in result if v.code is ViolationCode.MISSING_SECTION]
        assert {v.section for v in missing} == {"OVERVIEW", "TYPE", "VARIABLES",
                                                "CONSTRAINTS", "OBJECTIVES"}

    def test_duplicate_variable(self):
        doc = VALID_MODEL_DOC.replace("y: integer\n", "y: integer\ny: integer\n")
        result = parse_model(doc)
        assert isinstance(result, list)
        assert ViolationCode.DUPLICATE_VARIABLE in codes(result)

    def test_unknown_variable_ref(self):
        doc = VALID_MODEL_DOC.replace("product == x + y", "product == x + z9")
        result = parse_model(doc)
        assert isinstance(result, list)
        refs = [v for v in result if v.code is ViolationCode.UNKNOWN_VARIABLE_REF]
        assert len(refs) == 1
        assert "z9" in refs[0].message

    def test_empty_objective_text(self):
        doc = VALID_MODEL_DOC.replace("compute: the product of the two factors",
                                      "compute:")
        result = parse_model(doc)
        assert isinstance(result, list)
        assert ViolationCode.EMPTY_OBJECTIVE in codes(result)

    def test_no_objectives_at_all(self):
        doc = VALID_MODEL_DOC.replace("compute: the product of the two factors\n", "")
        result = parse_model(doc)
        assert isinstance(result, list)
        assert ViolationCode.EMPTY_OBJECTIVE in codes(result)

    def test_malformed_variable_line(self):
        doc = VALID_MODEL_DOC.replace("y: integer", "not a declaration")
        result = parse_model(doc)
        assert isinstance(result, list)
        assert ViolationCode.MALFORMED_DOCUMENT in codes(result)

    def test_unknown_header(self):
        doc = VALID_MODEL_DOC + "## EXTRAS\nwhatever\n"
        result = parse_model(doc)
        assert isinstance(result, list)
        assert ViolationCode.MALFORMED_DOCUMENT in codes(result)

    def test_duplicate_section(self):
        doc = VALID_MODEL_DOC + "## TYPE\nSAT\n"
        result = parse_model(doc)
        assert isinstance(result, list)
        assert ViolationCode.MALFORMED_DOCUMENT in codes(result)

    def test_content_before_first_section(self):
        result = parse_model("stray preamble\n" + VALID_MODEL_DOC)
        assert isinstance(result, list)
        assert ViolationCode.MALFORMED_DOCUMENT in codes(result)

    def test_type_with_two_labels(self):
        doc = VALID_MODEL_DOC.replace("## TYPE\narithmetic\n", "## TYPE\narithmetic\nSAT\n")
        result = parse_model(doc)
        assert isinstance(result, list)
        assert ViolationCode.MALFORMED_DOCUMENT in codes(result)

    def test_bad_objective_kind(self):
        doc = VALID_MODEL_DOC.replace("compute:", "guess:")
        result = parse_model(doc)
        assert isinstance(result, list)
        assert ViolationCode.MALFORMED_DOCUMENT in codes(result)


class TestParseRobustness:
    @pytest.mark.parametrize("garbage", [
        "", "\n\n\n", "## ", "##", "####", ":::", "## OVERVIEW",
        "## OVERVIEW\n## OVERVIEW", "\x00\x01", "## TYPE\n" * 50,
    ])
    def test_never_raises(self, garbage):
        result = parse_model(garbage)
        assert isinstance(result, (FormalModel, list))
        if isinstance(result, list):
            assert result, "violation list must be nonempty on failure"
            assert all(isinstance(v, SchemaViolation) for v in result)

    def test_fuzz_random_text(self):
        rng = np.random.Generator(np.random.Philox(99))
        alphabet = "## ABCxyz:|\n\t0123456789()"
        for _ in range(200):
            n = int(rng.integers(0, 120))
            doc = "".join(alphabet[int(rng.integers(len(alphabet)))] for _ in range(n))
            result = parse_model(doc)
            assert isinstance(result, (FormalModel, list))

    def test_blank_lines_between_entries_are_skipped(self):
        doc = VALID_MODEL_DOC.replace("x: integer | first factor\n",
                                      "\nx: integer | first factor\n\n")
        model = parse_model(doc)
        assert isinstance(model, FormalModel)
        assert model.variable_names == ("x", "y", "product")


class TestValidate:
    def test_clean_model_has_no_violations(self):
        model = parse_model(VALID_MODEL_DOC)
        assert validate(model) == []

    def test_duplicate_names_in_constructed_model(self):
        model = FormalModel(
            overview="", model_type="SAT",
            variables=(VariableDecl("a", "boolean"), VariableDecl("a", "boolean")),
            constraints=(), objectives=(Objective("decide", "a"),))
        assert ViolationCode.DUPLICATE_VARIABLE in codes(validate(model))

    def test_referenced_vars_must_match_text(self):
        bad = ConstraintExpr(id=1, text="a == 1", referenced_vars=frozenset({"b"}))
        model = FormalModel(
            overview="", model_type="SAT",
            variables=(VariableDecl("a", "boolean"), VariableDecl("b", "boolean")),
            constraints=(bad,), objectives=(Objective("decide", "a"),))
        assert ViolationCode.MALFORMED_DOCUMENT in codes(validate(model))

    def test_unknown_reference_in_constructed_model(self):
        model = FormalModel(
            overview="", model_type="SAT", variables=(),
            constraints=(make_constraint(1, "ghost == 1"),),
            objectives=(Objective("decide", "anything"),))
        assert ViolationCode.UNKNOWN_VARIABLE_REF in codes(validate(model))

    def test_empty_note_is_flagged(self):
        model = FormalModel(
            overview="", model_type="CSP",
            variables=(VariableDecl("a", "integer", note=""),),
            constraints=(), objectives=(Objective("compute", "a"),))
        assert ViolationCode.MALFORMED_DOCUMENT in codes(validate(model))

    def test_note_separator_inside_domain_is_flagged(self):
        model = FormalModel(
            overview="", model_type="CSP",
            variables=(VariableDecl("a", "integer | tricky"),),
            constraints=(), objectives=(Objective("compute", "a"),))
        assert ViolationCode.MALFORMED_DOCUMENT in codes(validate(model))

    def test_overview_header_lookalike_is_flagged(self):
        model = FormalModel(
            overview="## VARIABLES", model_type="CSP", variables=(),
            constraints=(), objectives=(Objective("compute", "something"),))
        assert ViolationCode.MALFORMED_DOCUMENT in codes(validate(model))

    def test_missing_objectives_flagged(self):
        model = FormalModel(overview="", model_type="CSP", variables=(),
                            constraints=(), objectives=())
        assert ViolationCode.EMPTY_OBJECTIVE in codes(validate(model))

    def test_validation_is_complete_not_fail_fast(self):
        model = FormalModel(
            overview="## TYPE", model_type="CSP",
            variables=(VariableDecl("a", "x", note=""), VariableDecl("a", "y")),
            constraints=(make_constraint(1, "ghost == 1"),),
            objectives=())
        found = codes(validate(model))
        assert {ViolationCode.MALFORMED_DOCUMENT, ViolationCode.DUPLICATE_VARIABLE,
                ViolationCode.UNKNOWN_VARIABLE_REF, ViolationCode.EMPTY_OBJECTIVE} <= found


class TestObjectFormat:
    def test_dict_round_trip(self):
        rng = np.random.Generator(np.random.Philox(77))
        for _ in range(50):
            model = random_formal_model(rng)
            assert model_from_dict(model_to_dict(model)) == model

    def test_json_round_trip(self):
        model = parse_model(VALID_MODEL_DOC)
        assert model_from_json(model_to_json(model)) == model

    def test_json_is_deterministic(self):
        model = parse_model(VALID_MODEL_DOC)
        assert model_to_json(model) == model_to_json(model)


class TestHelpers:
    def test_extract_identifiers_skips_allowlist(self):
        found = extract_identifiers("max(a, b) and c mod 2 == 1")
        assert found == frozenset({"a", "b", "c"})

    def test_extract_identifiers_skips_number_exponents(self):
        assert extract_identifiers("x >= 1e9") == frozenset({"x"})
        assert extract_identifiers("2e10 + 0x1f") == frozenset()

    def test_allowlist_is_configurable(self):
        found = extract_identifiers("foo(a)", allowlist=frozenset({"foo"}))
        assert found == frozenset({"a"})
        assert "abs" in DEFAULT_ALLOWLIST

    def test_normalize_known_types_case_insensitively(self):
        assert normalize_model_type("Arithmetic") == "arithmetic"
        assert normalize_model_type("sat") == "SAT"
        assert normalize_model_type("csp") == "CSP"

    def test_normalize_unknown_type_wraps(self):
        assert normalize_model_type("graph-walk") == "other(graph-walk)"
        assert normalize_model_type("other(graph-walk)") == "other(graph-walk)"

    def test_model_type_normalized_at_construction(self):
        model = FormalModel(overview="", model_type="ARITHMETIC", variables=(),
                            constraints=(), objectives=(Objective("compute", "x"),))
        assert model.model_type == "arithmetic"
