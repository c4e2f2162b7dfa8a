from __future__ import annotations

import random
from pathlib import Path

import pytest

from fxbook.libprep import (
    ArgSpec,
    FunctionSpec,
    MalformedSignatureError,
    MissingDocError,
    UsageStats,
    count_function_usage,
    load_function_docs,
    parse_function_doc,
    select_top_k,
)

DOCS_DIR = Path(__file__).parent / "data" / "docs"


def test_count_basic_multiset():
    stats = count_function_usage(["=SUM(A1:A2)", "=IF(SUM(B1:B2)>0,1,0)"])
    assert stats.counts == {"SUM": 2, "IF": 1}
    assert stats.total_formulas == 2
    assert stats.skipped == 0


def test_count_skips_unparseable():
    stats = count_function_usage(["not a formula ((("])
    assert stats.counts == {}
    assert stats.skipped == 1
    assert stats.total_formulas == 0


def test_count_sums_to_call_nodes():
    corpus = ["=SUM(A1:A2)+SUM(B1:B2)", "=ABS(IF(A1>0,A1,MAX(B1:B2)))", "=A1+1"]
    stats = count_function_usage(corpus)
    assert sum(stats.counts.values()) == 5


def test_planted_frequency_corpus():
    planted = {"SUM": 400, "IF": 250, "COUNT": 150, "ABS": 120, "LEN": 80}
    corpus = []
    for name, n in planted.items():
        corpus += [f"={name}(A1:A2)"] * n
    rng = random.Random(7)
    rng.shuffle(corpus)
    stats = count_function_usage(corpus)
    assert stats.counts == planted
    assert stats.total_formulas == 1000
    assert select_top_k(stats, 100) == ["SUM", "IF", "COUNT", "ABS", "LEN"]
    assert select_top_k(stats, 3) == ["SUM", "IF", "COUNT"]


def test_top_k_tie_breaks_alphabetical():
    stats = UsageStats(counts={"SUM": 5, "IF": 5, "ABS": 1})
    assert select_top_k(stats, 2) == ["IF", "SUM"]


def test_top_k_saturates():
    stats = UsageStats(counts={"SUM": 5, "IF": 3})
    assert select_top_k(stats, 10) == ["SUM", "IF"]


def test_top_k_deterministic():
    stats = UsageStats(counts={"B": 2, "A": 2, "C": 1})
    assert select_top_k(stats, 3) == select_top_k(stats, 3) == ["A", "B", "C"]


def test_load_abs_doc():
    (spec,) = load_function_docs(DOCS_DIR, ["ABS"])
    assert spec.name == "ABS"
    assert spec.signature == "ABS(number)"
    assert spec.args == [ArgSpec("number", True)]
    assert spec.summary.startswith("Returns the absolute value")
    assert "Absolute value of -4" in spec.doc_text


def test_load_match_doc_argument_schema():
    (spec,) = load_function_docs(DOCS_DIR, ["MATCH"])
    assert [a.name for a in spec.args] == ["lookup_value", "lookup_array", "match_type"]
    assert [a.required for a in spec.args] == [True, True, False]
    assert spec.signature == "MATCH(lookup_value, lookup_array, [match_type])"


def test_missing_doc():
    with pytest.raises(MissingDocError) as exc:
        load_function_docs(DOCS_DIR, ["VLOOKUP", "NOSUCHFUNC"])
    assert exc.value.name == "NOSUCHFUNC"


def test_malformed_signature():
    with pytest.raises(MalformedSignatureError):
        parse_function_doc("BAD", "Description\nnothing here\nSyntax\nno signature line\n")


def test_marker_missing_defaults_required():
    doc = "Description\nAdds.\n\nSyntax\nADDTWO(alpha, beta)\n"
    spec = parse_function_doc("ADDTWO", doc)
    assert spec.args == [ArgSpec("alpha", True), ArgSpec("beta", True)]


def test_variadic_ellipsis_dropped():
    (spec,) = load_function_docs(DOCS_DIR, ["SUM"])
    assert [a.name for a in spec.args] == ["number1", "number2"]
    assert [a.required for a in spec.args] == [True, False]


def test_function_spec_json_round_trip():
    (spec,) = load_function_docs(DOCS_DIR, ["IF"])
    again = FunctionSpec.from_json(spec.to_json())
    assert again == spec


def test_names_round_trip_through_docs():
    stats = count_function_usage(["=ABS(1)", "=MATCH(1,A1:A2,0)", "=SUM(A1:A2)"])
    names = select_top_k(stats, 3)
    specs = load_function_docs(DOCS_DIR, names)
    assert [s.name for s in specs] == names
