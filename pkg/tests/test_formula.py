from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fxbook.formula import (
    Binary,
    BoolLit,
    Call,
    ErrorLit,
    FormulaSyntaxError,
    NumberLit,
    Range,
    Ref,
    TextLit,
    Unary,
    extract_functions,
    is_single_function,
    parse_formula,
    print_formula,
    tokenize,
)
from fxbook.grid import CellRef, ErrorKind


def test_parse_match_call():
    ast = parse_formula('=MATCH("Chile", B2:B11, 0)')
    assert isinstance(ast, Call) and ast.name == "MATCH"
    assert ast.args[0] == TextLit("Chile")
    assert isinstance(ast.args[1], Range)
    rng = ast.args[1].rng
    assert rng.start == CellRef.from_a1("B2") and rng.end == CellRef.from_a1("B11")
    assert ast.args[2] == NumberLit(0.0)


def test_parse_abs_literal():
    ast = parse_formula("=ABS(2)")
    assert ast == Call("ABS", (NumberLit(2.0),))


def test_parse_without_equals_prefix():
    assert parse_formula("ABS(2)") == parse_formula("=ABS(2)")


def test_truncated_input_position():
    with pytest.raises(FormulaSyntaxError) as exc:
        parse_formula("=1+")
    assert exc.value.pos == 2


def test_syntax_error_has_expected_hint():
    with pytest.raises(FormulaSyntaxError) as exc:
        parse_formula("=SUM(1,")
    assert exc.value.expected


def test_precedence_tree():
    ast = parse_formula("=1+2*3")
    assert ast == Binary("+", NumberLit(1.0), Binary("*", NumberLit(2.0), NumberLit(3.0)))


def test_power_binds_tighter_than_unary_minus():
    ast = parse_formula("=-2^2")
    assert ast == Unary("neg", Binary("^", NumberLit(2.0), NumberLit(2.0)))


def test_left_associativity():
    ast = parse_formula("=10-2-3")
    assert ast == Binary("-", Binary("-", NumberLit(10.0), NumberLit(2.0)), NumberLit(3.0))
    pow_ast = parse_formula("=2^3^2")
    assert pow_ast == Binary("^", Binary("^", NumberLit(2.0), NumberLit(3.0)), NumberLit(2.0))


def test_comparisons_lowest_precedence():
    ast = parse_formula('="a"&"b"="ab"')
    assert isinstance(ast, Binary) and ast.op == "="


def test_string_escapes():
    ast = parse_formula('="say ""hi"""')
    assert ast == TextLit('say "hi"')
    assert print_formula(ast) == '="say ""hi"""'


def test_absolute_markers_discarded():
    assert parse_formula("=$A$1") == Ref(CellRef(1, 1))
    assert parse_formula("=SUM($B$2:B3)") == parse_formula("=SUM(B2:B3)")


def test_range_normalized_on_parse():
    assert parse_formula("=B11:B2") == parse_formula("=B2:B11")


def test_percent_postfix():
    assert parse_formula("=50%") == Unary("percent", NumberLit(50.0))
    assert parse_formula("=-5%") == Unary("neg", Unary("percent", NumberLit(5.0)))


def test_error_literals():
    assert parse_formula("=#N/A") == ErrorLit(ErrorKind.NA)
    assert parse_formula("=#DIV/0!+1") == Binary("+", ErrorLit(ErrorKind.DIV0), NumberLit(1.0))


def test_bool_literals_and_functions():
    assert parse_formula("=TRUE") == BoolLit(True)
    assert parse_formula("=false") == BoolLit(False)
    # A name shaped like a cell reference is a call when followed by (.
    ast = parse_formula("=LOG10(100)")
    assert ast == Call("LOG10", (NumberLit(100.0),))


def test_function_names_uppercased():
    assert parse_formula("=sum(A1:A2)") == parse_formula("=SUM(A1:A2)")


def test_out_of_subset_syntax_rejected():
    for bad in ("=Sheet1!A1", "={1,2}", "=A1 A2", "=SUM(A1:A2:A3)", "=foo", "=1..2"):
        with pytest.raises(FormulaSyntaxError):
            parse_formula(bad)


def test_print_canonical_spacing():
    assert print_formula(parse_formula("=MATCH(90, B2:B8, 1)")) == "=MATCH(90,B2:B8,1)"


def test_print_unary_in_call():
    assert print_formula(Call("ABS", (Unary("neg", NumberLit(4.0)),))) == "=ABS(-4)"


def test_print_minimal_parens():
    assert print_formula(Binary("+", NumberLit(1.0), Binary("*", NumberLit(2.0), NumberLit(3.0)))) == "=1+2*3"
    assert print_formula(Binary("*", Binary("+", NumberLit(1.0), NumberLit(2.0)), NumberLit(3.0))) == "=(1+2)*3"
    # Left-associativity: right child of equal precedence needs parens.
    assert print_formula(Binary("-", NumberLit(1.0), Binary("-", NumberLit(2.0), NumberLit(3.0)))) == "=1-(2-3)"
    assert print_formula(Binary("^", Unary("neg", NumberLit(2.0)), NumberLit(2.0))) == "=(-2)^2"


def test_extract_functions_cases():
    assert extract_functions(parse_formula('=MATCH("Chile",B2:B11,0)')) == {"MATCH"}
    assert extract_functions(parse_formula("=A1+A2")) == set()
    assert extract_functions(parse_formula("=IF(SUM(A2:A9)>10,MAX(B2:B9),0)")) == {"IF", "SUM", "MAX"}


def test_is_single_function_cases():
    assert is_single_function(parse_formula('=MATCH("Chile",B2:B11,0)')) is True
    assert is_single_function(parse_formula("=A1+A2")) is False
    assert is_single_function(parse_formula("=IF(SUM(A2:A9)>10,1,0)")) is False
    assert is_single_function(parse_formula("=SUM(A1:A2)+SUM(B1:B2)")) is False


def test_token_concatenation_reconstructs_input():
    source = ' MATCH( "a""b" , B2:B11 , 0 ) + 5%'
    tokens = tokenize(source)
    rebuilt = list(" " * len(source))
    for tok in tokens:
        rebuilt[tok.pos : tok.pos + len(tok.text)] = tok.text
    assert "".join(rebuilt) == source


def test_deep_nesting_rejected_not_crashing():
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=" + "(" * 5000 + "1" + ")" * 5000)


def test_realistic_nesting_accepted():
    assert parse_formula("=" + "SUM(" * 60 + "1" + ")" * 60)
    assert parse_formula("=" + "(" * 99 + "1" + ")" * 99) == NumberLit(1.0)


def test_fuzz_lite_never_crashes():
    rng = random.Random(1234)
    alphabet = '0123456789+-*/^&<>=()",.:%ABCabc #!$_ '
    for _ in range(2000):
        s = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 30)))
        try:
            parse_formula(s)
        except FormulaSyntaxError:
            pass


# --- hypothesis: random ASTs survive print -> parse ------------------------

_names = st.sampled_from(["SUM", "IF", "MATCH", "ABS", "X.Y2"])
_atoms = st.one_of(
    st.floats(min_value=0, max_value=1e9, allow_nan=False, allow_infinity=False).map(NumberLit),
    st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), max_size=8).map(TextLit),
    st.booleans().map(BoolLit),
    st.sampled_from(list(ErrorKind)).map(ErrorLit),
    st.builds(
        Ref,
        st.builds(CellRef, st.integers(min_value=1, max_value=50), st.integers(min_value=1, max_value=99)),
    ),
)


def _exprs(children):
    binaries = st.builds(
        Binary, st.sampled_from(["+", "-", "*", "/", "^", "&", "=", "<>", "<", "<=", ">", ">="]), children, children
    )
    unaries = st.builds(Unary, st.sampled_from(["neg", "percent"]), children)
    calls = st.builds(Call, _names, st.lists(children, max_size=3).map(tuple))
    return st.one_of(binaries, unaries, calls)


_ast = st.recursive(_atoms, _exprs, max_leaves=25)


@settings(max_examples=200, deadline=None)
@given(_ast)
def test_print_parse_round_trip_property(ast):
    printed = print_formula(ast)
    assert parse_formula(printed) == ast


@settings(max_examples=200, deadline=None)
@given(_ast)
def test_extract_functions_bounds_property(ast):
    from fxbook.formula import Call, iter_call_names, walk

    names = extract_functions(ast)
    call_nodes = sum(1 for n in walk(ast) if isinstance(n, Call))
    assert len(names) <= call_nodes
    assert names == set(iter_call_names(ast))
    if isinstance(ast, Call):
        assert ast.name in names
