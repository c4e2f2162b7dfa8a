"""Lexer, recursive-descent parser, and canonical printer for the Excel
formula grammar subset.

Precedence, loosest to tightest: comparisons, `&`, `+ -`, `* /`, unary
minus, `^`, postfix `%`.  All binary operators are left-associative.
Absolute-reference `$` markers are accepted and discarded; function names
are uppercased at parse time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

from .grid import CellRef, ErrorKind, RangeRef, number_to_text


class FormulaSyntaxError(Exception):
    """Parse failure with byte position (relative to the '='-stripped text)."""

    def __init__(self, message: str, pos: int, expected: str = "") -> None:
        self.pos = pos
        self.expected = expected
        hint = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at offset {pos}{hint}")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NumberLit:
    value: float


@dataclass(frozen=True)
class TextLit:
    value: str


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class ErrorLit:
    kind: ErrorKind


@dataclass(frozen=True)
class Ref:
    ref: CellRef


@dataclass(frozen=True)
class Range:
    rng: RangeRef


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" | "percent"
    expr: "FormulaAst"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^ & = <> < <= > >=
    lhs: "FormulaAst"
    rhs: "FormulaAst"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


FormulaAst = Union[NumberLit, TextLit, BoolLit, ErrorLit, Ref, Range, Unary, Binary, Call]

_CALL_NAME_RE = re.compile(r"^[A-Z][A-Z0-9.]*$")


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # number | string | ident | cellref | error | op | punct | eof
    text: str
    pos: int


_NUMBER_RE = re.compile(r"\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?")
_CELLREF_RE = re.compile(r"\$?[A-Za-z]{1,3}\$?[0-9]+")
_IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_.]*")
_ERROR_LITERALS = ("#DIV/0!", "#VALUE!", "#NAME?", "#NUM!", "#REF!", "#N/A")
_TWO_CHAR_OPS = ("<>", "<=", ">=")
_ONE_CHAR_OPS = "+-*/^&=<>%"
_PUNCT = "(),:"
_IDENT_TAIL = re.compile(r"[A-Za-z0-9_.$]")


def tokenize(text: str) -> list:
    """Lex the '='-stripped formula text. Token texts concatenated with the
    skipped whitespace reconstruct the input exactly."""
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == '"':
            j = i + 1
            while True:
                if j >= n:
                    raise FormulaSyntaxError("unterminated string literal", i, expected='"')
                if text[j] == '"':
                    if j + 1 < n and text[j + 1] == '"':
                        j += 2
                        continue
                    break
                j += 1
            tokens.append(Token("string", text[i : j + 1], i))
            i = j + 1
            continue
        if ch == "#":
            for lit in _ERROR_LITERALS:
                if text.startswith(lit, i):
                    tokens.append(Token("error", lit, i))
                    i += len(lit)
                    break
            else:
                raise FormulaSyntaxError("unknown error literal", i)
            continue
        if ch in "0123456789" or (ch == "." and i + 1 < n and text[i + 1] in "0123456789"):
            m = _NUMBER_RE.match(text, i)
            if not m:
                raise FormulaSyntaxError(f"malformed number at {ch!r}", i)
            tokens.append(Token("number", m.group(), i))
            i = m.end()
            continue
        if ("A" <= ch <= "Z") or ("a" <= ch <= "z") or ch == "$":
            m = _CELLREF_RE.match(text, i)
            if m and not (m.end() < n and _IDENT_TAIL.match(text[m.end()])):
                tokens.append(Token("cellref", m.group(), i))
                i = m.end()
                continue
            m = _IDENT_RE.match(text, i)
            if not m:
                raise FormulaSyntaxError("unexpected character '$'", i)
            tokens.append(Token("ident", m.group(), i))
            i = m.end()
            continue
        if text.startswith(_TWO_CHAR_OPS[0], i) or text.startswith(_TWO_CHAR_OPS[1], i) or text.startswith(_TWO_CHAR_OPS[2], i):
            op = text[i : i + 2]
            tokens.append(Token("op", op, i))
            i += 2
            continue
        if ch in _ONE_CHAR_OPS:
            tokens.append(Token("op", ch, i))
            i += 1
            continue
        if ch in _PUNCT:
            tokens.append(Token("punct", ch, i))
            i += 1
            continue
        raise FormulaSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(Token("eof", "", n))
    return tokens


def _unescape_string(raw: str) -> str:
    return raw[1:-1].replace('""', '"')


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_MAX_DEPTH = 200

_COMPARISON_OPS = {"=", "<>", "<", "<=", ">", ">="}


class _Parser:
    def __init__(self, tokens: list) -> None:
        self.tokens = tokens
        self.i = 0
        self.depth = 0

    @property
    def cur(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_punct(self, ch: str) -> None:
        if self.cur.kind == "punct" and self.cur.text == ch:
            self.advance()
            return
        raise FormulaSyntaxError(f"unexpected {self._describe(self.cur)}", self.cur.pos, expected=repr(ch))

    @staticmethod
    def _describe(tok: Token) -> str:
        return "end of input" if tok.kind == "eof" else f"{tok.kind} {tok.text!r}"

    @staticmethod
    def _cellref(tok: Token) -> CellRef:
        try:
            return CellRef.from_a1(tok.text)
        except ValueError as exc:
            raise FormulaSyntaxError(str(exc), tok.pos) from exc

    def _enter(self) -> None:
        self.depth += 1
        if self.depth > _MAX_DEPTH:
            raise FormulaSyntaxError("formula nesting too deep", self.cur.pos)

    def parse(self) -> FormulaAst:
        node = self.parse_comparison()
        if self.cur.kind != "eof":
            raise FormulaSyntaxError(f"unexpected {self._describe(self.cur)}", self.cur.pos, expected="end of input")
        return node

    def parse_comparison(self) -> FormulaAst:
        node = self.parse_concat()
        while self.cur.kind == "op" and self.cur.text in _COMPARISON_OPS:
            op = self.advance().text
            node = Binary(op, node, self.parse_concat())
        return node

    def parse_concat(self) -> FormulaAst:
        node = self.parse_additive()
        while self.cur.kind == "op" and self.cur.text == "&":
            self.advance()
            node = Binary("&", node, self.parse_additive())
        return node

    def parse_additive(self) -> FormulaAst:
        node = self.parse_multiplicative()
        while self.cur.kind == "op" and self.cur.text in ("+", "-"):
            op = self.advance().text
            node = Binary(op, node, self.parse_multiplicative())
        return node

    def parse_multiplicative(self) -> FormulaAst:
        node = self.parse_power()
        while self.cur.kind == "op" and self.cur.text in ("*", "/"):
            op = self.advance().text
            node = Binary(op, node, self.parse_power())
        return node

    def parse_power(self) -> FormulaAst:
        node = self.parse_unary()
        while self.cur.kind == "op" and self.cur.text == "^":
            self.advance()
            node = Binary("^", node, self.parse_unary())
        return node

    def parse_unary(self) -> FormulaAst:
        # Unary minus consumes a whole power chain, so -2^2 is -(2^2) while
        # 2^-2 still parses: ^ operands re-enter here.
        self._enter()
        try:
            if self.cur.kind == "op" and self.cur.text == "-":
                self.advance()
                return Unary("neg", self.parse_power())
            if self.cur.kind == "op" and self.cur.text == "+":
                self.advance()
                return self.parse_power()
            return self.parse_postfix()
        finally:
            self.depth -= 1

    def parse_postfix(self) -> FormulaAst:
        node = self.parse_primary()
        while self.cur.kind == "op" and self.cur.text == "%":
            self.advance()
            node = Unary("percent", node)
        return node

    def parse_primary(self) -> FormulaAst:
        tok = self.cur
        if tok.kind == "number":
            self.advance()
            return NumberLit(float(tok.text))
        if tok.kind == "string":
            self.advance()
            return TextLit(_unescape_string(tok.text))
        if tok.kind == "error":
            self.advance()
            return ErrorLit(ErrorKind(tok.text))
        if tok.kind == "punct" and tok.text == "(":
            self._enter()
            try:
                self.advance()
                node = self.parse_comparison()
                self.expect_punct(")")
                return node
            finally:
                self.depth -= 1
        if tok.kind == "cellref":
            self.advance()
            if self.cur.kind == "punct" and self.cur.text == "(":
                return self.parse_call(tok)
            start = self._cellref(tok)
            if self.cur.kind == "punct" and self.cur.text == ":":
                self.advance()
                end_tok = self.cur
                if end_tok.kind != "cellref":
                    raise FormulaSyntaxError(
                        f"unexpected {self._describe(end_tok)}", end_tok.pos, expected="cell reference"
                    )
                self.advance()
                return Range(RangeRef.normalized(start, self._cellref(end_tok)))
            return Ref(start)
        if tok.kind == "ident":
            self.advance()
            upper = tok.text.upper()
            if self.cur.kind == "punct" and self.cur.text == "(":
                return self.parse_call(tok)
            if upper == "TRUE":
                return BoolLit(True)
            if upper == "FALSE":
                return BoolLit(False)
            raise FormulaSyntaxError(f"unexpected identifier {tok.text!r}", tok.pos, expected="'('")
        raise FormulaSyntaxError(f"unexpected {self._describe(tok)}", tok.pos, expected="an expression")

    def parse_call(self, name_tok: Token) -> FormulaAst:
        name = name_tok.text.replace("$", "").upper()
        if not _CALL_NAME_RE.match(name):
            raise FormulaSyntaxError(f"invalid function name {name_tok.text!r}", name_tok.pos)
        self._enter()
        try:
            self.expect_punct("(")
            args = []
            if self.cur.kind == "punct" and self.cur.text == ")":
                self.advance()
                return Call(name, tuple(args))
            args.append(self.parse_comparison())
            while self.cur.kind == "punct" and self.cur.text == ",":
                self.advance()
                args.append(self.parse_comparison())
            self.expect_punct(")")
            return Call(name, tuple(args))
        finally:
            self.depth -= 1


def parse_formula(text: str) -> FormulaAst:
    """Parse a formula, with or without the leading '='."""
    body = text[1:] if text.startswith("=") else text
    return _Parser(tokenize(body)).parse()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

_BINARY_PREC = {
    "=": 1, "<>": 1, "<": 1, "<=": 1, ">": 1, ">=": 1,
    "&": 2,
    "+": 3, "-": 3,
    "*": 4, "/": 4,
    "^": 6,
}
_NEG_PREC = 5
_PERCENT_PREC = 7
_ATOM_PREC = 8


def _prec(node: FormulaAst) -> int:
    if isinstance(node, Binary):
        return _BINARY_PREC[node.op]
    if isinstance(node, Unary):
        return _NEG_PREC if node.op == "neg" else _PERCENT_PREC
    return _ATOM_PREC


def _render(node: FormulaAst) -> str:
    if isinstance(node, NumberLit):
        return number_to_text(node.value)
    if isinstance(node, TextLit):
        return '"' + node.value.replace('"', '""') + '"'
    if isinstance(node, BoolLit):
        return "TRUE" if node.value else "FALSE"
    if isinstance(node, ErrorLit):
        return node.kind.value
    if isinstance(node, Ref):
        return node.ref.to_a1()
    if isinstance(node, Range):
        return node.rng.to_a1()
    if isinstance(node, Call):
        return f"{node.name}({','.join(_render(a) for a in node.args)})"
    if isinstance(node, Unary):
        if node.op == "neg":
            # Operand may be a full power chain; anything looser needs parens.
            inner = _render_child(node.expr, min_prec=_NEG_PREC)
            return f"-{inner}"
        inner = _render_child(node.expr, min_prec=_PERCENT_PREC)
        return f"{inner}%"
    if isinstance(node, Binary):
        prec = _BINARY_PREC[node.op]
        lhs = _render_child(node.lhs, min_prec=prec)
        if node.op == "^" and isinstance(node.rhs, Unary) and node.rhs.op == "neg":
            rhs = _render(node.rhs)  # 2^-1 re-parses without parens
        else:
            rhs = _render_child(node.rhs, min_prec=prec + 1)
        return f"{lhs}{node.op}{rhs}"
    raise TypeError(f"not a formula node: {node!r}")


def _render_child(node: FormulaAst, min_prec: int) -> str:
    text = _render(node)
    if _prec(node) < min_prec:
        return f"({text})"
    return text


def print_formula(ast: FormulaAst) -> str:
    """Canonical text starting with '=' and using minimal parentheses."""
    return "=" + _render(ast)


# ---------------------------------------------------------------------------
# AST utilities
# ---------------------------------------------------------------------------


def walk(ast: FormulaAst) -> Iterator[FormulaAst]:
    """Depth-first pre-order traversal."""
    stack = [ast]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Unary):
            stack.append(node.expr)
        elif isinstance(node, Binary):
            stack.append(node.rhs)
            stack.append(node.lhs)
        elif isinstance(node, Call):
            stack.extend(reversed(node.args))


def iter_call_names(ast: FormulaAst) -> Iterator[str]:
    """Function name of every Call node, once per occurrence."""
    for node in walk(ast):
        if isinstance(node, Call):
            yield node.name


def extract_functions(ast: FormulaAst) -> set:
    """Deduplicated set of all function names called in the tree."""
    return set(iter_call_names(ast))


def is_single_function(ast: FormulaAst) -> bool:
    """True iff the tree contains exactly one Call node."""
    count = 0
    for _ in iter_call_names(ast):
        count += 1
        if count > 1:
            return False
    return count == 1
