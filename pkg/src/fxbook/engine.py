"""Formula evaluation against a Grid: coercions, error propagation, and the
builtin-function registry.

Runtime faults always surface as error values, never host exceptions.
Number equality is exact IEEE at this level; tolerances belong to the
validator and eval bench.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

from . import formula as fl
from .grid import CellValue, ErrorKind, Grid, cell_at, number_to_text, parse_number_text, resolve_range


class DuplicateNameError(Exception):
    pass


# ---------------------------------------------------------------------------
# Values and outcomes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Arr:
    """Shape-aware rectangle of cell values, row-major."""

    n_rows: int
    n_cols: int
    values: tuple

    def get(self, row: int, col: int) -> CellValue:
        """1-based element access."""
        return self.values[(row - 1) * self.n_cols + (col - 1)]

    def row(self, row: int) -> list:
        start = (row - 1) * self.n_cols
        return list(self.values[start : start + self.n_cols])

    def column(self, col: int) -> list:
        return [self.values[r * self.n_cols + (col - 1)] for r in range(self.n_rows)]

    @property
    def is_vector(self) -> bool:
        return self.n_rows == 1 or self.n_cols == 1


Value = Union[CellValue, Arr]


@dataclass(frozen=True)
class Plain:
    value: CellValue


@dataclass(frozen=True)
class Array:
    values: tuple

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("Array outcome must be nonempty")


EvalOutcome = Union[Plain, Array]


def outcome_to_json(outcome: EvalOutcome):
    from .grid import cell_to_json

    if isinstance(outcome, Plain):
        return {"kind": "plain", "value": cell_to_json(outcome.value)}
    return {"kind": "array", "values": [cell_to_json(v) for v in outcome.values]}


def outcome_from_json(data: dict) -> EvalOutcome:
    from .grid import cell_from_json

    if data["kind"] == "plain":
        return Plain(cell_from_json(data["value"]))
    return Array(tuple(cell_from_json(v) for v in data["values"]))


# ---------------------------------------------------------------------------
# Coercions
# ---------------------------------------------------------------------------


def is_number(v: Value) -> bool:
    return isinstance(v, float) and not isinstance(v, bool)


def coerce_number(v: Value) -> Union[float, ErrorKind]:
    """Arithmetic coercion: Blank -> 0, Bool -> 1/0, numeric text parses."""
    if isinstance(v, ErrorKind):
        return v
    if isinstance(v, bool):
        return 1.0 if v else 0.0
    if isinstance(v, float):
        return v
    if v is None:
        return 0.0
    if isinstance(v, str):
        num = parse_number_text(v)
        return num if num is not None else ErrorKind.VALUE
    return ErrorKind.VALUE


def coerce_text(v: Value) -> Union[str, ErrorKind]:
    """Concatenation coercion: Blank -> "", numbers without trailing .0."""
    if isinstance(v, ErrorKind):
        return v
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, float):
        return number_to_text(v)
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return ErrorKind.VALUE


def coerce_bool(v: Value) -> Union[bool, ErrorKind]:
    if isinstance(v, ErrorKind):
        return v
    if isinstance(v, bool):
        return v
    if isinstance(v, float):
        return v != 0.0
    if isinstance(v, str):
        low = v.strip().lower()
        if low == "true":
            return True
        if low == "false":
            return False
        return ErrorKind.VALUE
    if v is None:
        return False
    return ErrorKind.VALUE


def _type_rank(v: CellValue) -> int:
    if isinstance(v, bool):
        return 2
    if isinstance(v, float):
        return 0
    return 1  # text


def compare_values(op: str, a: CellValue, b: CellValue) -> Union[bool, ErrorKind]:
    """Ordering across types is Number < Text < Bool; text case-insensitive.
    Blank coerces to the other side's zero value."""
    if isinstance(a, ErrorKind):
        return a
    if isinstance(b, ErrorKind):
        return b
    if a is None and b is None:
        a = b = 0.0
    elif a is None:
        a = 0.0 if isinstance(b, float) and not isinstance(b, bool) else ("" if isinstance(b, str) else False)
    elif b is None:
        b = 0.0 if isinstance(a, float) and not isinstance(a, bool) else ("" if isinstance(a, str) else False)

    ra, rb = _type_rank(a), _type_rank(b)
    if ra != rb:
        cmp = -1 if ra < rb else 1
    else:
        if isinstance(a, str):
            fa, fb = a.casefold(), b.casefold()
            cmp = -1 if fa < fb else (1 if fa > fb else 0)
        else:
            cmp = -1 if a < b else (1 if a > b else 0)

    return {
        "=": cmp == 0,
        "<>": cmp != 0,
        "<": cmp < 0,
        "<=": cmp <= 0,
        ">": cmp > 0,
        ">=": cmp >= 0,
    }[op]


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BuiltinSpec:
    """One registered function.

    Strict impls receive evaluated argument values; lazy impls receive the
    raw argument nodes plus the context and evaluate what they need.
    """

    name: str
    min_args: int
    max_args: Optional[int]  # None = unbounded
    impl: Callable
    lazy: bool = False

    def __post_init__(self) -> None:
        if self.max_args is not None and self.min_args > self.max_args:
            raise ValueError(f"{self.name}: min_args > max_args")


@dataclass
class EvalContext:
    grid: Grid
    registry: "Registry"

    def eval(self, node: fl.FormulaAst) -> Value:
        return _eval(node, self)


class Registry:
    """Immutable-by-convention name -> BuiltinSpec table."""

    def __init__(self) -> None:
        self._specs: dict = {}

    def register(self, spec: BuiltinSpec) -> "Registry":
        if spec.name in self._specs:
            raise DuplicateNameError(spec.name)
        self._specs[spec.name] = spec
        return self

    def get(self, name: str) -> Optional[BuiltinSpec]:
        return self._specs.get(name)

    def names(self) -> list:
        return sorted(self._specs)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _finite_or_num_error(v: float) -> Union[float, ErrorKind]:
    return v if math.isfinite(v) else ErrorKind.NUM


def _arith(op: str, a: float, b: float) -> Union[float, ErrorKind]:
    try:
        if op == "+":
            return _finite_or_num_error(a + b)
        if op == "-":
            return _finite_or_num_error(a - b)
        if op == "*":
            return _finite_or_num_error(a * b)
        if op == "/":
            if b == 0.0:
                return ErrorKind.DIV0
            return _finite_or_num_error(a / b)
        if op == "^":
            return _finite_or_num_error(float(a ** b))
    except (OverflowError, ValueError):
        return ErrorKind.NUM
    except ZeroDivisionError:
        return ErrorKind.DIV0
    raise ValueError(f"unknown arithmetic operator {op}")


def _binary_scalar(op: str, a: CellValue, b: CellValue) -> CellValue:
    if isinstance(a, ErrorKind):
        return a
    if isinstance(b, ErrorKind):
        return b
    if op in ("+", "-", "*", "/", "^"):
        na, nb = coerce_number(a), coerce_number(b)
        if isinstance(na, ErrorKind):
            return na
        if isinstance(nb, ErrorKind):
            return nb
        return _arith(op, na, nb)
    if op == "&":
        ta, tb = coerce_text(a), coerce_text(b)
        if isinstance(ta, ErrorKind):
            return ta
        if isinstance(tb, ErrorKind):
            return tb
        return ta + tb
    return compare_values(op, a, b)


def _broadcast(op: str, a: Value, b: Value) -> Value:
    """Elementwise binary over Arr operands; scalars broadcast."""
    if isinstance(a, Arr) and isinstance(b, Arr):
        if (a.n_rows, a.n_cols) != (b.n_rows, b.n_cols):
            return ErrorKind.VALUE
        vals = tuple(_binary_scalar(op, x, y) for x, y in zip(a.values, b.values))
        return Arr(a.n_rows, a.n_cols, vals)
    if isinstance(a, Arr):
        return Arr(a.n_rows, a.n_cols, tuple(_binary_scalar(op, x, b) for x in a.values))
    if isinstance(b, Arr):
        return Arr(b.n_rows, b.n_cols, tuple(_binary_scalar(op, a, y) for y in b.values))
    return _binary_scalar(op, a, b)


def _unary_value(op: str, v: Value) -> Value:
    if isinstance(v, Arr):
        return Arr(v.n_rows, v.n_cols, tuple(_unary_value(op, x) for x in v.values))
    if isinstance(v, ErrorKind):
        return v
    num = coerce_number(v)
    if isinstance(num, ErrorKind):
        return num
    return -num if op == "neg" else num / 100.0


def _eval(node: fl.FormulaAst, ctx: EvalContext) -> Value:
    if isinstance(node, fl.NumberLit):
        return node.value
    if isinstance(node, fl.TextLit):
        return node.value
    if isinstance(node, fl.BoolLit):
        return node.value
    if isinstance(node, fl.ErrorLit):
        return node.kind
    if isinstance(node, fl.Ref):
        return cell_at(ctx.grid, node.ref)
    if isinstance(node, fl.Range):
        rng = node.rng
        return Arr(rng.n_rows, rng.n_cols, tuple(resolve_range(ctx.grid, rng)))
    if isinstance(node, fl.Unary):
        return _unary_value(node.op, _eval(node.expr, ctx))
    if isinstance(node, fl.Binary):
        lhs = _eval(node.lhs, ctx)
        if isinstance(lhs, ErrorKind):
            return lhs
        rhs = _eval(node.rhs, ctx)
        return _broadcast(node.op, lhs, rhs)
    if isinstance(node, fl.Call):
        spec = ctx.registry.get(node.name)
        if spec is None:
            return ErrorKind.NAME
        n = len(node.args)
        if n < spec.min_args or (spec.max_args is not None and n > spec.max_args):
            return ErrorKind.VALUE
        if spec.lazy:
            return spec.impl(list(node.args), ctx)
        args = []
        for arg_node in node.args:
            v = _eval(arg_node, ctx)
            if isinstance(v, ErrorKind):
                return v
            args.append(v)
        return spec.impl(args, ctx)
    raise TypeError(f"not a formula node: {node!r}")


def evaluate(ast: fl.FormulaAst, grid: Grid, registry: Optional[Registry] = None) -> EvalOutcome:
    """Evaluate an AST against a grid. Deterministic and total: every
    runtime fault comes back as Plain(error)."""
    from .builtins import core_library

    ctx = EvalContext(grid=grid, registry=registry if registry is not None else core_library())
    try:
        value = _eval(ast, ctx)
    except RecursionError:
        value = ErrorKind.VALUE
    if isinstance(value, Arr):
        return Array(tuple(value.values))
    return Plain(value)
