"""Builtin function implementations and the core registry.

Range-aggregations (SUM, AVERAGE, MIN, MAX, COUNT) skip Text, Bool, and
Blank cells but coerce direct scalar arguments; errors inside ranges
propagate except where a function counts rather than computes.  IF and
IFERROR are lazy; everything else evaluates its arguments strictly.
"""

from __future__ import annotations

import math
import re
from decimal import ROUND_HALF_UP, Decimal
from typing import Union

from . import formula as fl
from .engine import (
    Arr,
    BuiltinSpec,
    EvalContext,
    Registry,
    Value,
    coerce_bool,
    coerce_number,
    coerce_text,
    is_number,
)
from .grid import ErrorKind, parse_number_text

Err = ErrorKind


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _flatten(args: list) -> list:
    out = []
    for a in args:
        if isinstance(a, Arr):
            out.extend(a.values)
        else:
            out.append(a)
    return out


def _numbers_for_aggregation(args: list) -> Union[list, ErrorKind]:
    """Numbers from args: range cells keep only Numbers (errors propagate),
    direct scalars coerce."""
    nums = []
    for a in args:
        if isinstance(a, Arr):
            for v in a.values:
                if isinstance(v, ErrorKind):
                    return v
                if is_number(v):
                    nums.append(v)
        else:
            n = coerce_number(a)
            if isinstance(n, ErrorKind):
                return n
            nums.append(n)
    return nums


def _scalar_text(v: Value) -> Union[str, ErrorKind]:
    if isinstance(v, Arr):
        return Err.VALUE
    return coerce_text(v)


def _scalar_number(v: Value) -> Union[float, ErrorKind]:
    if isinstance(v, Arr):
        return Err.VALUE
    return coerce_number(v)


def _scalar_int(v: Value) -> Union[int, ErrorKind]:
    n = _scalar_number(v)
    if isinstance(n, ErrorKind):
        return n
    return int(n)


def _scalar_bool(v: Value) -> Union[bool, ErrorKind]:
    if isinstance(v, Arr):
        return Err.VALUE
    return coerce_bool(v)


def _as_arr(v: Value) -> Arr:
    if isinstance(v, Arr):
        return v
    return Arr(1, 1, (v,))


def _wildcard_regex(pattern: str) -> re.Pattern:
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.IGNORECASE | re.DOTALL)


def _text_matches(pattern: str, text: str) -> bool:
    if "*" in pattern or "?" in pattern:
        return bool(_wildcard_regex(pattern).fullmatch(text))
    return pattern.casefold() == text.casefold()


def _round_half_up(value: float, digits: int) -> float:
    exp = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(exp, rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# Criteria predicates (COUNTIF/SUMIF family)
# ---------------------------------------------------------------------------

_CRIT_OP_RE = re.compile(r"^(<>|<=|>=|=|<|>)")


def _make_criteria(crit: Value):
    """Build a cell predicate from a COUNTIF-style criteria value."""
    if isinstance(crit, Arr):
        if len(crit.values) != 1:
            return lambda v: False
        crit = crit.values[0]
    if isinstance(crit, bool):
        return lambda v: isinstance(v, bool) and v == crit
    if is_number(crit):
        return _numeric_equals_pred(crit)
    if crit is None:
        return lambda v: v is None

    text = str(crit)
    m = _CRIT_OP_RE.match(text)
    op, rest = (m.group(1), text[m.end() :]) if m else ("=", text)
    num = parse_number_text(rest) if rest else None

    if num is not None:
        if op == "=":
            return _numeric_equals_pred(num)
        if op == "<>":
            eq = _numeric_equals_pred(num)
            return lambda v: v is not None and not eq(v)

        def num_cmp(v, op=op, num=num):
            x = v if is_number(v) else (parse_number_text(v) if isinstance(v, str) else None)
            if x is None:
                return False
            return {"<": x < num, "<=": x <= num, ">": x > num, ">=": x >= num}[op]

        return num_cmp

    if op == "=":
        if rest == "":
            return lambda v: v is None or v == ""
        return lambda v: isinstance(v, str) and _text_matches(rest, v)
    if op == "<>":
        if rest == "":
            return lambda v: v is not None and v != ""
        return lambda v: v is not None and not (isinstance(v, str) and _text_matches(rest, v))

    def text_cmp(v, op=op, rest=rest.casefold()):
        if not isinstance(v, str):
            return False
        s = v.casefold()
        return {"<": s < rest, "<=": s <= rest, ">": s > rest, ">=": s >= rest}[op]

    return text_cmp


def _numeric_equals_pred(num: float):
    def pred(v):
        if is_number(v):
            return v == num
        if isinstance(v, str):
            x = parse_number_text(v)
            return x is not None and x == num
        return False

    return pred


def _criteria_pairs(args: list) -> Union[list, ErrorKind]:
    """(range, criteria) pairs for the *IFS functions; shapes must agree."""
    if len(args) % 2 != 0:
        return Err.VALUE
    pairs = []
    shape = None
    for i in range(0, len(args), 2):
        rng = _as_arr(args[i])
        if shape is None:
            shape = (rng.n_rows, rng.n_cols)
        elif (rng.n_rows, rng.n_cols) != shape:
            return Err.VALUE
        pairs.append((rng, _make_criteria(args[i + 1])))
    return pairs


def _matched_mask(pairs: list) -> list:
    size = len(pairs[0][0].values)
    mask = [True] * size
    for rng, pred in pairs:
        for i, v in enumerate(rng.values):
            if mask[i] and not pred(v):
                mask[i] = False
    return mask


# ---------------------------------------------------------------------------
# Math and aggregation
# ---------------------------------------------------------------------------


def _fn_sum(args: list, ctx: EvalContext) -> Value:
    nums = _numbers_for_aggregation(args)
    if isinstance(nums, ErrorKind):
        return nums
    return float(sum(nums))


def _fn_average(args: list, ctx: EvalContext) -> Value:
    nums = _numbers_for_aggregation(args)
    if isinstance(nums, ErrorKind):
        return nums
    if not nums:
        return Err.DIV0
    return sum(nums) / len(nums)


def _fn_min(args: list, ctx: EvalContext) -> Value:
    nums = _numbers_for_aggregation(args)
    if isinstance(nums, ErrorKind):
        return nums
    return min(nums) if nums else 0.0


def _fn_max(args: list, ctx: EvalContext) -> Value:
    nums = _numbers_for_aggregation(args)
    if isinstance(nums, ErrorKind):
        return nums
    return max(nums) if nums else 0.0


def _fn_count(args: list, ctx: EvalContext) -> Value:
    count = 0
    for a in args:
        if isinstance(a, Arr):
            count += sum(1 for v in a.values if is_number(v))
        elif not isinstance(coerce_number(a), ErrorKind) and a is not None:
            count += 1
    return float(count)


def _fn_counta(args: list, ctx: EvalContext) -> Value:
    count = 0
    for v in _flatten(args):
        if v is not None:
            count += 1
    return float(count)


def _fn_countblank(args: list, ctx: EvalContext) -> Value:
    rng = _as_arr(args[0])
    return float(sum(1 for v in rng.values if v is None or v == ""))


def _fn_countif(args: list, ctx: EvalContext) -> Value:
    rng = _as_arr(args[0])
    pred = _make_criteria(args[1])
    return float(sum(1 for v in rng.values if pred(v)))


def _fn_countifs(args: list, ctx: EvalContext) -> Value:
    pairs = _criteria_pairs(args)
    if isinstance(pairs, ErrorKind):
        return pairs
    return float(sum(_matched_mask(pairs)))


def _sum_where(values: tuple, mask: list) -> Union[float, ErrorKind]:
    total = 0.0
    for v, keep in zip(values, mask):
        if not keep:
            continue
        if isinstance(v, ErrorKind):
            return v
        if is_number(v):
            total += v
    return total


def _fn_sumif(args: list, ctx: EvalContext) -> Value:
    rng = _as_arr(args[0])
    pred = _make_criteria(args[1])
    sum_rng = _as_arr(args[2]) if len(args) == 3 else rng
    if (sum_rng.n_rows, sum_rng.n_cols) != (rng.n_rows, rng.n_cols):
        return Err.VALUE
    return _sum_where(sum_rng.values, [pred(v) for v in rng.values])


def _fn_sumifs(args: list, ctx: EvalContext) -> Value:
    sum_rng = _as_arr(args[0])
    pairs = _criteria_pairs(args[1:])
    if isinstance(pairs, ErrorKind):
        return pairs
    if (pairs[0][0].n_rows, pairs[0][0].n_cols) != (sum_rng.n_rows, sum_rng.n_cols):
        return Err.VALUE
    return _sum_where(sum_rng.values, _matched_mask(pairs))


def _fn_averageif(args: list, ctx: EvalContext) -> Value:
    rng = _as_arr(args[0])
    pred = _make_criteria(args[1])
    avg_rng = _as_arr(args[2]) if len(args) == 3 else rng
    if (avg_rng.n_rows, avg_rng.n_cols) != (rng.n_rows, rng.n_cols):
        return Err.VALUE
    nums = []
    for v, src in zip(avg_rng.values, rng.values):
        if not pred(src):
            continue
        if isinstance(v, ErrorKind):
            return v
        if is_number(v):
            nums.append(v)
    if not nums:
        return Err.DIV0
    return sum(nums) / len(nums)


def _fn_large(args: list, ctx: EvalContext) -> Value:
    return _kth(args, descending=True)


def _fn_small(args: list, ctx: EvalContext) -> Value:
    return _kth(args, descending=False)


def _kth(args: list, descending: bool) -> Value:
    nums = _numbers_for_aggregation([args[0]])
    if isinstance(nums, ErrorKind):
        return nums
    k = _scalar_int(args[1])
    if isinstance(k, ErrorKind):
        return k
    if k < 1 or k > len(nums):
        return Err.NUM
    return sorted(nums, reverse=descending)[k - 1]


def _fn_rank(args: list, ctx: EvalContext) -> Value:
    number = _scalar_number(args[0])
    if isinstance(number, ErrorKind):
        return number
    nums = _numbers_for_aggregation([args[1]])
    if isinstance(nums, ErrorKind):
        return nums
    ascending = False
    if len(args) == 3:
        order = _scalar_number(args[2])
        if isinstance(order, ErrorKind):
            return order
        ascending = order != 0.0
    if number not in nums:
        return Err.NA
    if ascending:
        return float(1 + sum(1 for v in nums if v < number))
    return float(1 + sum(1 for v in nums if v > number))


def _fn_round(args: list, ctx: EvalContext) -> Value:
    value = _scalar_number(args[0])
    if isinstance(value, ErrorKind):
        return value
    digits = _scalar_int(args[1])
    if isinstance(digits, ErrorKind):
        return digits
    return _round_half_up(value, digits)


def _fn_abs(args: list, ctx: EvalContext) -> Value:
    value = _scalar_number(args[0])
    if isinstance(value, ErrorKind):
        return value
    return abs(value)


def _fn_mod(args: list, ctx: EvalContext) -> Value:
    n = _scalar_number(args[0])
    d = _scalar_number(args[1])
    if isinstance(n, ErrorKind):
        return n
    if isinstance(d, ErrorKind):
        return d
    if d == 0.0:
        return Err.DIV0
    # Result carries the sign of the divisor.
    return n - d * math.floor(n / d)


def _fn_sumproduct(args: list, ctx: EvalContext) -> Value:
    arrs = [_as_arr(a) for a in args]
    shape = (arrs[0].n_rows, arrs[0].n_cols)
    for a in arrs[1:]:
        if (a.n_rows, a.n_cols) != shape:
            return Err.VALUE
    total = 0.0
    for i in range(shape[0] * shape[1]):
        prod = 1.0
        for a in arrs:
            v = a.values[i]
            if isinstance(v, ErrorKind):
                return v
            prod *= v if is_number(v) else 0.0
        total += prod
    return total


# ---------------------------------------------------------------------------
# Logical
# ---------------------------------------------------------------------------


def _fn_if(arg_nodes: list, ctx: EvalContext) -> Value:
    # Lazy: only the taken branch is evaluated.
    cond_val = ctx.eval(arg_nodes[0])
    if isinstance(cond_val, Arr):
        return Err.VALUE
    cond = coerce_bool(cond_val)
    if isinstance(cond, ErrorKind):
        return cond
    if cond:
        return ctx.eval(arg_nodes[1])
    if len(arg_nodes) == 3:
        return ctx.eval(arg_nodes[2])
    return False


def _fn_iferror(arg_nodes: list, ctx: EvalContext) -> Value:
    value = ctx.eval(arg_nodes[0])
    if isinstance(value, ErrorKind):
        return ctx.eval(arg_nodes[1])
    return value


def _bool_fold(args: list, want_any: bool) -> Value:
    found = None

    def fold(acc, b):
        if acc is None:
            return b
        return (acc or b) if want_any else (acc and b)

    for a in args:
        if isinstance(a, Arr):
            for v in a.values:
                if isinstance(v, ErrorKind):
                    return v
                if isinstance(v, bool) or is_number(v):
                    found = fold(found, bool(v) if isinstance(v, bool) else v != 0.0)
        else:
            if a is None:
                continue
            b = coerce_bool(a)
            if isinstance(b, ErrorKind):
                return b
            found = fold(found, b)
    if found is None:
        return Err.VALUE
    return found


def _fn_and(args: list, ctx: EvalContext) -> Value:
    return _bool_fold(args, want_any=False)


def _fn_or(args: list, ctx: EvalContext) -> Value:
    return _bool_fold(args, want_any=True)


def _fn_not(args: list, ctx: EvalContext) -> Value:
    b = _scalar_bool(args[0])
    if isinstance(b, ErrorKind):
        return b
    return not b


# ---------------------------------------------------------------------------
# Lookup and reference
# ---------------------------------------------------------------------------


def _fn_index(args: list, ctx: EvalContext) -> Value:
    arr = _as_arr(args[0])
    row = _scalar_int(args[1])
    if isinstance(row, ErrorKind):
        return row
    col: Union[int, ErrorKind]
    if len(args) == 3:
        col = _scalar_int(args[2])
        if isinstance(col, ErrorKind):
            return col
    elif arr.n_rows == 1 and arr.n_cols > 1:
        row, col = 1, row  # vector form indexes along the single row
    else:
        col = 1
    if row < 1 or col < 1:
        return Err.VALUE
    if row > arr.n_rows or col > arr.n_cols:
        return Err.REF
    return arr.get(row, col)


def _lookup_eq(lookup, cell) -> bool:
    if isinstance(lookup, str) and isinstance(cell, str):
        return _text_matches(lookup, cell)
    if is_number(lookup) and is_number(cell):
        return lookup == cell
    if isinstance(lookup, bool) and isinstance(cell, bool):
        return lookup == cell
    if lookup is None and cell is None:
        return True
    return False


def _lookup_cmp_le(lookup, cell) -> bool:
    """cell <= lookup under same-type comparison; mixed types never match."""
    if is_number(lookup) and is_number(cell):
        return cell <= lookup
    if isinstance(lookup, str) and isinstance(cell, str):
        return cell.casefold() <= lookup.casefold()
    if isinstance(lookup, bool) and isinstance(cell, bool):
        return cell <= lookup
    return False


def _lookup_cmp_ge(lookup, cell) -> bool:
    if is_number(lookup) and is_number(cell):
        return cell >= lookup
    if isinstance(lookup, str) and isinstance(cell, str):
        return cell.casefold() >= lookup.casefold()
    if isinstance(lookup, bool) and isinstance(cell, bool):
        return cell >= lookup
    return False


def _match_position(lookup, cells: list, match_type: int) -> Union[int, ErrorKind]:
    if match_type == 0:
        for i, v in enumerate(cells, start=1):
            if _lookup_eq(lookup, v):
                return i
        return Err.NA
    # Types 1/-1 assume sorted data and do not verify order: the scan keeps
    # the LAST qualifying position, reproducing spreadsheet behavior on
    # unsorted data (undefined per the docs, observable in practice).
    best = None
    cmp = _lookup_cmp_le if match_type > 0 else _lookup_cmp_ge
    for i, v in enumerate(cells, start=1):
        if cmp(lookup, v):
            best = i
    return best if best is not None else Err.NA


def _fn_match(args: list, ctx: EvalContext) -> Value:
    lookup = args[0]
    if isinstance(lookup, Arr):
        return Err.VALUE
    arr = _as_arr(args[1])
    if not arr.is_vector:
        return Err.NA
    match_type = 1
    if len(args) == 3:
        mt = _scalar_number(args[2])
        if isinstance(mt, ErrorKind):
            return mt
        match_type = 0 if mt == 0 else (1 if mt > 0 else -1)
    pos = _match_position(lookup, list(arr.values), match_type)
    if isinstance(pos, ErrorKind):
        return pos
    return float(pos)


def _lookup_rowcol(lookup, keys: list, approximate: bool) -> Union[int, ErrorKind]:
    if approximate:
        return _match_position(lookup, keys, 1)
    for i, v in enumerate(keys, start=1):
        if _lookup_eq(lookup, v):
            return i
    return Err.NA


def _fn_vlookup(args: list, ctx: EvalContext) -> Value:
    lookup = args[0]
    if isinstance(lookup, Arr):
        return Err.VALUE
    table = _as_arr(args[1])
    col = _scalar_int(args[2])
    if isinstance(col, ErrorKind):
        return col
    if col < 1:
        return Err.VALUE
    if col > table.n_cols:
        return Err.REF
    approximate = True
    if len(args) == 4:
        b = _scalar_bool(args[3])
        if isinstance(b, ErrorKind):
            return b
        approximate = b
    row = _lookup_rowcol(lookup, table.column(1), approximate)
    if isinstance(row, ErrorKind):
        return row
    return table.get(row, col)


def _fn_hlookup(args: list, ctx: EvalContext) -> Value:
    lookup = args[0]
    if isinstance(lookup, Arr):
        return Err.VALUE
    table = _as_arr(args[1])
    row = _scalar_int(args[2])
    if isinstance(row, ErrorKind):
        return row
    if row < 1:
        return Err.VALUE
    if row > table.n_rows:
        return Err.REF
    approximate = True
    if len(args) == 4:
        b = _scalar_bool(args[3])
        if isinstance(b, ErrorKind):
            return b
        approximate = b
    col = _lookup_rowcol(lookup, table.row(1), approximate)
    if isinstance(col, ErrorKind):
        return col
    return table.get(row, col)


def _ref_node(node: fl.FormulaAst):
    if isinstance(node, fl.Ref):
        return node.ref, None
    if isinstance(node, fl.Range):
        return None, node.rng
    return None, None


def _fn_row(arg_nodes: list, ctx: EvalContext) -> Value:
    ref, rng = _ref_node(arg_nodes[0])
    if ref is not None:
        return float(ref.row)
    if rng is not None:
        rows = tuple(float(r) for r in range(rng.start.row, rng.end.row + 1))
        return Arr(len(rows), 1, rows)
    return Err.VALUE


def _fn_column(arg_nodes: list, ctx: EvalContext) -> Value:
    ref, rng = _ref_node(arg_nodes[0])
    if ref is not None:
        return float(ref.col)
    if rng is not None:
        cols = tuple(float(c) for c in range(rng.start.col, rng.end.col + 1))
        return Arr(1, len(cols), cols)
    return Err.VALUE


def _fn_rows(arg_nodes: list, ctx: EvalContext) -> Value:
    ref, rng = _ref_node(arg_nodes[0])
    if ref is not None:
        return 1.0
    if rng is not None:
        return float(rng.n_rows)
    v = ctx.eval(arg_nodes[0])
    if isinstance(v, ErrorKind):
        return v
    return float(v.n_rows) if isinstance(v, Arr) else 1.0


def _fn_columns(arg_nodes: list, ctx: EvalContext) -> Value:
    ref, rng = _ref_node(arg_nodes[0])
    if ref is not None:
        return 1.0
    if rng is not None:
        return float(rng.n_cols)
    v = ctx.eval(arg_nodes[0])
    if isinstance(v, ErrorKind):
        return v
    return float(v.n_cols) if isinstance(v, Arr) else 1.0


# ---------------------------------------------------------------------------
# Text
# ---------------------------------------------------------------------------


def _fn_left(args: list, ctx: EvalContext) -> Value:
    text = _scalar_text(args[0])
    if isinstance(text, ErrorKind):
        return text
    n = 1
    if len(args) == 2:
        n = _scalar_int(args[1])
        if isinstance(n, ErrorKind):
            return n
    if n < 0:
        return Err.VALUE
    return text[:n]


def _fn_right(args: list, ctx: EvalContext) -> Value:
    text = _scalar_text(args[0])
    if isinstance(text, ErrorKind):
        return text
    n = 1
    if len(args) == 2:
        n = _scalar_int(args[1])
        if isinstance(n, ErrorKind):
            return n
    if n < 0:
        return Err.VALUE
    return text[max(0, len(text) - n) :] if n else ""


def _fn_mid(args: list, ctx: EvalContext) -> Value:
    text = _scalar_text(args[0])
    if isinstance(text, ErrorKind):
        return text
    start = _scalar_int(args[1])
    count = _scalar_int(args[2])
    if isinstance(start, ErrorKind):
        return start
    if isinstance(count, ErrorKind):
        return count
    if start < 1 or count < 0:
        return Err.VALUE
    return text[start - 1 : start - 1 + count]


def _fn_len(args: list, ctx: EvalContext) -> Value:
    text = _scalar_text(args[0])
    if isinstance(text, ErrorKind):
        return text
    return float(len(text))


def _find_impl(args: list, case_sensitive: bool) -> Value:
    needle = _scalar_text(args[0])
    haystack = _scalar_text(args[1])
    if isinstance(needle, ErrorKind):
        return needle
    if isinstance(haystack, ErrorKind):
        return haystack
    start = 1
    if len(args) == 3:
        start = _scalar_int(args[2])
        if isinstance(start, ErrorKind):
            return start
    if start < 1 or start > len(haystack) + 1:
        return Err.VALUE
    if case_sensitive:
        idx = haystack.find(needle, start - 1)
        return float(idx + 1) if idx >= 0 else Err.VALUE
    if "*" in needle or "?" in needle:
        m = _wildcard_regex(needle).search(haystack, start - 1)
        return float(m.start() + 1) if m else Err.VALUE
    idx = haystack.casefold().find(needle.casefold(), start - 1)
    return float(idx + 1) if idx >= 0 else Err.VALUE


def _fn_find(args: list, ctx: EvalContext) -> Value:
    return _find_impl(args, case_sensitive=True)


def _fn_search(args: list, ctx: EvalContext) -> Value:
    return _find_impl(args, case_sensitive=False)


def _fn_trim(args: list, ctx: EvalContext) -> Value:
    text = _scalar_text(args[0])
    if isinstance(text, ErrorKind):
        return text
    return " ".join(part for part in text.split(" ") if part)


def _fn_upper(args: list, ctx: EvalContext) -> Value:
    text = _scalar_text(args[0])
    if isinstance(text, ErrorKind):
        return text
    return text.upper()


def _fn_lower(args: list, ctx: EvalContext) -> Value:
    text = _scalar_text(args[0])
    if isinstance(text, ErrorKind):
        return text
    return text.lower()


def _fn_substitute(args: list, ctx: EvalContext) -> Value:
    text = _scalar_text(args[0])
    old = _scalar_text(args[1])
    new = _scalar_text(args[2])
    for v in (text, old, new):
        if isinstance(v, ErrorKind):
            return v
    if len(args) == 4:
        instance = _scalar_int(args[3])
        if isinstance(instance, ErrorKind):
            return instance
        if instance < 1:
            return Err.VALUE
        if not old:
            return text
        idx = -1
        for _ in range(instance):
            idx = text.find(old, idx + 1)
            if idx < 0:
                return text
        return text[:idx] + new + text[idx + len(old) :]
    if not old:
        return text
    return text.replace(old, new)


def _fn_concatenate(args: list, ctx: EvalContext) -> Value:
    parts = []
    for a in args:
        t = _scalar_text(a)
        if isinstance(t, ErrorKind):
            return t
        parts.append(t)
    return "".join(parts)


def _fn_textjoin(args: list, ctx: EvalContext) -> Value:
    delim = _scalar_text(args[0])
    if isinstance(delim, ErrorKind):
        return delim
    ignore_empty = _scalar_bool(args[1])
    if isinstance(ignore_empty, ErrorKind):
        return ignore_empty
    parts = []
    for v in _flatten(args[2:]):
        if isinstance(v, ErrorKind):
            return v
        t = coerce_text(v)
        if isinstance(t, ErrorKind):
            return t
        if ignore_empty and t == "":
            continue
        parts.append(t)
    return delim.join(parts)


_CURRENCY_CHARS = "$€£"


def _fn_value(args: list, ctx: EvalContext) -> Value:
    v = args[0]
    if isinstance(v, Arr) or isinstance(v, bool):
        return Err.VALUE
    if is_number(v):
        return v
    if v is None:
        return 0.0
    s = str(v).strip()
    for ch in _CURRENCY_CHARS:
        s = s.replace(ch, "")
    num = parse_number_text(s)
    return num if num is not None else Err.VALUE


def _fn_text(args: list, ctx: EvalContext) -> Value:
    value = args[0]
    if isinstance(value, Arr):
        return Err.VALUE
    fmt = _scalar_text(args[1])
    if isinstance(fmt, ErrorKind):
        return fmt
    if fmt == "@":
        t = coerce_text(value)
        return t
    num = coerce_number(value)
    if isinstance(num, ErrorKind):
        return num
    if fmt == "0":
        return str(int(_round_half_up(num, 0)))
    if fmt == "0.00":
        return f"{Decimal(repr(num)).quantize(Decimal('0.01'), rounding=ROUND_HALF_UP):f}"
    if fmt == "#,##0":
        return f"{int(_round_half_up(num, 0)):,}"
    if fmt == "0%":
        return f"{int(_round_half_up(num * 100.0, 0))}%"
    return Err.VALUE


# ---------------------------------------------------------------------------
# Registry assembly
# ---------------------------------------------------------------------------

_CORE_SPECS = [
    BuiltinSpec("SUM", 1, None, _fn_sum),
    BuiltinSpec("AVERAGE", 1, None, _fn_average),
    BuiltinSpec("COUNT", 1, None, _fn_count),
    BuiltinSpec("COUNTA", 1, None, _fn_counta),
    BuiltinSpec("COUNTBLANK", 1, 1, _fn_countblank),
    BuiltinSpec("COUNTIF", 2, 2, _fn_countif),
    BuiltinSpec("COUNTIFS", 2, None, _fn_countifs),
    BuiltinSpec("SUMIF", 2, 3, _fn_sumif),
    BuiltinSpec("SUMIFS", 3, None, _fn_sumifs),
    BuiltinSpec("AVERAGEIF", 2, 3, _fn_averageif),
    BuiltinSpec("MIN", 1, None, _fn_min),
    BuiltinSpec("MAX", 1, None, _fn_max),
    BuiltinSpec("LARGE", 2, 2, _fn_large),
    BuiltinSpec("SMALL", 2, 2, _fn_small),
    BuiltinSpec("RANK", 2, 3, _fn_rank),
    BuiltinSpec("IF", 2, 3, _fn_if, lazy=True),
    BuiltinSpec("IFERROR", 2, 2, _fn_iferror, lazy=True),
    BuiltinSpec("AND", 1, None, _fn_and),
    BuiltinSpec("OR", 1, None, _fn_or),
    BuiltinSpec("NOT", 1, 1, _fn_not),
    BuiltinSpec("INDEX", 2, 3, _fn_index),
    BuiltinSpec("MATCH", 2, 3, _fn_match),
    BuiltinSpec("VLOOKUP", 3, 4, _fn_vlookup),
    BuiltinSpec("HLOOKUP", 3, 4, _fn_hlookup),
    BuiltinSpec("ROW", 1, 1, _fn_row, lazy=True),
    BuiltinSpec("COLUMN", 1, 1, _fn_column, lazy=True),
    BuiltinSpec("ROWS", 1, 1, _fn_rows, lazy=True),
    BuiltinSpec("COLUMNS", 1, 1, _fn_columns, lazy=True),
    BuiltinSpec("LEFT", 1, 2, _fn_left),
    BuiltinSpec("RIGHT", 1, 2, _fn_right),
    BuiltinSpec("MID", 3, 3, _fn_mid),
    BuiltinSpec("LEN", 1, 1, _fn_len),
    BuiltinSpec("FIND", 2, 3, _fn_find),
    BuiltinSpec("SEARCH", 2, 3, _fn_search),
    BuiltinSpec("TRIM", 1, 1, _fn_trim),
    BuiltinSpec("UPPER", 1, 1, _fn_upper),
    BuiltinSpec("LOWER", 1, 1, _fn_lower),
    BuiltinSpec("SUBSTITUTE", 3, 4, _fn_substitute),
    BuiltinSpec("CONCATENATE", 1, None, _fn_concatenate),
    BuiltinSpec("TEXTJOIN", 3, None, _fn_textjoin),
    BuiltinSpec("VALUE", 1, 1, _fn_value),
    BuiltinSpec("TEXT", 2, 2, _fn_text),
    BuiltinSpec("ROUND", 2, 2, _fn_round),
    BuiltinSpec("ABS", 1, 1, _fn_abs),
    BuiltinSpec("MOD", 2, 2, _fn_mod),
    BuiltinSpec("SUMPRODUCT", 1, None, _fn_sumproduct),
]

CORE_FUNCTION_NAMES = tuple(spec.name for spec in _CORE_SPECS)


def core_library() -> Registry:
    """Fresh registry holding the 46 core builtins."""
    registry = Registry()
    for spec in _CORE_SPECS:
        registry.register(spec)
    return registry


def register_builtin(registry: Registry, spec: BuiltinSpec) -> Registry:
    """Register an additional builtin; duplicate names are rejected."""
    return registry.register(spec)
