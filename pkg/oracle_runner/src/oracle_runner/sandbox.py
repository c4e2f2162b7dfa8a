"""Restricted execution of tabular-analysis snippets.

The snippet sees the request table as a pandas DataFrame named `df`
(spreadsheet row 1 becomes the column headers, data rows are 0-indexed)
plus the usual math/statistics surface. Imports outside the allowlist,
filesystem, network, and subprocess access are all refused. The response
value is the snippet's last expression, or a variable named `result`.

The threat model is accidental misbehavior of generated code, not an
adversarial escape."""

from __future__ import annotations

import ast
import builtins
import math
import signal
import statistics
from typing import Any

import numpy as np
import pandas as pd

ALLOWED_IMPORTS = frozenset(
    {
        "pandas",
        "numpy",
        "math",
        "statistics",
        "re",
        "json",
        "datetime",
        "collections",
        "itertools",
        "functools",
        "decimal",
        "fractions",
        "string",
    }
)

_FORBIDDEN_BUILTINS = frozenset(
    {
        "open",
        "input",
        "exec",
        "eval",
        "compile",
        "breakpoint",
        "exit",
        "quit",
        "help",
        "memoryview",
        "globals",
        "locals",
        "vars",
    }
)


class ForbiddenOperation(Exception):
    pass


class SnippetTimeout(Exception):
    pass


def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    root = name.split(".")[0]
    if level != 0 or root not in ALLOWED_IMPORTS:
        raise ForbiddenOperation(f"forbidden operation: import of {name!r} is not allowed")
    return __import__(name, globals, locals, fromlist, level)


def _blocked(name):
    def stub(*args, **kwargs):
        raise ForbiddenOperation(f"forbidden operation: {name}() is not available in the sandbox")

    return stub


def _safe_builtins() -> dict:
    table = {}
    for name in dir(builtins):
        if name.startswith("_"):
            continue
        table[name] = _blocked(name) if name in _FORBIDDEN_BUILTINS else getattr(builtins, name)
    table["__import__"] = _guarded_import
    return table


def dataframe_from_grid(table: dict) -> pd.DataFrame:
    """Grid-JSON to DataFrame: row 1 is the header row, data is 0-indexed."""
    rows = table.get("rows") or []
    if not rows:
        return pd.DataFrame()

    def cell(v):
        if isinstance(v, dict):
            return v.get("error")
        return v

    header = []
    for i, v in enumerate(rows[0]):
        v = cell(v)
        if v is None or v == "":
            header.append(f"Unnamed: {i}")
        elif isinstance(v, float) and v == int(v):
            header.append(str(int(v)))
        else:
            header.append(str(v))
    data = [[cell(v) for v in row] for row in rows[1:]]
    return pd.DataFrame(data, columns=header)


def to_json_value(value: Any) -> Any:
    """Normalize a Python/numpy/pandas value into JSON: numbers as doubles,
    sequences as arrays (2-D values row-major), non-finite numbers as null."""
    if value is None or isinstance(value, (bool, np.bool_)):
        return bool(value) if value is not None else None
    if isinstance(value, (int, np.integer)):
        return float(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else None
    if isinstance(value, str):
        return value
    if isinstance(value, pd.DataFrame):
        return [to_json_value(v) for v in value.to_numpy().ravel().tolist()]
    if isinstance(value, (pd.Series, pd.Index)):
        return [to_json_value(v) for v in value.tolist()]
    if isinstance(value, np.ndarray):
        return [to_json_value(v) for v in value.ravel().tolist()]
    if isinstance(value, (list, tuple, set, frozenset)):
        seq = sorted(value, key=repr) if isinstance(value, (set, frozenset)) else list(value)
        return [to_json_value(v) for v in seq]
    if isinstance(value, dict):
        return {str(k): to_json_value(v) for k, v in value.items()}
    if hasattr(value, "isoformat"):
        return value.isoformat()
    return str(value)


def _split_trailing_expression(code: str):
    """(body without trailing expression, trailing expression) or (code, None)."""
    tree = ast.parse(code)
    if tree.body and isinstance(tree.body[-1], ast.Expr):
        last = tree.body.pop()
        expr = ast.Expression(last.value)
        return (
            compile(tree, "<snippet>", "exec"),
            compile(expr, "<snippet>", "eval"),
        )
    return compile(tree, "<snippet>", "exec"), None


def execute_snippet(table: dict, code: str, timeout_ms: int = 5000) -> dict:
    """Run one snippet against the table; never raises.

    Returns {"status": ok|error|timeout, "value": json value or null,
    "error_msg": text}."""
    namespace = {
        "__builtins__": _safe_builtins(),
        "df": dataframe_from_grid(table),
        "pd": pd,
        "np": np,
        "math": math,
        "statistics": statistics,
    }

    def on_alarm(signum, frame):
        raise SnippetTimeout()

    old_handler = signal.signal(signal.SIGALRM, on_alarm)
    signal.setitimer(signal.ITIMER_REAL, max(timeout_ms, 1) / 1000.0)
    try:
        body, trailing = _split_trailing_expression(code)
        exec(body, namespace)
        value = eval(trailing, namespace) if trailing is not None else namespace.get("result")
        if trailing is not None and value is None:
            value = namespace.get("result")
        if value is None:
            return {"status": "error", "value": None,
                    "error_msg": "snippet produced no value (no trailing expression or `result`)"}
        return {"status": "ok", "value": to_json_value(value), "error_msg": ""}
    except SnippetTimeout:
        return {"status": "timeout", "value": None, "error_msg": f"timed out after {timeout_ms} ms"}
    except BaseException as exc:  # noqa: BLE001 - sandbox boundary is total
        return {"status": "error", "value": None, "error_msg": f"{type(exc).__name__}: {exc}"}
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, old_handler)
