"""Post-generation validation: execution filtering, parallel oracle-language
solutions, sandboxed oracle execution, and value-equivalence judgment.

Oracle values arrive as plain JSON from the runner protocol.  A Plain
outcome compared against a one-element oracle list (and vice versa) is
unwrapped before the scalar rules apply: dataframe selections are often
length-1 sequences and the unwrap cannot make unequal values equal.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import selectors
import subprocess
from dataclasses import dataclass
from typing import Optional

from . import teacher as tio
from .engine import EvalOutcome, Plain, evaluate
from .genpipe import SynSample
from .grid import ErrorKind, Grid, grid_to_json, render_markdown
from .formula import FormulaSyntaxError, parse_formula
from .prompts import TEMPLATES

log = logging.getLogger(__name__)


class RunnerDeadError(Exception):
    pass


@dataclass
class EquivalencePolicy:
    """Codified equality rules for Excel-vs-oracle executed values."""

    numeric_rel_tol: float = 1e-6
    numeric_abs_tol: float = 1e-9
    text_normalize: tuple = ("trim", "casefold", "strip_commas_currency")
    positional_offset_functions: frozenset = frozenset({"MATCH", "ROW", "COLUMN", "RANK"})
    allow_offset: bool = True

    def __post_init__(self) -> None:
        if self.numeric_rel_tol < 0 or self.numeric_abs_tol < 0:
            raise ValueError("tolerances must be >= 0")
        self.positional_offset_functions = frozenset(self.positional_offset_functions)
        self.text_normalize = tuple(self.text_normalize)

    def to_json(self) -> dict:
        return {
            "numeric_rel_tol": self.numeric_rel_tol,
            "numeric_abs_tol": self.numeric_abs_tol,
            "text_normalize": list(self.text_normalize),
            "positional_offset_functions": sorted(self.positional_offset_functions),
            "allow_offset": self.allow_offset,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EquivalencePolicy":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ValidationVerdict:
    kind: str  # exec_fail | oracle_gen_fail | oracle_exec_fail | mismatch | validated
    error: str = ""
    excel: Optional[EvalOutcome] = None
    oracle: object = None

    @property
    def is_validated(self) -> bool:
        return self.kind == "validated"


# ---------------------------------------------------------------------------
# Value equivalence
# ---------------------------------------------------------------------------

_CURRENCY_RE = re.compile(r"[$€£,]")


def _norm_text(s: str, policy: EquivalencePolicy) -> str:
    if "trim" in policy.text_normalize:
        s = s.strip()
    if "strip_commas_currency" in policy.text_normalize:
        s = _CURRENCY_RE.sub("", s)
    if "casefold" in policy.text_normalize:
        s = s.casefold()
    return s


def _as_oracle_number(v) -> Optional[float]:
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        f = float(v)
        return f if math.isfinite(f) else None
    if isinstance(v, str):
        s = _CURRENCY_RE.sub("", v.strip())
        try:
            f = float(s)
        except ValueError:
            return None
        return f if math.isfinite(f) else None
    return None


def _numbers_close(a: float, b: float, policy: EquivalencePolicy) -> bool:
    return abs(a - b) <= max(policy.numeric_abs_tol, policy.numeric_rel_tol * max(abs(a), abs(b)))


def _as_oracle_bool(v) -> Optional[bool]:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)) and v in (0, 1):
        return bool(v)
    if isinstance(v, str):
        s = v.strip().casefold()
        if s == "true":
            return True
        if s == "false":
            return False
    return None


def _scalar_equivalent(excel, oracle, policy: EquivalencePolicy, func: Optional[str]) -> bool:
    if isinstance(excel, ErrorKind):
        return False

    if isinstance(excel, bool) or isinstance(oracle, bool):
        eb = excel if isinstance(excel, bool) else _as_oracle_bool(excel)
        ob = _as_oracle_bool(oracle)
        if eb is not None and ob is not None:
            return eb == ob
        return False

    excel_num = excel if isinstance(excel, float) else (_as_oracle_number(excel) if isinstance(excel, str) else None)
    if excel is None:
        excel_num = None
    oracle_num = _as_oracle_number(oracle)

    if excel_num is not None and oracle_num is not None:
        if _numbers_close(excel_num, oracle_num, policy):
            return True
        return _offset_applies(excel_num, oracle_num, policy, func)

    excel_text = "" if excel is None else (excel if isinstance(excel, str) else None)
    oracle_text = "" if oracle is None else (str(oracle) if isinstance(oracle, (str, int, float)) else None)
    if excel_text is not None and oracle_text is not None:
        return _norm_text(excel_text, policy) == _norm_text(oracle_text, policy)
    return False


def _offset_applies(excel_num: float, oracle_num: float, policy: EquivalencePolicy, func: Optional[str]) -> bool:
    """0-indexed oracle vs 1-indexed spreadsheet: oracle + 1 = excel, only
    for configured positional functions and integral values."""
    if not policy.allow_offset or func is None:
        return False
    if func.upper() not in policy.positional_offset_functions:
        return False
    if excel_num != int(excel_num) or oracle_num != int(oracle_num):
        return False
    return int(oracle_num) + 1 == int(excel_num)


def values_equivalent(excel: EvalOutcome, oracle, policy: EquivalencePolicy, func: Optional[str] = None) -> bool:
    """Appendix-style basic equality rules between an Excel outcome and a
    JSON oracle value."""
    if isinstance(excel, Plain):
        if isinstance(oracle, list):
            if len(oracle) == 1:
                return _scalar_equivalent(excel.value, oracle[0], policy, func)
            return False
        return _scalar_equivalent(excel.value, oracle, policy, func)
    # Array outcome: compare elementwise after row-major flattening.
    if not isinstance(oracle, list):
        if len(excel.values) == 1:
            return _scalar_equivalent(excel.values[0], oracle, policy, func)
        return False
    if len(excel.values) != len(oracle):
        return False
    return all(_scalar_equivalent(e, o, policy, func) for e, o in zip(excel.values, oracle))


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def execute_filter(s: SynSample, t: Grid):
    """Parse + evaluate the sample formula; errors and parse failures are
    ExecFail verdicts, success stores the outcome back on the sample."""
    try:
        ast = parse_formula(s.formula)
    except FormulaSyntaxError as exc:
        return ValidationVerdict(kind="exec_fail", error=f"parse: {exc}")
    outcome = evaluate(ast, t)
    if isinstance(outcome, Plain) and isinstance(outcome.value, ErrorKind):
        return ValidationVerdict(kind="exec_fail", error=outcome.value.name)
    s.executed = outcome
    return outcome


def generate_oracle_solution(s: SynSample, t: Grid, client, *, max_rows: int = 50) -> str:
    """Teacher call for the parallel dataframe solution; returns code text."""
    prompt = tio.render_prompt(
        TEMPLATES["parallel_solution"],
        {"table": render_markdown(t, max_rows), "query": s.query},
    )
    resp = client.complete(prompt, temperature=0.0)
    return tio.extract_fenced_block(resp, "python")


def cross_validate(s: SynSample, t: Grid, code: str, runner, policy: EquivalencePolicy) -> ValidationVerdict:
    """Run the oracle code against the table and judge value equivalence."""
    resp = runner.run(grid_to_json(t), code)
    status = resp.get("status")
    if status != "ok":
        return ValidationVerdict(kind="oracle_exec_fail", error=str(status))
    oracle_value = resp.get("value")
    if values_equivalent(s.executed, oracle_value, policy, func=s.func):
        return ValidationVerdict(kind="validated", excel=s.executed, oracle=oracle_value)
    return ValidationVerdict(kind="mismatch", excel=s.executed, oracle=oracle_value)


def validate_batch(samples, tables, client, runner, policy: EquivalencePolicy):
    """execute_filter -> oracle generation -> cross-validate, per sample.

    `tables` maps table_id -> Grid (a TableStore works). Returns
    (validated samples, report dict). ExecFail samples never reach the
    runner."""
    validated = []
    report = {
        "attempted": 0,
        "exec_fail": 0,
        "oracle_gen_fail": 0,
        "oracle_exec_fail": 0,
        "mismatch": 0,
        "validated": 0,
        "missing_table": 0,
        "mismatches": [],
        "policy": policy.to_json(),
    }
    for s in samples:
        report["attempted"] += 1
        try:
            t = tables[s.table_id] if not hasattr(tables, "load") else tables.load(s.table_id)
        except KeyError:
            report["missing_table"] += 1
            continue
        verdict = execute_filter(s, t)
        if isinstance(verdict, ValidationVerdict):
            report["exec_fail"] += 1
            continue
        try:
            code = generate_oracle_solution(s, t, client)
        except tio.NoBlockFoundError:
            report["oracle_gen_fail"] += 1
            continue
        verdict = cross_validate(s, t, code, runner, policy)
        report[verdict.kind] += 1
        if verdict.kind == "validated":
            validated.append(s)
        elif verdict.kind == "mismatch":
            report["mismatches"].append(
                {
                    "sample_id": s.sample_id,
                    "func": s.func,
                    "formula": s.formula,
                    "answer": s.answer,
                    "excel": _outcome_json(s.executed),
                    "oracle": verdict.oracle,
                }
            )
    attempted = report["attempted"]
    report["keep_rate"] = (report["validated"] / attempted) if attempted else 0.0
    return validated, report


def _outcome_json(outcome: Optional[EvalOutcome]):
    from .engine import outcome_to_json

    return outcome_to_json(outcome) if outcome is not None else None


# ---------------------------------------------------------------------------
# Oracle runners
# ---------------------------------------------------------------------------


class StubRunner:
    """In-process protocol stand-in for tests: fn(table_json, code) -> dict."""

    def __init__(self, fn) -> None:
        self._fn = fn
        self.call_count = 0

    def run(self, table_json: dict, code: str, timeout_ms: int = 5000) -> dict:
        self.call_count += 1
        return self._fn(table_json, code)


class CannedRunner:
    """Replays canned runner responses keyed by sha256 of the code text."""

    def __init__(self, path) -> None:
        self._responses = {}
        self.call_count = 0
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    self._responses[rec["code_sha256"]] = rec

    @staticmethod
    def code_key(code: str) -> str:
        return hashlib.sha256(code.encode("utf-8")).hexdigest()

    def run(self, table_json: dict, code: str, timeout_ms: int = 5000) -> dict:
        self.call_count += 1
        rec = self._responses.get(self.code_key(code))
        if rec is None:
            return {"status": "error", "value": None, "error_msg": "no canned response"}
        return {"status": rec["status"], "value": rec.get("value"), "error_msg": rec.get("error_msg", "")}


class SubprocessRunner:
    """Client for a runner subprocess speaking the line-delimited JSON
    protocol (banner line `{"protocol": 1}`, then one response per request).

    The runner enforces its own timeout; this side adds a hard backstop at
    2x the requested limit plus grace and treats a silent runner as dead."""

    def __init__(self, cmd, default_timeout_ms: int = 5000, grace_s: float = 5.0) -> None:
        self.cmd = list(cmd)
        self.default_timeout_ms = default_timeout_ms
        self.grace_s = grace_s
        self._proc = None
        self._next_id = 0
        self.call_count = 0

    def start(self) -> None:
        self._proc = subprocess.Popen(
            self.cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        banner = self._read_line(10.0)
        info = json.loads(banner) if banner else {}
        if info.get("protocol") != 1:
            self.close()
            raise RunnerDeadError(f"unexpected runner banner: {banner!r}")

    def _read_line(self, timeout_s: float) -> str:
        sel = selectors.DefaultSelector()
        sel.register(self._proc.stdout, selectors.EVENT_READ)
        try:
            if sel.select(timeout=timeout_s):
                return self._proc.stdout.readline()
            return ""
        finally:
            sel.close()

    def run(self, table_json: dict, code: str, timeout_ms: Optional[int] = None) -> dict:
        if self._proc is None:
            self.start()
        if self._proc.poll() is not None:
            raise RunnerDeadError("runner process exited")
        timeout_ms = timeout_ms or self.default_timeout_ms
        self._next_id += 1
        self.call_count += 1
        req = {"id": str(self._next_id), "table": table_json, "code": code, "timeout_ms": timeout_ms}
        try:
            self._proc.stdin.write(json.dumps(req, ensure_ascii=False) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise RunnerDeadError(str(exc)) from exc
        deadline = 2 * timeout_ms / 1000.0 + self.grace_s
        line = self._read_line(deadline)
        if not line:
            self.close()
            raise RunnerDeadError("runner did not respond within the hard deadline")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise RunnerDeadError(f"bad runner response: {line!r}") from exc

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
            except OSError:
                pass
            self._proc.wait()
            self._proc = None
