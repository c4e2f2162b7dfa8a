"""Table-QA tasks recast to the spreadsheet domain, RAG prompt assembly,
execution-match scoring, dataset export, and paired improvement analysis.

Report metadata declares the answer-normalization ladder (numeric parse
with commas/currency stripped and gold-side-only percent scaling, then
casefolded trimmed string equality) so scores are comparable across runs.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from . import teacher as tio
from .engine import EvalOutcome, Plain, evaluate, outcome_to_json
from .formula import FormulaSyntaxError, extract_functions, is_single_function, parse_formula
from .genpipe import DocQaExample, TutorialDoc
from .grid import ErrorKind, Grid, cell_to_text, grid_from_json, grid_to_json, render_markdown
from .libprep import FunctionSpec
from .prompts import TEMPLATES

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "1"

NORMALIZATION_NOTE = (
    "numeric parse with rel tol 1e-6 (commas/currency stripped; trailing % divides "
    "the gold side only); otherwise casefolded, trimmed string equality; arrays "
    "match multi-gold sets as order-insensitive multisets; errors never match"
)


class MissingOracleError(Exception):
    pass


class IdSetMismatchError(Exception):
    pass


class SplitTooLargeError(Exception):
    pass


class RagMode(Enum):
    BASE_ONLY = "base"
    ALL = "rag-all"
    ORACLE = "rag-oracle"


@dataclass
class QATask:
    id: str
    grid: Grid
    question: str
    gold_answers: list
    context_paragraphs: list = field(default_factory=list)
    oracle_formula: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "table": grid_to_json(self.grid),
            "question": self.question,
            "answers": list(self.gold_answers),
            "paragraphs": list(self.context_paragraphs),
            "oracle_formula": self.oracle_formula,
        }

    @classmethod
    def from_json(cls, data: dict) -> "QATask":
        return cls(
            id=str(data["id"]),
            grid=grid_from_json(data["table"], source_id=str(data["id"])),
            question=data["question"],
            gold_answers=[str(a) for a in data["answers"]],
            context_paragraphs=[str(p) for p in data.get("paragraphs", [])],
            oracle_formula=data.get("oracle_formula"),
        )


@dataclass
class EvalRecord:
    task_id: str
    raw_generation: str
    formula: Optional[str] = None
    executed: Optional[EvalOutcome] = None
    matched: bool = False
    failure_stage: Optional[str] = None  # no_formula | parse | execute | mismatch
    single_function: Optional[bool] = None
    used_fallback: bool = False

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "raw_generation": self.raw_generation,
            "formula": self.formula,
            "executed": outcome_to_json(self.executed) if self.executed is not None else None,
            "matched": self.matched,
            "failure_stage": self.failure_stage,
            "single_function": self.single_function,
            "used_fallback": self.used_fallback,
        }


@dataclass
class EvalReport:
    records: list
    em_percent: float
    single_function_percent: float
    rag_mode: str
    model_id: str

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "normalization": NORMALIZATION_NOTE,
            "percent_note": "gold-side-only percent scaling",
            "rag_mode": self.rag_mode,
            "model_id": self.model_id,
            "em_percent": self.em_percent,
            "single_function_percent": self.single_function_percent,
            "records": [r.to_json() for r in self.records],
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvalReport":
        records = []
        for r in data["records"]:
            records.append(
                EvalRecord(
                    task_id=r["task_id"],
                    raw_generation=r.get("raw_generation", ""),
                    formula=r.get("formula"),
                    matched=r["matched"],
                    failure_stage=r.get("failure_stage"),
                    single_function=r.get("single_function"),
                    used_fallback=r.get("used_fallback", False),
                )
            )
        return cls(
            records=records,
            em_percent=data["em_percent"],
            single_function_percent=data["single_function_percent"],
            rag_mode=data.get("rag_mode", "base"),
            model_id=data.get("model_id", ""),
        )


@dataclass
class HyperParams:
    """Training hyperparameters, fixed to the published values."""

    batch_size: int = 4
    learning_rate: float = 5e-5
    lora_r: int = 64
    lora_alpha: int = 1
    max_epochs: int = 6
    early_stop_patience: int = 3
    lr_scheduler: str = "cosine"
    warmup_ratio: float = 0.5


HYPERPARAM_SEARCH_RANGES = {
    "batch_size": [2, 4, 8, 16, 32],
    "learning_rate": [1e-5, 5e-5, 1e-4, 5e-4],
    "lora_r": [32, 64, 128],
    "lr_scheduler": ["linear", "cosine"],
}


def _percent(numerator: int, denominator: int) -> float:
    """100*n/d, half-up to two decimals."""
    if denominator == 0:
        return 0.0
    ratio = Decimal(str(100.0 * numerator / denominator))
    return float(ratio.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# Dataset recasting and oracle building
# ---------------------------------------------------------------------------


def recast_dataset(records: Iterable[dict], format: str) -> list:
    """Ingest wikitq/tatqa-format records into QATasks; bad records are
    logged and skipped."""
    if format not in ("wikitq", "tatqa"):
        raise ValueError(f"unknown dataset format: {format}")
    tasks = []
    for i, rec in enumerate(records):
        try:
            task_id = str(rec.get("id", i))
            answers = [str(a) for a in rec["answers"]]
            if not answers:
                raise ValueError("empty answer list")
            grid = grid_from_json(rec["table"], source_id=task_id)
            paragraphs = [str(p) for p in rec.get("paragraphs", [])] if format == "tatqa" else []
            tasks.append(
                QATask(
                    id=task_id,
                    grid=grid,
                    question=str(rec["question"]),
                    gold_answers=answers,
                    context_paragraphs=paragraphs,
                )
            )
        except Exception as exc:
            log.warning("skipping record %d: %s", i, exc)
    return tasks


def build_oracle_solutions(tasks: list, client, *, max_rows: int = 50):
    """Generate a formula per task with a strong model and keep only tasks
    whose execution matches the gold answer. Returns (kept, report)."""
    kept = []
    report = {"attempted": 0, "retained": 0, "generation_failures": 0, "wrong_value": 0}
    for task in tasks:
        report["attempted"] += 1
        prompt = build_eval_prompt(task, RagMode.BASE_ONLY, [], template_id="oracle_solution")
        try:
            resp = client.complete(prompt, temperature=0.0)
            formula = _extract_formula(resp)
        except tio.TeacherError:
            formula = None
        if formula is None:
            report["generation_failures"] += 1
            continue
        try:
            outcome = evaluate(parse_formula(formula), task.grid)
        except FormulaSyntaxError:
            report["generation_failures"] += 1
            continue
        if answers_match(outcome, task.gold_answers):
            task.oracle_formula = formula
            kept.append(task)
            report["retained"] += 1
        else:
            report["wrong_value"] += 1
    return kept, report


# ---------------------------------------------------------------------------
# Prompt assembly
# ---------------------------------------------------------------------------


def signature_block(spec: FunctionSpec) -> str:
    return f"- `{spec.signature}`: {spec.summary}"


def _signatures_section(specs: list) -> str:
    if not specs:
        return ""
    lines = "\n".join(signature_block(s) for s in specs)
    return f"## Function Reference:\n{lines}\n\n"


def build_eval_prompt(task: QATask, mode: RagMode, library: list, *, max_rows: int = 50, template_id: str = "eval_task") -> str:
    """Tutorial-shaped prompt; RAG modes prepend function signatures."""
    if mode == RagMode.ALL:
        specs = list(library)
    elif mode == RagMode.ORACLE:
        if not task.oracle_formula:
            raise MissingOracleError(task.id)
        names = extract_functions(parse_formula(task.oracle_formula))
        specs = [s for s in library if s.name in names]
    else:
        specs = []

    context = ""
    if task.context_paragraphs:
        context = "## Context:\n" + "\n\n".join(task.context_paragraphs) + "\n\n"

    return tio.render_prompt(
        TEMPLATES[template_id],
        {
            "signatures": _signatures_section(specs),
            "context": context,
            "table": render_markdown(task.grid, max_rows),
            "query": task.question,
        },
    )


# ---------------------------------------------------------------------------
# Answer matching and scoring
# ---------------------------------------------------------------------------

_GOLD_CURRENCY_RE = re.compile(r"[$€£,]")


def _parse_gold_number(text: str):
    """(value, had_percent) or None."""
    s = _GOLD_CURRENCY_RE.sub("", text.strip())
    had_percent = s.endswith("%")
    if had_percent:
        s = s[:-1]
    try:
        v = float(s)
    except ValueError:
        return None
    if not math.isfinite(v):
        return None
    return v, had_percent


def _scalar_answer_match(value, gold: str) -> bool:
    if isinstance(value, ErrorKind):
        return False
    parsed = _parse_gold_number(gold)
    if parsed is not None:
        gold_num, had_percent = parsed
        value_num = None
        if isinstance(value, bool):
            value_num = None
        elif isinstance(value, float):
            value_num = value
        elif isinstance(value, str):
            p = _parse_gold_number(value)
            if p is not None and not p[1]:
                value_num = p[0]
            elif p is not None:
                value_num = p[0] / 100.0
        elif value is None:
            value_num = None
        if value_num is not None:
            candidates = [gold_num]
            if had_percent:
                candidates.append(gold_num / 100.0)
            return any(math.isclose(value_num, c, rel_tol=1e-6) or value_num == c for c in candidates)
    text = cell_to_text(value)
    return text.strip().casefold() == gold.strip().casefold()


def answers_match(executed: EvalOutcome, gold: list) -> bool:
    """Execution-match predicate between an outcome and the gold answers."""
    if isinstance(executed, Plain):
        values = [executed.value]
    else:
        values = list(executed.values)
    if len(gold) == 1 and len(values) == 1:
        return _scalar_answer_match(values[0], gold[0])
    if len(values) != len(gold):
        return False
    # Order-insensitive multiset match.
    remaining = list(values)
    for g in gold:
        for i, v in enumerate(remaining):
            if _scalar_answer_match(v, g):
                del remaining[i]
                break
        else:
            return False
    return True


def _extract_formula(text: str) -> Optional[str]:
    """Fenced ```excel block, else the last line starting with '='."""
    try:
        block = tio.extract_fenced_block(text, "excel")
        for line in block.splitlines():
            if line.strip().startswith("="):
                return line.strip()
        if block.strip().startswith("="):
            return block.strip()
    except tio.NoBlockFoundError:
        pass
    for line in reversed(text.splitlines()):
        if line.strip().startswith("="):
            return line.strip()
    return None


class OfflineStudent:
    """Student stand-in reading pre-generated completions keyed by task id."""

    def __init__(self, path) -> None:
        self.completions = {}
        self.model = f"offline:{Path(path).name}"
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    self.completions[str(rec["id"])] = rec["completion"]

    def generate(self, task_id: str, prompt: str) -> Optional[str]:
        return self.completions.get(task_id)


class ChatStudent:
    """Student reached over the chat wire protocol."""

    def __init__(self, client) -> None:
        self.client = client
        self.model = client.model

    def generate(self, task_id: str, prompt: str) -> Optional[str]:
        try:
            return self.client.complete(prompt, temperature=0.0)
        except tio.TeacherError as exc:
            log.warning("student transport failure on %s: %s", task_id, exc)
            return None


def run_eval(tasks: list, student, mode: RagMode, library: list, *, max_rows: int = 50, workers: int = 1) -> EvalReport:
    """Score a student by program execution match over the tasks.

    Generation calls run in parallel up to the worker bound; scoring is an
    order-preserving sequential reduction."""
    prompts = [build_eval_prompt(task, mode, library, max_rows=max_rows) for task in tasks]
    if workers > 1 and len(tasks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            raws = list(pool.map(lambda pair: student.generate(pair[0].id, pair[1]), zip(tasks, prompts)))
    else:
        raws = [student.generate(task.id, prompt) for task, prompt in zip(tasks, prompts)]

    records = []
    for task, raw in zip(tasks, raws):
        rec = EvalRecord(task_id=task.id, raw_generation=raw or "")
        records.append(rec)
        if raw is None:
            rec.failure_stage = "no_formula"
            continue
        formula = _extract_formula(raw)
        if formula is None:
            rec.failure_stage = "no_formula"
            continue
        rec.formula = formula
        try:
            ast = parse_formula(formula)
        except FormulaSyntaxError:
            rec.failure_stage = "parse"
            continue
        rec.single_function = is_single_function(ast)
        outcome = evaluate(ast, task.grid)
        rec.executed = outcome
        if isinstance(outcome, Plain) and isinstance(outcome.value, ErrorKind):
            rec.failure_stage = "execute"
            continue
        if answers_match(outcome, task.gold_answers):
            rec.matched = True
        else:
            rec.failure_stage = "mismatch"

    matched = sum(1 for r in records if r.matched)
    with_formula = [r for r in records if r.single_function is not None]
    single = sum(1 for r in with_formula if r.single_function)
    return EvalReport(
        records=records,
        em_percent=_percent(matched, len(records)),
        single_function_percent=_percent(single, len(with_formula)),
        rag_mode=mode.value,
        model_id=getattr(student, "model", ""),
    )


# ---------------------------------------------------------------------------
# Dataset export
# ---------------------------------------------------------------------------

_FORMULA_MARKER = "## Formula:\n"


def tutorial_to_pair(doc: TutorialDoc) -> dict:
    idx = doc.text.rindex(_FORMULA_MARKER) + len(_FORMULA_MARKER)
    return {
        "prompt": doc.text[:idx],
        "completion": doc.text[idx:],
        "template_version": doc.template_version,
    }


def doc_qa_to_pair(example: DocQaExample, *, max_rows: int = 50) -> dict:
    parts = []
    if example.context_table is not None:
        parts.append("## Table:\n" + render_markdown(example.context_table, max_rows) + "\n")
    parts.append(example.description)
    prompt = "\n".join(parts) + "\n\n" + _FORMULA_MARKER
    return {"prompt": prompt, "completion": f"```excel\n{example.formula}\n```", "output": example.expected_output}


def export_sft_dataset(
    tutorials: list,
    heldout_tasks: list,
    split_spec: dict,
    out_dir,
    *,
    doc_qa_examples: Optional[list] = None,
    raw_docs: Optional[list] = None,
) -> dict:
    """Write train/heldout/doc-qa/raw-doc JSONL files; deterministic for a
    fixed seed. Returns {filename: line count}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    heldout_n = int(split_spec.get("heldout", 0))
    seed = split_spec.get("seed", 0)
    if heldout_n > len(heldout_tasks):
        raise SplitTooLargeError(f"heldout {heldout_n} > available {len(heldout_tasks)}")
    rng = random.Random(seed)
    heldout = rng.sample(list(heldout_tasks), heldout_n) if heldout_n else []

    counts = {}

    def write(name: str, rows: list) -> None:
        path = out_dir / name
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        counts[name] = len(rows)

    write("train.jsonl", [tutorial_to_pair(doc) for doc in tutorials])
    write("heldout.jsonl", [t.to_json() for t in heldout])
    write("doc_qa_train.jsonl", [doc_qa_to_pair(e) for e in (doc_qa_examples or [])])
    write("raw_docs_train.jsonl", [{"name": s.name, "text": s.doc_text} for s in (raw_docs or [])])
    return counts


def export_hyperparams(path, overrides: Optional[dict] = None) -> dict:
    """Write the training hyperparameters plus their search ranges."""
    params = HyperParams()
    overridden = []
    if overrides:
        for key, value in overrides.items():
            if not hasattr(params, key):
                raise ValueError(f"unknown hyperparameter: {key}")
            setattr(params, key, value)
            overridden.append(key)
    payload = {
        "hyperparameters": {
            "batch_size": params.batch_size,
            "learning_rate": params.learning_rate,
            "lora_r": params.lora_r,
            "lora_alpha": params.lora_alpha,
            "max_epochs": params.max_epochs,
            "early_stop_patience": params.early_stop_patience,
            "lr_scheduler": params.lr_scheduler,
            "warmup_ratio": params.warmup_ratio,
        },
        "search_ranges": HYPERPARAM_SEARCH_RANGES,
        "overridden": sorted(overridden),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


# ---------------------------------------------------------------------------
# Paired analysis
# ---------------------------------------------------------------------------


def _record_functions(record: EvalRecord):
    if not record.formula:
        return None
    try:
        ast = parse_formula(record.formula)
    except FormulaSyntaxError:
        return None
    return extract_functions(ast), is_single_function(ast)


def paired_improvements(base: EvalReport, ft: EvalReport) -> dict:
    """Improvements/regressions between two runs over the same task ids,
    with the same-single-function subsets."""
    base_by_id = {r.task_id: r for r in base.records}
    ft_by_id = {r.task_id: r for r in ft.records}
    if set(base_by_id) != set(ft_by_id):
        raise IdSetMismatchError("base and ft reports cover different task ids")

    def bucket(ids: list) -> dict:
        same_single = 0
        for task_id in ids:
            a = _record_functions(base_by_id[task_id])
            b = _record_functions(ft_by_id[task_id])
            if a is None or b is None:
                continue
            if a[0] == b[0] and a[1] and b[1]:
                same_single += 1
        total = len(ids)
        return {
            "total": total,
            "same_single_function": same_single,
            "samples": f"{same_single}/{total}",
            "percent": _percent(same_single, total),
        }

    improvements = [tid for tid in base_by_id if not base_by_id[tid].matched and ft_by_id[tid].matched]
    regressions = [tid for tid in base_by_id if base_by_id[tid].matched and not ft_by_id[tid].matched]
    return {
        "improvements": bucket(sorted(improvements)),
        "regressions": bucket(sorted(regressions)),
    }
