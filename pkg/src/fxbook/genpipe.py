"""Teacher-driven sample generation: table assignment, argument-rotation
tutorial sets, compiled training documents, and doc-to-QA reformatting."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from . import teacher as tio
from .engine import EvalOutcome, outcome_from_json, outcome_to_json
from .formula import FormulaSyntaxError, parse_formula
from .grid import Grid, grid_from_json, ingest_table, render_markdown
from .libprep import FunctionSpec
from .prompts import TEMPLATES

log = logging.getLogger(__name__)

TUTORIAL_TEMPLATE_VERSION = "1"

REQUIRED_SAMPLE_FIELDS = (
    "func",
    "demo_argument",
    "query",
    "func_explanation",
    "step_by_step",
    "answer",
    "formula",
    "structure",
)


class NotAListError(Exception):
    pass


class GenerationFailure(Exception):
    """Per-function generation failure; batches record these and continue."""


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class SynSample:
    """One generated tutorial sample (question, explanation, formula)."""

    func: str
    demo_argument: str
    query: str
    func_explanation: str
    step_by_step: list
    answer: str
    formula: str
    structure: list
    table_id: str = ""
    batch: int = 0
    executed: Optional[EvalOutcome] = None

    @property
    def sample_id(self) -> str:
        blob = json.dumps(
            [self.func, self.table_id, self.batch, self.demo_argument, self.query, self.formula],
            ensure_ascii=False,
        )
        return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:12]

    def to_json(self) -> dict:
        data = {
            "func": self.func,
            "demo_argument": self.demo_argument,
            "query": self.query,
            "func_explanation": self.func_explanation,
            "step_by_step": list(self.step_by_step),
            "answer": self.answer,
            "formula": self.formula,
            "structure": list(self.structure),
            "table_id": self.table_id,
            "batch": self.batch,
        }
        if self.executed is not None:
            data["executed"] = outcome_to_json(self.executed)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "SynSample":
        executed = data.get("executed")
        return cls(
            func=data["func"],
            demo_argument=data["demo_argument"],
            query=data["query"],
            func_explanation=data["func_explanation"],
            step_by_step=list(data["step_by_step"]),
            answer=data["answer"],
            formula=data["formula"],
            structure=list(data["structure"]),
            table_id=data.get("table_id", ""),
            batch=data.get("batch", 0),
            executed=outcome_from_json(executed) if executed else None,
        )


@dataclass
class SampleSet:
    func: str
    samples: list = field(default_factory=list)


@dataclass
class TutorialDoc:
    text: str
    sample_ref: str
    template_version: str = TUTORIAL_TEMPLATE_VERSION


@dataclass
class DocQaExample:
    description: str
    context_table: Optional[Grid]
    formula: str
    expected_output: str

    def to_json(self) -> dict:
        from .grid import grid_to_json

        return {
            "description": self.description,
            "context_table": grid_to_json(self.context_table) if self.context_table else None,
            "formula": self.formula,
            "expected_output": self.expected_output,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DocQaExample":
        context = data.get("context_table")
        return cls(
            description=data["description"],
            context_table=grid_from_json(context) if context else None,
            formula=data["formula"],
            expected_output=data["expected_output"],
        )


# ---------------------------------------------------------------------------
# Teacher-output parsing
# ---------------------------------------------------------------------------


def parse_sample_set(json_text: str, expected_func: Optional[str] = None):
    """Parse the extracted JSON block into a SampleSet.

    Elements missing a required field are rejected individually; unknown
    extra fields are ignored. Returns (SampleSet, reject records)."""
    try:
        data = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise NotAListError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise NotAListError(f"expected a JSON list, got {type(data).__name__}")

    rejects = []
    samples = []
    func = expected_func or ""
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            rejects.append({"index": i, "reason": "element is not an object"})
            continue
        missing = [k for k in REQUIRED_SAMPLE_FIELDS if k not in item]
        if missing:
            rejects.append({"index": i, "reason": f"missing fields: {missing}"})
            continue
        steps = item["step_by_step"]
        structure = item["structure"]
        if not isinstance(steps, list) or not isinstance(structure, list):
            rejects.append({"index": i, "reason": "step_by_step/structure must be lists"})
            continue
        item_func = str(item["func"])
        if not func:
            func = item_func
        elif item_func.upper() != func.upper():
            rejects.append({"index": i, "reason": f"func {item_func!r} does not match {func!r}"})
            continue
        samples.append(
            SynSample(
                func=item_func,
                demo_argument=str(item["demo_argument"]),
                query=str(item["query"]),
                func_explanation=str(item["func_explanation"]),
                step_by_step=[str(s) for s in steps],
                answer=str(item["answer"]),
                formula=str(item["formula"]),
                structure=[str(s) for s in structure],
            )
        )
    return SampleSet(func=func, samples=samples), rejects


# ---------------------------------------------------------------------------
# Table assignment and sample generation
# ---------------------------------------------------------------------------


def _number_tables(pool: list, max_rows: int) -> str:
    parts = []
    for i, grid in enumerate(pool, start=1):
        parts.append(f"Table {i}:\n{render_markdown(grid, max_rows)}")
    return "\n\n".join(parts)


def assign_table(f: FunctionSpec, pool: list, client, *, max_rows: int = 50) -> Grid:
    """Ask the teacher to pick the best demo table; out-of-range choices get
    one reprompt and then fall back to the first candidate."""
    prompt = tio.render_prompt(
        TEMPLATES["table_choice"],
        {"func": f.name, "docs": f.doc_text, "tables": _number_tables(pool, max_rows)},
    )
    for attempt in range(2):
        resp = client.complete(prompt)
        try:
            choice = tio.parse_last_line_integer(resp)
        except tio.NoIntegerFoundError:
            choice = -1
        if 1 <= choice <= len(pool):
            return pool[choice - 1]
        log.warning("table choice %r out of range for %s (attempt %d)", choice, f.name, attempt + 1)
    log.warning("falling back to candidate 1 for %s", f.name)
    return pool[0]


def generate_samples(f: FunctionSpec, t: Grid, client, *, max_rows: int = 50):
    """One teacher call producing the argument-rotation sample set for f on t.

    Returns (SampleSet, reject records); parsing failures raise and are
    recorded by the batch driver."""
    prompt = tio.render_prompt(
        TEMPLATES["example_gen"],
        {"func": f.name, "docs": f.doc_text, "table": render_markdown(t, max_rows)},
    )
    resp = client.complete(prompt)
    block = tio.extract_fenced_block(resp, "json")
    sample_set, rejects = parse_sample_set(block, expected_func=f.name)

    limit = len(f.args) + 1
    if len(sample_set.samples) > limit:
        rejects.append(
            {"index": limit, "reason": f"truncated over-generation: {len(sample_set.samples)} > {limit}"}
        )
        sample_set.samples = sample_set.samples[:limit]

    kept = []
    for s in sample_set.samples:
        try:
            parse_formula(s.formula)
        except FormulaSyntaxError as exc:
            rejects.append({"index": None, "reason": f"unparseable formula {s.formula!r}: {exc}"})
            continue
        s.table_id = t.source_id
        kept.append(s)
    sample_set.samples = kept
    return sample_set, rejects


# ---------------------------------------------------------------------------
# Tutorial compilation
# ---------------------------------------------------------------------------

TUTORIAL_HEADER = """## General Instruction:
You are a helpful assistant to a data scientist who is learning to use Excel.

Given a table of data and a user query, write a step-by-step explanation of how to use Excel to solve the query using the table. Produce a final Excel formula that can be executed to solve the query.
"""


def compile_tutorial(s: SynSample, t: Grid, *, max_rows: int = 50) -> TutorialDoc:
    """Deterministic template fill producing the training document."""
    reasoning = s.func_explanation
    if s.step_by_step:
        reasoning += "\n\n" + "\n".join(s.step_by_step)
    text = (
        TUTORIAL_HEADER
        + "\n## Table:\n"
        + render_markdown(t, max_rows)
        + "\n\n## Query:\n"
        + s.query
        + "\n\n## Reasoning:\n"
        + reasoning
        + "\n\n## Formula:\n```excel\n"
        + s.formula
        + "\n```\n"
    )
    return TutorialDoc(text=text, sample_ref=s.sample_id)


# ---------------------------------------------------------------------------
# Doc-to-QA reformatting
# ---------------------------------------------------------------------------

_BLOCK_SEPARATOR_RE = re.compile(r"^-{3,}\s*$", re.MULTILINE)


def reformat_docs_qa(f: FunctionSpec, client):
    """Restructure a documentation page's worked examples into QA records.

    Returns (examples, reject records)."""
    prompt = tio.render_prompt(TEMPLATES["doc_qa"], {"function_docs": f.doc_text})
    resp = client.complete(prompt)
    if resp.strip() == "[No examples provided]":
        return [], []

    examples = []
    rejects = []
    for i, raw_block in enumerate(_BLOCK_SEPARATOR_RE.split(resp)):
        block = raw_block.strip()
        if not block:
            continue
        try:
            formula = tio.extract_fenced_block(block, "excel")
            parse_formula(formula)
        except (tio.NoBlockFoundError, FormulaSyntaxError) as exc:
            rejects.append({"index": i, "reason": str(exc)})
            continue
        output = None
        for line in block.splitlines():
            if line.strip().startswith(">>>"):
                output = line.strip()[3:].strip()
        if output is None:
            rejects.append({"index": i, "reason": "missing >>> output line"})
            continue

        table_lines = []
        prose_lines = []
        for line in block.splitlines():
            stripped = line.strip()
            if stripped.startswith("```"):
                break
            if stripped.startswith("|"):
                table_lines.append(line)
            elif stripped:
                prose_lines.append(stripped)
        context = None
        if table_lines:
            try:
                context = ingest_table("\n".join(table_lines), "markdown", source_id=f"{f.name}-docqa-{i}")
            except Exception as exc:
                rejects.append({"index": i, "reason": f"bad context table: {exc}"})
                continue
        examples.append(
            DocQaExample(
                description="\n".join(prose_lines),
                context_table=context,
                formula=formula,
                expected_output=output,
            )
        )
    return examples, rejects


# ---------------------------------------------------------------------------
# Batch driver
# ---------------------------------------------------------------------------


class TableStore:
    """Directory of grid files (.json grid-JSON, .csv/.tsv/.md text tables)."""

    def __init__(self, directory) -> None:
        self.directory = Path(directory)
        paths = sorted(
            p for p in self.directory.iterdir() if p.suffix in (".json", ".csv", ".tsv", ".md")
        )
        if not paths:
            raise FileNotFoundError(f"no table files in {self.directory}")
        self._paths = {p.name: p for p in paths}

    def ids(self) -> list:
        return list(self._paths)

    def load(self, table_id: str) -> Grid:
        path = self._paths[table_id]
        if path.suffix == ".json":
            return grid_from_json(json.loads(path.read_text()), source_id=table_id)
        fmt = {".csv": "csv", ".tsv": "tsv", ".md": "markdown"}[path.suffix]
        return ingest_table(path.read_text(), fmt, source_id=table_id)

    def __len__(self) -> int:
        return len(self._paths)


def draw_pool(store: TableStore, seed, batch: int, func_name: str, pool_size: int) -> list:
    """Deterministic per-(seed, batch, function) pool draw; stable under
    resume because it never shares RNG state across functions."""
    ids = store.ids()
    if len(ids) < pool_size:
        raise RuntimeError(f"table store exhausted: {len(ids)} tables < pool size {pool_size}")
    rng = random.Random(f"{seed}:{batch}:{func_name}")
    return [store.load(tid) for tid in rng.sample(ids, pool_size)]


def run_generation_batch(
    library: list,
    table_store: TableStore,
    client,
    batches: int,
    *,
    seed=0,
    pool_size: int = 10,
    max_rows: int = 50,
    checkpoint_path=None,
    on_sample=None,
):
    """Steps II-III over every (batch, function) pair.

    Yields SynSample records; failures are recorded per function and the
    batch continues. A checkpoint file keyed by (batch, func) makes the run
    resumable without re-querying completed pairs."""
    done = set()
    failures = []
    if checkpoint_path and Path(checkpoint_path).exists():
        state = json.loads(Path(checkpoint_path).read_text())
        done = set(tuple(x) for x in state.get("done", []))
        failures = state.get("failures", [])

    def save_checkpoint():
        if checkpoint_path:
            Path(checkpoint_path).write_text(
                json.dumps({"done": sorted(done), "failures": failures}, ensure_ascii=False)
            )

    for batch in range(batches):
        for f in library:
            key = (batch, f.name)
            if key in done:
                continue
            try:
                pool = draw_pool(table_store, seed, batch, f.name, pool_size)
                chosen = assign_table(f, pool, client, max_rows=max_rows)
                sample_set, rejects = generate_samples(f, chosen, client, max_rows=max_rows)
            except (tio.NoBlockFoundError, NotAListError, GenerationFailure) as exc:
                # Bad teacher output is a per-function failure; transport and
                # credential errors propagate and abort the batch.
                failures.append({"batch": batch, "func": f.name, "reason": str(exc)})
                done.add(key)
                save_checkpoint()
                continue
            for reject in rejects:
                failures.append({"batch": batch, "func": f.name, "reject": reject})
            for s in sample_set.samples:
                s.batch = batch
                if on_sample:
                    on_sample(s)
                yield s
            done.add(key)
            save_checkpoint()


def write_samples_jsonl(samples: Iterable[SynSample], path) -> int:
    count = 0
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    return count


def read_samples_jsonl(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(SynSample.from_json(json.loads(line)))
    return out
