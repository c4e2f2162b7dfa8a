"""Function-usage estimation from a formula corpus, top-K selection, and
documentation loading."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .formula import FormulaSyntaxError, iter_call_names, parse_formula


class MissingDocError(Exception):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"no documentation file for {name}")


class MalformedSignatureError(Exception):
    def __init__(self, name: str, detail: str = "") -> None:
        self.name = name
        super().__init__(f"cannot parse signature for {name}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class ArgSpec:
    name: str
    required: bool


@dataclass
class FunctionSpec:
    """One library function with its documentation and argument schema."""

    name: str
    signature: str
    args: list
    summary: str
    doc_text: str

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "signature": self.signature,
            "args": [{"name": a.name, "required": a.required} for a in self.args],
            "summary": self.summary,
            "doc_text": self.doc_text,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FunctionSpec":
        return cls(
            name=data["name"],
            signature=data["signature"],
            args=[ArgSpec(a["name"], a["required"]) for a in data["args"]],
            summary=data["summary"],
            doc_text=data["doc_text"],
        )


@dataclass
class UsageStats:
    counts: dict = field(default_factory=dict)
    total_formulas: int = 0
    skipped: int = 0


def count_function_usage(corpus: Iterable[str]) -> UsageStats:
    """Count Call nodes per function name across parseable formulas.

    Nested calls count once per occurrence; unparseable formulas go to the
    skip tally."""
    counts: Counter = Counter()
    total = 0
    skipped = 0
    for line in corpus:
        text = line.strip()
        if not text:
            continue
        try:
            ast = parse_formula(text)
        except FormulaSyntaxError:
            skipped += 1
            continue
        total += 1
        counts.update(iter_call_names(ast))
    return UsageStats(counts=dict(counts), total_formulas=total, skipped=skipped)


def select_top_k(stats: UsageStats, k: int) -> list:
    """Names ordered by descending count, ties alphabetical."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(stats.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [name for name, _ in ranked[:k]]


_SECTION_RE = re.compile(r"^#{0,6}\s*(Description|Syntax|Example)\s*$", re.IGNORECASE)
_ARG_MARKER_RE = re.compile(r"(\w+)\s*<\s*(Required|Optional)\s*>", re.IGNORECASE)


def _split_sections(text: str) -> dict:
    sections: dict = {}
    current = "_preamble"
    sections[current] = []
    for line in text.splitlines():
        m = _SECTION_RE.match(line.strip())
        if m:
            current = m.group(1).lower()
            sections.setdefault(current, [])
        else:
            sections[current].append(line)
    return sections


def _parse_signature_args(name: str, signature: str) -> list:
    inner = signature[len(name) + 1 : -1]  # strip "NAME(" and ")"
    args = []
    depth = 0
    token = ""
    tokens = []
    for ch in inner:
        if ch == "," and depth == 0:
            tokens.append(token)
            token = ""
            continue
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        token += ch
    if token.strip():
        tokens.append(token)
    for raw in tokens:
        t = raw.strip()
        if not t or t in ("...", "…"):
            continue
        optional = t.startswith("[")
        t = t.strip("[]").strip().rstrip(".")
        if not t:
            continue
        args.append(ArgSpec(name=t, required=not optional))
    return args


def parse_function_doc(name: str, text: str) -> FunctionSpec:
    """Extract signature, argument schema, and summary from a doc page."""
    sections = _split_sections(text)
    syntax_lines = sections.get("syntax", [])
    sig_re = re.compile(rf"^\s*{re.escape(name)}\s*\(.*\)\s*$", re.IGNORECASE)
    signature = None
    for line in syntax_lines:
        if sig_re.match(line):
            signature = line.strip()
            break
    if signature is None:
        raise MalformedSignatureError(name, "no signature line under Syntax")
    if not signature.endswith(")"):
        raise MalformedSignatureError(name, signature)

    args = _parse_signature_args(name, signature)

    # <Required>/<Optional> markers override bracket-derived optionality;
    # args without a marker stay as the signature says (default required).
    markers = {}
    for m in _ARG_MARKER_RE.finditer(text):
        markers[m.group(1).casefold()] = m.group(2).casefold() == "required"
    resolved = []
    for arg in args:
        key = arg.name.casefold()
        resolved.append(ArgSpec(arg.name, markers.get(key, arg.required)))

    summary = ""
    for line in sections.get("description", []) or sections.get("_preamble", []):
        if line.strip():
            summary = line.strip()
            break

    return FunctionSpec(name=name.upper(), signature=signature, args=resolved, summary=summary, doc_text=text)


def load_function_docs(doc_dir, names: Iterable[str]) -> list:
    """One FunctionSpec per name; each name needs a {NAME}.md file."""
    doc_dir = Path(doc_dir)
    specs = []
    for name in names:
        path = doc_dir / f"{name}.md"
        if not path.exists():
            raise MissingDocError(name)
        specs.append(parse_function_doc(name, path.read_text()))
    return specs
