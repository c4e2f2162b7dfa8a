"""Typed tabular data model with spreadsheet (A1) addressing.

Cell values are plain Python scalars: float for numbers, str for text,
bool, None for blank, and ErrorKind for error cells.  Grids are immutable
after construction and safe to share across workers.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union


class ErrorKind(Enum):
    """The six spreadsheet error kinds, valued by their display code."""

    DIV0 = "#DIV/0!"
    NA = "#N/A"
    VALUE = "#VALUE!"
    REF = "#REF!"
    NAME = "#NAME?"
    NUM = "#NUM!"

    @classmethod
    def from_name(cls, name: str) -> "ErrorKind":
        return cls[name.upper()]


CellValue = Union[float, str, bool, None, ErrorKind]


class GridError(Exception):
    """Base class for grid construction/ingestion failures."""


class EmptyInputError(GridError):
    pass


class UnparseableRowError(GridError):
    def __init__(self, line_no: int, detail: str = "") -> None:
        self.line_no = line_no
        super().__init__(f"unparseable row at line {line_no}" + (f": {detail}" if detail else ""))


# ---------------------------------------------------------------------------
# A1 addressing
# ---------------------------------------------------------------------------


def col_to_letters(col: int) -> str:
    """Convert a 1-based column number to letters (28 -> 'AB')."""
    if col < 1:
        raise ValueError(f"column index must be >= 1, got {col}")
    out = ""
    while col:
        col, rem = divmod(col - 1, 26)
        out = chr(ord("A") + rem) + out
    return out


def letters_to_col(letters: str) -> int:
    """Convert column letters to a 1-based column number ('AB' -> 28)."""
    col = 0
    for ch in letters:
        col = col * 26 + (ord(ch.upper()) - ord("A") + 1)
    return col


_A1_RE = re.compile(r"^\$?([A-Za-z]{1,3})\$?([0-9]+)$")


@dataclass(frozen=True, order=True)
class CellRef:
    """1-based (col, row) cell address; textual form is letters then digits."""

    col: int
    row: int

    def __post_init__(self) -> None:
        if self.col < 1 or self.row < 1:
            raise ValueError(f"cell reference out of range: col={self.col} row={self.row}")

    @classmethod
    def from_a1(cls, text: str) -> "CellRef":
        m = _A1_RE.match(text)
        if not m:
            raise ValueError(f"not an A1 reference: {text!r}")
        return cls(col=letters_to_col(m.group(1)), row=int(m.group(2)))

    def to_a1(self) -> str:
        return f"{col_to_letters(self.col)}{self.row}"


@dataclass(frozen=True)
class RangeRef:
    """Rectangular range, normalized so start is the top-left corner."""

    start: CellRef
    end: CellRef

    @classmethod
    def normalized(cls, a: CellRef, b: CellRef) -> "RangeRef":
        return cls(
            start=CellRef(min(a.col, b.col), min(a.row, b.row)),
            end=CellRef(max(a.col, b.col), max(a.row, b.row)),
        )

    @property
    def n_rows(self) -> int:
        return self.end.row - self.start.row + 1

    @property
    def n_cols(self) -> int:
        return self.end.col - self.start.col + 1

    def cells(self) -> Iterable[CellRef]:
        """Row-major enumeration of the rectangle."""
        for row in range(self.start.row, self.end.row + 1):
            for col in range(self.start.col, self.end.col + 1):
                yield CellRef(col, row)

    def to_a1(self) -> str:
        return f"{self.start.to_a1()}:{self.end.to_a1()}"


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Immutable 2-D table of typed cells, row-major, with row 1 as headers."""

    n_rows: int
    n_cols: int
    cells: tuple
    source_id: str = ""

    def __post_init__(self) -> None:
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("grid must have at least one row and one column")
        if len(self.cells) != self.n_rows * self.n_cols:
            raise ValueError("cells length must equal n_rows * n_cols")

    @classmethod
    def from_rows(cls, rows: list, source_id: str = "") -> "Grid":
        if not rows or not rows[0]:
            raise ValueError("from_rows requires at least one nonempty row")
        n_cols = max(len(r) for r in rows)
        cells = []
        for r in rows:
            padded = list(r) + [None] * (n_cols - len(r))
            cells.extend(_normalize_cell(c) for c in padded)
        return cls(n_rows=len(rows), n_cols=n_cols, cells=tuple(cells), source_id=source_id)

    def rows(self) -> list:
        return [list(self.cells[r * self.n_cols : (r + 1) * self.n_cols]) for r in range(self.n_rows)]


def _normalize_cell(v) -> CellValue:
    if v is None or isinstance(v, (str, bool, ErrorKind)):
        return v
    if isinstance(v, (int, float)):
        f = float(v)
        if not math.isfinite(f):
            raise ValueError("Number cells must be finite")
        return f
    raise ValueError(f"unsupported cell value: {v!r}")


def cell_at(grid: Grid, ref: CellRef) -> CellValue:
    """Value at ref; references beyond the grid extent are Blank."""
    if ref.row > grid.n_rows or ref.col > grid.n_cols:
        return None
    return grid.cells[(ref.row - 1) * grid.n_cols + (ref.col - 1)]


def resolve_range(grid: Grid, rng: RangeRef) -> list:
    """Row-major cell values of the rectangle, out-of-extent cells as Blank."""
    return [cell_at(grid, ref) for ref in rng.cells()]


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

_PLAIN_NUM_RE = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?%?$")
_GROUPED_NUM_RE = re.compile(r"^[+-]?\d{1,3}(?:,\d{3})+(?:\.\d+)?%?$")


def parse_number_text(text: str) -> float | None:
    """Parse a numeric-looking field: sign, digits, optional decimal part,
    optional thousands commas, optional percent suffix (divides by 100).
    Returns None when the field is not numeric."""
    s = text.strip()
    if not s or not any(ch.isdigit() for ch in s):
        return None
    if "," in s:
        if not _GROUPED_NUM_RE.match(s):
            return None
        s = s.replace(",", "")
    if not _PLAIN_NUM_RE.match(s):
        return None
    percent = s.endswith("%")
    if percent:
        s = s[:-1]
    try:
        value = float(s)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value / 100.0 if percent else value


def convert_field(field: str) -> CellValue:
    """Typed conversion of one raw text field per the ingestion rules."""
    s = field.strip()
    if not s or s.lower() == "nan":
        return None
    if s.lower() == "true":
        return True
    if s.lower() == "false":
        return False
    num = parse_number_text(s)
    if num is not None:
        return num
    return s


_MD_SEPARATOR_CELL = re.compile(r"^:?-{2,}:?$")


def _is_separator_row(cells: list) -> bool:
    return len(cells) > 0 and all(_MD_SEPARATOR_CELL.match(c) for c in cells)


def _split_markdown_row(line: str) -> list:
    body = line.strip()
    if body.startswith("|"):
        body = body[1:]
    if body.endswith("|"):
        body = body[:-1]
    return [c.strip() for c in body.split("|")]


def _letters_header(cells: list) -> bool:
    """True when a row is ['', 'A', 'B', ...]: the rendered letters header."""
    if len(cells) < 2 or cells[0] != "":
        return False
    return all(cells[i] == col_to_letters(i) for i in range(1, len(cells)))


def ingest_table(raw: str, format: str = "csv", source_id: str = "") -> Grid:
    """Build a Grid from delimited text or a markdown pipe table.

    Numeric-looking fields become Number, literal "nan" becomes Blank,
    ragged rows are right-padded with Blank.
    """
    if format not in ("markdown", "csv", "tsv"):
        raise ValueError(f"unknown format: {format}")
    if not raw or not raw.strip():
        raise EmptyInputError("input is empty")

    raw_rows: list = []
    if format in ("csv", "tsv"):
        delim = "," if format == "csv" else "\t"
        reader = csv.reader(io.StringIO(raw), delimiter=delim)
        try:
            for row in reader:
                if not row:
                    continue
                raw_rows.append(row)
        except csv.Error as exc:
            raise UnparseableRowError(reader.line_num, str(exc)) from exc
    else:
        for line_no, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            if "|" not in line:
                raise UnparseableRowError(line_no, "expected a pipe-delimited row")
            cells = _split_markdown_row(line)
            if _is_separator_row(cells):
                continue
            raw_rows.append(cells)
        if raw_rows and _letters_header(raw_rows[0]):
            # Rendered-form table: drop the letters header and the index column.
            raw_rows = [r[1:] for r in raw_rows[1:]]
            raw_rows = [r for r in raw_rows if not all(c == "..." for c in r)]

    if not raw_rows:
        raise EmptyInputError("no data rows found")
    typed = [[convert_field(c) for c in row] for row in raw_rows]
    return Grid.from_rows(typed, source_id=source_id)


# ---------------------------------------------------------------------------
# Rendering and JSON form
# ---------------------------------------------------------------------------


def number_to_text(v: float) -> str:
    """Canonical text form of a number: no trailing '.0' when integral."""
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def cell_to_text(v: CellValue) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, float):
        return number_to_text(v)
    if isinstance(v, ErrorKind):
        return v.value
    return v


def render_markdown(grid: Grid, max_rows: int = 50) -> str:
    """Pipe-delimited markdown with a leading 1-based index column.

    Grids taller than max_rows are excerpted: the first ceil(max_rows/2)
    and last floor(max_rows/2) rows with a `...` row between.
    """
    if max_rows < 4:
        raise ValueError("max_rows must be >= 4")

    if grid.n_rows > max_rows:
        head = (max_rows + 1) // 2
        tail = max_rows // 2
        indices = list(range(1, head + 1)) + [None] + list(range(grid.n_rows - tail + 1, grid.n_rows + 1))
    else:
        indices = list(range(1, grid.n_rows + 1))

    body_rows = []
    for idx in indices:
        if idx is None:
            body_rows.append(["..."] * (grid.n_cols + 1))
        else:
            row = [str(idx)]
            for col in range(1, grid.n_cols + 1):
                row.append(cell_to_text(cell_at(grid, CellRef(col, idx))))
            body_rows.append(row)

    header = [""] + [col_to_letters(c) for c in range(1, grid.n_cols + 1)]
    widths = [max(2, len(header[0]))] + [len(h) for h in header[1:]]
    for row in body_rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))

    def fmt(cells: list, align_first_right: bool) -> str:
        parts = []
        for i, cell in enumerate(cells):
            if i == 0 and align_first_right:
                parts.append(f" {cell.rjust(widths[i])} ")
            else:
                parts.append(f" {cell.ljust(widths[i])} ")
        return "|" + "|".join(parts) + "|"

    lines = [fmt(header, align_first_right=False)]
    lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    for row in body_rows:
        lines.append(fmt(row, align_first_right=True))
    return "\n".join(lines)


def cell_to_json(v: CellValue):
    if isinstance(v, ErrorKind):
        return {"error": v.name}
    return v


def cell_from_json(v) -> CellValue:
    if isinstance(v, dict):
        if "error" not in v:
            raise ValueError(f"bad cell JSON: {v!r}")
        return ErrorKind.from_name(v["error"])
    return _normalize_cell(v)


def grid_to_json(grid: Grid) -> dict:
    return {
        "source_id": grid.source_id,
        "headers_in_row1": True,
        "rows": [[cell_to_json(c) for c in row] for row in grid.rows()],
    }


def grid_from_json(data: dict, source_id: str = "") -> Grid:
    rows = [[cell_from_json(c) for c in row] for row in data["rows"]]
    return Grid.from_rows(rows, source_id=data.get("source_id") or source_id)
