"""Shared tabular primitives: typed columns, CSV scanning, result sets.

Both query engines parse values with the same two-type rule (a column is
float64 when every value parses as a number, text otherwise) so that their
results compare exactly. Data files are plain comma-separated UTF-8 with a
header row and no embedded commas or quotes in fields.
"""
from __future__ import annotations

import operator
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

NEWLINE = 0x0A
COMMA = 0x2C

FLOAT_TYPE = "f64"
TEXT_TYPE = "txt"

# Per-entry bookkeeping overhead charged to cached text values.
TEXT_ENTRY_OVERHEAD = 8

COMPARATORS = {
    "<": operator.lt,
    ">": operator.gt,
    "<=": operator.le,
    ">=": operator.ge,
    "=": operator.eq,
}


class Column:
    """One parsed column: a float64 array or a list of strings."""

    __slots__ = ("values", "type")

    def __init__(self, values):
        if isinstance(values, np.ndarray):
            self.values = values
            self.type = FLOAT_TYPE
        else:
            self.values = list(values)
            self.type = TEXT_TYPE

    @property
    def is_numeric(self) -> bool:
        return self.type == FLOAT_TYPE

    def __len__(self) -> int:
        return len(self.values)

    @property
    def nbytes(self) -> int:
        if self.is_numeric:
            return 8 * len(self.values)
        return sum(len(v.encode("utf-8")) + TEXT_ENTRY_OVERHEAD for v in self.values)

    def take(self, indices) -> list:
        """Values at the given row indices, as plain Python objects."""
        if self.is_numeric:
            return self.values[indices].tolist()
        return [self.values[i] for i in indices]


def column_from_strings(raw: list[bytes]) -> Column:
    """Apply the float-or-text rule to one column of raw field bytes."""
    try:
        return Column(np.asarray(raw, dtype=np.float64))
    except ValueError:
        return Column([f.decode("utf-8") for f in raw])


def parse_field(raw: bytes):
    """Row-wise version of the float-or-text rule, for streaming scans.

    Assumes type-consistent columns, which the data generator guarantees;
    on a mixed column this can disagree with the whole-column rule.
    """
    try:
        return float(raw)
    except ValueError:
        return raw.decode("utf-8")


@dataclass
class CsvScan:
    """One pass over a data file: structure plus any requested columns."""

    path: str
    header: list[str]
    columns: dict[str, Column]
    row_offsets: np.ndarray  # byte offset of each data row start
    row_count: int
    file_bytes: int


def read_header(path) -> list[str]:
    with open(path, "rb") as f:
        line = f.readline()
    if not line:
        raise FormatError(f"{path}: empty file")
    return line.decode("utf-8").rstrip("\r\n").split(",")


def scan_csv(path, wanted=None) -> CsvScan:
    """Scan a CSV file in one pass, parsing only the wanted columns.

    `wanted` is a collection of header names (None parses every column,
    an empty collection parses none and just validates structure).
    Raises FormatError on ragged rows, naming the first bad data row.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if not raw:
        raise FormatError(f"{path}: empty file")
    file_bytes = len(raw)
    if not raw.endswith(b"\n"):
        raw += b"\n"

    arr = np.frombuffer(raw, dtype=np.uint8)
    newlines = np.flatnonzero(arr == NEWLINE)
    line_starts = np.concatenate(([0], newlines[:-1] + 1))
    # Drop blank trailing lines (e.g. file ending in "\n\n").
    while len(line_starts) and line_starts[-1] == newlines[-1]:
        line_starts = line_starts[:-1]
        newlines = newlines[:-1]

    header = raw[: newlines[0]].decode("utf-8").rstrip("\r").split(",")
    ncols = len(header)
    row_offsets = line_starts[1:].astype(np.int64)
    row_count = len(row_offsets)

    # Ragged-row check: commas per line must equal ncols - 1 everywhere.
    commas = np.flatnonzero(arr == COMMA)
    counts = np.diff(np.searchsorted(commas, newlines), prepend=0)
    bad = np.flatnonzero(counts != ncols - 1)
    if len(bad):
        line_no = int(bad[0])
        found = int(counts[line_no]) + 1
        raise FormatError(
            f"{path}: data row {line_no} has {found} fields, expected {ncols}"
        )

    columns: dict[str, Column] = {}
    if wanted is None:
        wanted = header
    wanted = list(wanted)
    for name in wanted:
        if name not in header:
            raise FormatError(f"{path}: no column named {name!r}")
    if wanted and row_count:
        # Field (r, j) sits between consecutive delimiters in the flattened
        # comma/newline grid; slicing per wanted column avoids materializing
        # every field of the file.
        delims = np.flatnonzero((arr == COMMA) | (arr == NEWLINE))
        delims = delims[: (row_count + 1) * ncols]
        for name in wanted:
            j = header.index(name)
            starts = delims[ncols + j - 1 :: ncols] + 1
            ends = delims[ncols + j :: ncols]
            n = min(len(starts), row_count)
            fields = [raw[s:e] for s, e in zip(starts[:n].tolist(), ends[:n].tolist())]
            columns[name] = column_from_strings(fields)
    elif wanted:
        for name in wanted:
            columns[name] = Column(np.empty(0, dtype=np.float64))

    return CsvScan(
        path=str(path),
        header=header,
        columns=columns,
        row_offsets=row_offsets,
        row_count=row_count,
        file_bytes=file_bytes,
    )


def predicate_mask(column: Column, op: str, literal) -> np.ndarray:
    """Boolean mask of rows passing `value op literal`.

    Numeric column with a non-numeric literal matches nothing; text column
    compares against the literal rendered as text. Both engines and the
    streaming scan share these rules.
    """
    cmp = COMPARATORS[op]
    if column.is_numeric:
        try:
            lit = float(literal)
        except (TypeError, ValueError):
            return np.zeros(len(column), dtype=bool)
        return cmp(column.values, lit)
    lit = _text_literal(literal)
    return np.fromiter((cmp(v, lit) for v in column.values), dtype=bool, count=len(column))


def predicate_row_test(op: str, literal):
    """Per-value test matching predicate_mask, for streaming scans."""
    cmp = COMPARATORS[op]
    text_lit = _text_literal(literal)
    try:
        num_lit = float(literal)
    except (TypeError, ValueError):
        num_lit = None

    def test(raw: bytes) -> bool:
        try:
            v = float(raw)
        except ValueError:
            return cmp(raw.decode("utf-8"), text_lit)
        if num_lit is None:
            return False
        return cmp(v, num_lit)

    return test


def _text_literal(literal) -> str:
    if isinstance(literal, str):
        return literal
    return repr(float(literal))


@dataclass
class ResultSet:
    """Query output: named columns and materialized rows."""

    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def multiset(self) -> Counter:
        return Counter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, out) -> None:
        out.write(",".join(self.columns) + "\n")
        for row in self.rows:
            out.write(",".join(format_value(v) for v in row) + "\n")


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


@dataclass
class ExecStats:
    """Per-query measurements shared by both engines."""

    duration_ms: float = 0.0
    bytes_read_from_disk: int = 0
    rows_scanned: int = 0
    cache_hit_columns: int = 0
    early_stop: bool = False
    peak_cache_bytes: int = 0


@dataclass
class LoadStats:
    """Per-load measurements for the columnar engine."""

    rows_loaded: int = 0
    input_bytes: int = 0
    binary_bytes: int = 0
    journal_bytes: int = 0
    duration_ms: float = 0.0

    @property
    def total_written(self) -> int:
        return self.binary_bytes + self.journal_bytes
