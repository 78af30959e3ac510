"""Tabular dataset loading, type inference, sampling, and column profiling.

Datasets are immutable after load: any number of threads may read them
concurrently. CSV input follows RFC 4180 (comma delimiter, double-quote
escaping, CRLF or LF line endings) and must be UTF-8, optionally with a BOM.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import re
import statistics
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

MAX_ROWS = 100_000
MAX_COLUMNS = 256

# A column is Numeric when at least this share of its non-missing cells
# parse as finite decimal numbers.
NUMERIC_SHARE = 0.95

TOP_VALUES_LIMIT = 5

# Finite decimal numbers, optionally signed, optionally in e-notation.
# Deliberately narrower than float(): no inf/nan, no underscores.
_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")


class DatasetError(Exception):
    """Base class for dataset loading and profiling failures."""


class EmptyFile(DatasetError):
    pass


class DuplicateHeader(DatasetError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate column name after trimming: {name!r}")


class RaggedRow(DatasetError):
    def __init__(self, line: int):
        self.line = line
        super().__init__(f"row at line {line} does not match header width")


class EncodingError(DatasetError):
    pass


class DatasetTooLarge(DatasetError):
    pass


class UnknownColumn(DatasetError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"unknown column: {column!r}")


class ColumnType(Enum):
    NUMERIC = "numeric"
    TEXT = "text"


@dataclass(frozen=True, slots=True)
class Cell:
    """One table cell: the raw text plus its parsed value.

    ``parsed`` is a float for finite decimal numbers, the raw string for
    text, and None exactly when the raw text is empty or whitespace.
    """

    raw: str
    parsed: Union[float, str, None]


def parse_cell(raw: str) -> Cell:
    stripped = raw.strip()
    if not stripped:
        return Cell(raw, None)
    if _NUMBER_RE.match(stripped):
        value = float(stripped)
        if math.isfinite(value):
            return Cell(raw, value)
    return Cell(raw, raw)


@dataclass(frozen=True, slots=True)
class Row:
    id_: int
    cells: tuple[Cell, ...]


@dataclass(frozen=True)
class Dataset:
    name: str
    headers: tuple[str, ...]
    rows: tuple[Row, ...]
    column_types: dict[str, ColumnType]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_index", {name: i for i, name in enumerate(self.headers)}
        )

    def column_index(self, column: str) -> int:
        try:
            return self._index[column]
        except KeyError:
            raise UnknownColumn(column) from None

    def column_cells(self, column: str) -> list[Cell]:
        idx = self.column_index(column)
        return [row.cells[idx] for row in self.rows]


@dataclass(frozen=True)
class NumericProfile:
    column: str
    count: int
    missing: int
    mean: Optional[float]
    median: Optional[float]
    min: Optional[float]
    max: Optional[float]
    stddev: Optional[float]
    # Non-missing cells that failed numeric parsing in a Numeric column;
    # they are counted into `missing` for the statistics above.
    coerced_missing: int = 0

    def to_dict(self) -> dict:
        return {
            "column": self.column,
            "kind": "numeric",
            "count": self.count,
            "missing": self.missing,
            "coerced_missing": self.coerced_missing,
            "mean": self.mean,
            "median": self.median,
            "min": self.min,
            "max": self.max,
            "stddev": self.stddev,
            "stddev_convention": "population",
        }


@dataclass(frozen=True)
class TextProfile:
    column: str
    count: int
    missing: int
    distinct: int
    top_values: tuple[tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "column": self.column,
            "kind": "text",
            "count": self.count,
            "missing": self.missing,
            "distinct": self.distinct,
            "top_values": [list(pair) for pair in self.top_values],
        }


ColumnProfile = Union[NumericProfile, TextProfile]


def load_csv(data: bytes, name: str) -> Dataset:
    """Parse CSV bytes into an immutable, typed Dataset.

    The first record is the header; row ids are assigned 0-based in file
    order. Raises EmptyFile, DuplicateHeader, RaggedRow, EncodingError, or
    DatasetTooLarge (over 100,000 rows or 256 columns).
    """
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"input is not valid UTF-8: {exc}") from exc
    if not text.strip():
        raise EmptyFile("no header record found")

    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        raw_header = next(reader)
    except StopIteration:  # pragma: no cover - guarded by the strip() check
        raise EmptyFile("no header record found") from None

    headers = tuple(h.strip() for h in raw_header)
    if len(headers) > MAX_COLUMNS:
        raise DatasetTooLarge(
            f"{len(headers)} columns exceeds the {MAX_COLUMNS}-column limit"
        )
    seen: set[str] = set()
    for header in headers:
        if header in seen:
            raise DuplicateHeader(header)
        seen.add(header)

    width = len(headers)
    rows: list[Row] = []
    for record in reader:
        if not record:
            # Tolerate stray blank lines; they carry no cells.
            continue
        if len(record) != width:
            raise RaggedRow(reader.line_num)
        if len(rows) >= MAX_ROWS:
            raise DatasetTooLarge(f"more than {MAX_ROWS} rows")
        rows.append(Row(len(rows), tuple(parse_cell(value) for value in record)))

    column_types = {
        header: _infer_column_type(rows, idx) for idx, header in enumerate(headers)
    }
    return Dataset(name=name, headers=headers, rows=tuple(rows), column_types=column_types)


def _infer_column_type(rows: list[Row], idx: int) -> ColumnType:
    non_missing = 0
    numeric = 0
    for row in rows:
        parsed = row.cells[idx].parsed
        if parsed is None:
            continue
        non_missing += 1
        if isinstance(parsed, float):
            numeric += 1
    if non_missing == 0:
        # Vacuous sample; Text is the conservative choice.
        return ColumnType.TEXT
    return ColumnType.NUMERIC if numeric >= NUMERIC_SHARE * non_missing else ColumnType.TEXT


def profile_column(dataset: Dataset, column: str) -> ColumnProfile:
    """Summarise one column; missing cells are excluded from all statistics."""
    idx = dataset.column_index(column)
    cells = [row.cells[idx] for row in dataset.rows]

    if dataset.column_types[column] is ColumnType.NUMERIC:
        values = [c.parsed for c in cells if isinstance(c.parsed, float)]
        truly_missing = sum(1 for c in cells if c.parsed is None)
        coerced = len(cells) - len(values) - truly_missing
        if values:
            return NumericProfile(
                column=column,
                count=len(values),
                missing=truly_missing + coerced,
                mean=statistics.fmean(values),
                median=statistics.median(values),
                min=min(values),
                max=max(values),
                stddev=statistics.pstdev(values),
                coerced_missing=coerced,
            )
        return NumericProfile(
            column=column,
            count=0,
            missing=truly_missing + coerced,
            mean=None,
            median=None,
            min=None,
            max=None,
            stddev=None,
            coerced_missing=coerced,
        )

    present = [c.raw for c in cells if c.parsed is not None]
    counts = Counter(present)
    top = sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:TOP_VALUES_LIMIT]
    return TextProfile(
        column=column,
        count=len(present),
        missing=len(cells) - len(present),
        distinct=len(counts),
        top_values=tuple(top),
    )


def sample_rows(dataset: Dataset, n: int) -> list[Row]:
    """First min(n, row count) rows in original order."""
    if n < 0:
        raise ValueError("sample size must be non-negative")
    return list(dataset.rows[:n])


def fingerprint(dataset: Dataset) -> str:
    """Stable content digest over headers and raw cells.

    Identical content yields identical digests across runs and platforms;
    column order is part of the schema, so reordering changes the digest.
    """
    digest = hashlib.sha256()
    digest.update(str(len(dataset.headers)).encode())
    for header in dataset.headers:
        digest.update(b"\x1f")
        digest.update(header.encode("utf-8"))
    digest.update(b"\x1e")
    for row in dataset.rows:
        for cell in row.cells:
            digest.update(cell.raw.encode("utf-8"))
            digest.update(b"\x1f")
        digest.update(b"\x1e")
    return digest.hexdigest()
