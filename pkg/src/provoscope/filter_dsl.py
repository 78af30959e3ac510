"""Constrained boolean filter language evaluated row-wise over datasets.

This closed language is what the model is instructed to emit for factor
criteria; it replaces arbitrary generated code so filters stay sandboxed,
deterministic, and auditable.

Grammar (keywords case-insensitive, column names case-sensitive):

    expr    := or
    or      := and { "or" and }
    and     := not { "and" not }
    not     := ["not"] atom
    atom    := "(" expr ")" | pred
    pred    := col op lit | col "contains" str | col "startswith" str
             | col "in" "[" lit {"," lit} "]" | col "is" "missing"
    op      := "==" | "!=" | "<" | "<=" | ">" | ">="
    col     := ident | "`" any-chars "`"
    lit     := number | str          str := '"' chars '"'

String literals carry no escape mechanism, so they cannot contain a double
quote, and backtick-quoted column names cannot contain a backtick; both are
rejected at AST construction.

Evaluation is total: a missing cell fails every predicate except `is missing`
(with a warning), and numeric coercion failures warn instead of raising.
Contains/startswith match case-insensitively; ==/!= on strings are
case-sensitive. Ordering comparisons against string literals use Unicode
code-point order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Union

from .dataset import Dataset, Row

KEYWORDS = frozenset(
    {"and", "or", "not", "contains", "startswith", "in", "is", "missing"}
)
CMP_OPS = ("==", "!=", "<", "<=", ">", ">=")

# The grammar as shown to the model when asking for a filter.
GRAMMAR = """\
expr    := or
or      := and { "or" and }
and     := not { "and" not }
not     := ["not"] atom
atom    := "(" expr ")" | pred
pred    := col op lit | col "contains" str | col "startswith" str
         | col "in" "[" lit {"," lit} "]" | col "is" "missing"
op      := "==" | "!=" | "<" | "<=" | ">" | ">="
col     := ident | "`" any-chars "`"
lit     := number | str          str := '"' chars '"'\
"""

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")

Literal = Union[float, str]


class ParseError(Exception):
    """Malformed filter text; position is the 1-based token ordinal."""

    def __init__(self, position: int, expected: str, offset: int = 0):
        self.position = position
        self.expected = expected
        self.offset = offset
        super().__init__(f"at token {position} (offset {offset}): expected {expected}")


def _check_column(name: str) -> None:
    if "`" in name:
        raise ValueError("column names cannot contain a backtick")


def _check_text(text: str) -> None:
    if '"' in text:
        raise ValueError("string literals cannot contain a double quote")


@dataclass(frozen=True)
class Cmp:
    column: str
    op: str
    literal: Literal

    def __post_init__(self):
        if self.op not in CMP_OPS:
            raise ValueError(f"unknown comparison operator {self.op!r}")
        _check_column(self.column)
        if isinstance(self.literal, str):
            _check_text(self.literal)


@dataclass(frozen=True)
class Contains:
    column: str
    text: str

    def __post_init__(self):
        _check_column(self.column)
        _check_text(self.text)


@dataclass(frozen=True)
class StartsWith:
    column: str
    text: str

    def __post_init__(self):
        _check_column(self.column)
        _check_text(self.text)


@dataclass(frozen=True)
class InSet:
    column: str
    literals: tuple[Literal, ...]

    def __post_init__(self):
        _check_column(self.column)
        if not self.literals:
            raise ValueError("in-set requires at least one literal")
        for lit in self.literals:
            if isinstance(lit, str):
                _check_text(lit)


@dataclass(frozen=True)
class IsMissing:
    column: str

    def __post_init__(self):
        _check_column(self.column)


@dataclass(frozen=True)
class And:
    left: "FilterExpr"
    right: "FilterExpr"


@dataclass(frozen=True)
class Or:
    left: "FilterExpr"
    right: "FilterExpr"


@dataclass(frozen=True)
class Not:
    operand: "FilterExpr"


FilterExpr = Union[Cmp, Contains, StartsWith, InSet, IsMissing, And, Or, Not]
_PREDICATES = (Cmp, Contains, StartsWith, InSet, IsMissing)


@dataclass
class EvalOutcome:
    matched: bool
    warnings: list[str]


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # "(", ")", "[", "]", ",", "op", "number", "string", "ident", keyword, "eof"
    value: Union[str, float]
    offset: int
    ordinal: int


def _tokenize(src: str) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0
    n = len(src)

    def emit(kind: str, value, offset: int) -> None:
        tokens.append(_Token(kind, value, offset, len(tokens) + 1))

    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "()[],":
            emit(ch, ch, i)
            i += 1
            continue
        if src.startswith(("==", "!=", "<=", ">="), i):
            emit("op", src[i : i + 2], i)
            i += 2
            continue
        if ch in "<>":
            emit("op", ch, i)
            i += 1
            continue
        if ch == '"':
            end = src.find('"', i + 1)
            if end < 0:
                raise ParseError(len(tokens) + 1, "closing '\"'", i)
            emit("string", src[i + 1 : end], i)
            i = end + 1
            continue
        if ch == "`":
            end = src.find("`", i + 1)
            if end < 0:
                raise ParseError(len(tokens) + 1, "closing '`'", i)
            emit("column", src[i + 1 : end], i)
            i = end + 1
            continue
        m = _NUMBER_RE.match(src, i)
        if m:
            emit("number", float(m.group()), i)
            i = m.end()
            continue
        m = _IDENT_RE.match(src, i)
        if m:
            word = m.group()
            lowered = word.lower()
            if lowered in KEYWORDS:
                emit(lowered, word, i)
            else:
                emit("ident", word, i)
            i = m.end()
            continue
        raise ParseError(len(tokens) + 1, "a valid token", i)

    tokens.append(_Token("eof", "", n, len(tokens) + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent; precedence not > and > or)
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def fail(self, expected: str) -> ParseError:
        token = self.peek()
        return ParseError(token.ordinal, expected, token.offset)

    def expect(self, kind: str, expected: str) -> _Token:
        if self.peek().kind != kind:
            raise self.fail(expected)
        return self.advance()

    def parse(self) -> FilterExpr:
        expr = self.parse_or()
        if self.peek().kind != "eof":
            raise self.fail("end of input")
        return expr

    def parse_or(self) -> FilterExpr:
        expr = self.parse_and()
        while self.peek().kind == "or":
            self.advance()
            expr = Or(expr, self.parse_and())
        return expr

    def parse_and(self) -> FilterExpr:
        expr = self.parse_not()
        while self.peek().kind == "and":
            self.advance()
            expr = And(expr, self.parse_not())
        return expr

    def parse_not(self) -> FilterExpr:
        if self.peek().kind == "not":
            self.advance()
            return Not(self.parse_atom())
        return self.parse_atom()

    def parse_atom(self) -> FilterExpr:
        if self.peek().kind == "(":
            self.advance()
            expr = self.parse_or()
            self.expect(")", "')'")
            return expr
        return self.parse_predicate()

    def parse_predicate(self) -> FilterExpr:
        token = self.peek()
        if token.kind not in ("ident", "column"):
            raise self.fail("'(' or a column name")
        column = str(self.advance().value)

        token = self.peek()
        if token.kind == "op":
            self.advance()
            return Cmp(column, str(token.value), self.parse_literal())
        if token.kind == "contains":
            self.advance()
            text = self.expect("string", "a quoted string")
            return Contains(column, str(text.value))
        if token.kind == "startswith":
            self.advance()
            text = self.expect("string", "a quoted string")
            return StartsWith(column, str(text.value))
        if token.kind == "in":
            self.advance()
            self.expect("[", "'['")
            literals = [self.parse_literal()]
            while self.peek().kind == ",":
                self.advance()
                literals.append(self.parse_literal())
            self.expect("]", "']'")
            return InSet(column, tuple(literals))
        if token.kind == "is":
            self.advance()
            self.expect("missing", "'missing'")
            return IsMissing(column)
        raise self.fail("a comparison operator, contains, startswith, in, or is")

    def parse_literal(self) -> Literal:
        token = self.peek()
        if token.kind == "number":
            self.advance()
            return float(token.value)
        if token.kind == "string":
            self.advance()
            return str(token.value)
        raise self.fail("a number or quoted string")


def parse_filter(src: str) -> FilterExpr:
    """Parse filter text into an AST; raises ParseError on malformed input."""
    return _Parser(_tokenize(src)).parse()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

def _format_column(name: str) -> str:
    if _IDENT_RE.fullmatch(name) and name.lower() not in KEYWORDS:
        return name
    return f"`{name}`"


def _format_literal(lit: Literal) -> str:
    if isinstance(lit, str):
        return f'"{lit}"'
    return repr(lit)


def print_filter(expr: FilterExpr) -> str:
    """Canonical text form; parse_filter(print_filter(e)) equals e structurally.

    And/Or nodes print fully parenthesized so tree shape survives re-parsing.
    """
    if isinstance(expr, Cmp):
        return f"{_format_column(expr.column)} {expr.op} {_format_literal(expr.literal)}"
    if isinstance(expr, Contains):
        return f'{_format_column(expr.column)} contains "{expr.text}"'
    if isinstance(expr, StartsWith):
        return f'{_format_column(expr.column)} startswith "{expr.text}"'
    if isinstance(expr, InSet):
        inner = ", ".join(_format_literal(lit) for lit in expr.literals)
        return f"{_format_column(expr.column)} in [{inner}]"
    if isinstance(expr, IsMissing):
        return f"{_format_column(expr.column)} is missing"
    if isinstance(expr, And):
        return f"({print_filter(expr.left)} and {print_filter(expr.right)})"
    if isinstance(expr, Or):
        return f"({print_filter(expr.left)} or {print_filter(expr.right)})"
    if isinstance(expr, Not):
        inner = expr.operand
        if isinstance(inner, _PREDICATES) or isinstance(inner, (And, Or)):
            # Predicates are atoms; And/Or already print their own parens.
            return f"not {print_filter(inner)}"
        return f"not ({print_filter(inner)})"
    raise TypeError(f"not a filter expression: {expr!r}")


# ---------------------------------------------------------------------------
# Validation and evaluation
# ---------------------------------------------------------------------------

def _columns_in(expr: FilterExpr) -> list[str]:
    if isinstance(expr, _PREDICATES):
        return [expr.column]
    if isinstance(expr, (And, Or)):
        return _columns_in(expr.left) + _columns_in(expr.right)
    return _columns_in(expr.operand)


def validate_columns(expr: FilterExpr, dataset: Dataset) -> list[str]:
    """Unknown column names referenced by the expression, first occurrence first."""
    unknown: list[str] = []
    known = set(dataset.headers)
    for column in _columns_in(expr):
        if column not in known and column not in unknown:
            unknown.append(column)
    return unknown


_CompiledFilter = Callable[[Row, list[str]], bool]


def compile_filter(expr: FilterExpr, dataset: Dataset) -> _CompiledFilter:
    """Lower the AST to a closure for bulk row scans.

    The returned callable takes (row, warnings) and appends any evaluation
    warnings to the list. Raises UnknownColumn for unresolved references,
    so validate_columns first.
    """
    if isinstance(expr, And):
        left = compile_filter(expr.left, dataset)
        right = compile_filter(expr.right, dataset)

        def run_and(row: Row, warnings: list[str]) -> bool:
            # Evaluate both sides so warnings do not depend on operand order.
            lm = left(row, warnings)
            rm = right(row, warnings)
            return lm and rm

        return run_and
    if isinstance(expr, Or):
        left = compile_filter(expr.left, dataset)
        right = compile_filter(expr.right, dataset)

        def run_or(row: Row, warnings: list[str]) -> bool:
            lm = left(row, warnings)
            rm = right(row, warnings)
            return lm or rm

        return run_or
    if isinstance(expr, Not):
        operand = compile_filter(expr.operand, dataset)

        def run_not(row: Row, warnings: list[str]) -> bool:
            return not operand(row, warnings)

        return run_not
    return _compile_predicate(expr, dataset)


def _compile_predicate(expr: FilterExpr, dataset: Dataset) -> _CompiledFilter:
    idx = dataset.column_index(expr.column)
    missing_warning = f"column {expr.column!r}: cell is missing"

    if isinstance(expr, IsMissing):
        def run_missing(row: Row, warnings: list[str]) -> bool:
            return row.cells[idx].parsed is None

        return run_missing

    if isinstance(expr, Contains):
        needle = expr.text.casefold()

        def run_contains(row: Row, warnings: list[str]) -> bool:
            cell = row.cells[idx]
            if cell.parsed is None:
                warnings.append(missing_warning)
                return False
            return needle in cell.raw.casefold()

        return run_contains

    if isinstance(expr, StartsWith):
        prefix = expr.text.casefold()

        def run_startswith(row: Row, warnings: list[str]) -> bool:
            cell = row.cells[idx]
            if cell.parsed is None:
                warnings.append(missing_warning)
                return False
            return cell.raw.casefold().startswith(prefix)

        return run_startswith

    if isinstance(expr, InSet):
        strings = {lit for lit in expr.literals if isinstance(lit, str)}
        numbers = [lit for lit in expr.literals if isinstance(lit, float)]
        coerce_warning = f"column {expr.column!r}: value is not numeric"

        def run_in(row: Row, warnings: list[str]) -> bool:
            cell = row.cells[idx]
            if cell.parsed is None:
                warnings.append(missing_warning)
                return False
            if cell.raw in strings:
                return True
            if numbers:
                if type(cell.parsed) is float:
                    return cell.parsed in numbers
                warnings.append(coerce_warning)
            return False

        return run_in

    assert isinstance(expr, Cmp)
    if expr.op in ("==", "!="):
        check = _equality_check(expr.column, idx, expr.literal, expr.op == "==")

        def run_eq(row: Row, warnings: list[str]) -> bool:
            if row.cells[idx].parsed is None:
                warnings.append(missing_warning)
                return False
            return check(row, warnings)

        return run_eq

    # Ordering comparisons.
    if isinstance(expr.literal, str):
        lit_s = expr.literal
        order = _ORDER_OPS[expr.op]

        def run_cmp_str(row: Row, warnings: list[str]) -> bool:
            cell = row.cells[idx]
            if cell.parsed is None:
                warnings.append(missing_warning)
                return False
            return order(cell.raw, lit_s)

        return run_cmp_str

    lit_f = expr.literal
    order = _ORDER_OPS[expr.op]
    coerce_warning = f"column {expr.column!r}: value is not numeric"

    def run_cmp_num(row: Row, warnings: list[str]) -> bool:
        parsed = row.cells[idx].parsed
        if type(parsed) is float:
            return order(parsed, lit_f)
        if parsed is None:
            warnings.append(missing_warning)
        else:
            warnings.append(coerce_warning)
        return False

    return run_cmp_num


_ORDER_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _equality_check(column: str, idx: int, literal: Literal, want_equal: bool) -> _CompiledFilter:
    """Equality against one literal for a known-present cell.

    Numeric literals compare numerically (warning when the cell is not a
    number); string literals compare against the raw text, case-sensitively.
    """
    if isinstance(literal, str):
        if want_equal:
            return lambda row, warnings: row.cells[idx].raw == literal
        return lambda row, warnings: row.cells[idx].raw != literal

    coerce_warning = f"column {column!r}: value is not numeric"

    def run(row: Row, warnings: list[str]) -> bool:
        parsed = row.cells[idx].parsed
        if type(parsed) is float:
            return (parsed == literal) if want_equal else (parsed != literal)
        warnings.append(coerce_warning)
        return False

    return run


def eval_filter(expr: FilterExpr, row: Row, dataset: Dataset) -> EvalOutcome:
    """Evaluate one row; never raises for column-validated expressions.

    Compiles on every call; use compile_filter directly when scanning many
    rows with the same expression.
    """
    warnings: list[str] = []
    matched = compile_filter(expr, dataset)(row, warnings)
    return EvalOutcome(matched=matched, warnings=warnings)
