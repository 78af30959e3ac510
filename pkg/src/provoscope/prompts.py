"""Prompt templates for factor generation and factor analysis.

Templates carry an explicit version string that participates in replay cache
keys, so editing a template invalidates stale cached responses.
"""

from __future__ import annotations

from .dataset import Dataset, sample_rows
from .filter_dsl import GRAMMAR

TEMPLATE_VERSION = "v1"

FACTOR_ROW_LIMIT = 40
ANALYSIS_ROW_LIMIT = 5
MAX_FACTORS = 5

# Longest cell text embedded in a prompt; the rest is elided.
CELL_CHAR_LIMIT = 120


class PromptError(Exception):
    pass


class EmptyQuery(PromptError):
    pass


class EmptyCriteria(PromptError):
    pass


FACTOR_SCHEMA_BLOCK = """\
Each factor must contain the following information:
- "name": The name of the factor or criteria.
- "source_columns": A list of dataset columns used to evaluate each candidate row
  with respect to the factor. Leave the list empty if no suitable column exists.
- "criteria": A description of the factor representing desiderata for candidate rows.
- "importance": One of "High", "Medium", or "Low".
- "risk": The risk of using such criteria, and what alternative criteria could be used.
  Suggest more relevant topics and keywords to the factor description. Even if there
  would be no risk, suggest a case where the opposite of the criteria is better.\
"""

ANALYSIS_SCHEMA_BLOCK = """\
Your answer must contain the following information:
- For each row, the row's "id_" and a "reason" to include the row.
- A "message" containing any warnings.\
"""


def _clip(text: str) -> str:
    if len(text) <= CELL_CHAR_LIMIT:
        return text
    return text[:CELL_CHAR_LIMIT] + "…"


def serialize_rows(dataset: Dataset, limit: int) -> str:
    """Header line plus pipe-delimited rows, synthetic id_ first."""
    lines = ["id_|" + "|".join(dataset.headers)]
    for row in sample_rows(dataset, limit):
        lines.append(str(row.id_) + "|" + "|".join(_clip(c.raw) for c in row.cells))
    return "\n".join(lines)


def build_factor_prompt(query: str, dataset: Dataset) -> str:
    """Prompt asking for at most 5 factors, provocations included, as one
    fenced JSON array."""
    if not query.strip():
        raise EmptyQuery("shortlisting query must be non-empty")
    return f"""\
You are helping a user shortlist rows from a tabular dataset.

The user's shortlisting query:
{query}

The dataset "{dataset.name}" begins with these rows (pipe-delimited, the
synthetic key id_ first):
{serialize_rows(dataset, FACTOR_ROW_LIMIT)}

Suggest at most {MAX_FACTORS} factors the user might consider when shortlisting.
{FACTOR_SCHEMA_BLOCK}

Respond with a single fenced JSON array of factor objects and nothing outside
the fence.
"""


def build_analysis_prompt(factor_criteria: str, dataset: Dataset) -> str:
    """Prompt asking for a filter in the constrained language plus per-row
    reasons and a warnings message, as one fenced JSON object."""
    if not factor_criteria.strip():
        raise EmptyCriteria("factor criteria must be non-empty")
    return f"""\
You are applying one shortlisting factor to a tabular dataset.

The factor criteria:
{factor_criteria}

The dataset "{dataset.name}" begins with these rows (pipe-delimited, the
synthetic key id_ first):
{serialize_rows(dataset, ANALYSIS_ROW_LIMIT)}

Write a "filter" selecting the candidate rows that satisfy the criteria. The
filter must be a single expression in this grammar (keywords are
case-insensitive; put column names containing spaces in backticks):

{GRAMMAR}

{ANALYSIS_SCHEMA_BLOCK}

Respond with a single fenced JSON object with keys "filter", "per_row" (a list
of objects with "id_" and "reason") and "message", and nothing outside the
fence.
"""


def build_provocation_prompt(titled_criteria: list[tuple[str, str]]) -> str:
    """Second-call prompt used when provocations are generated separately."""
    listed = "\n".join(
        f'- "{title}": {criteria}' for title, criteria in titled_criteria
    )
    return f"""\
You previously suggested these shortlisting factors:
{listed}

For each factor, write its "risk": The risk of using such criteria, and what
alternative criteria could be used. Even if there would be no risk, suggest a
case where the opposite of the criteria is better.

Respond with a single fenced JSON array of objects with keys "name" and
"risk", one per factor, and nothing outside the fence.
"""
