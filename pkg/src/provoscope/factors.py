"""Factor model, factor-local analysis, and the weighted global shortlist.

Importance weights are stored as integer hundredths (100/66/33) so scores
stay exact under summation; they render as 1.0 / 0.66 / 0.33.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Mapping, Optional, Sequence

from .dataset import ColumnProfile, Dataset, profile_column
from .filter_dsl import FilterExpr, compile_filter, print_filter, validate_columns


class FactorError(Exception):
    pass


class UnrunnableFactor(FactorError):
    pass


class NoAnalyzedFactors(FactorError):
    pass


class UnknownWeight(FactorError):
    pass


class Importance(Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"

    @classmethod
    def parse(cls, text: str) -> "Importance":
        lowered = text.strip().lower()
        for level in cls:
            if level.value.lower() == lowered:
                return level
        raise ValueError(f"not an importance level: {text!r}")


WEIGHT_HUNDREDTHS = {Importance.HIGH: 100, Importance.MEDIUM: 66, Importance.LOW: 33}


def weight_hundredths(importance: Importance) -> int:
    return WEIGHT_HUNDREDTHS[importance]


def importance_weight(importance: Importance) -> float:
    """High -> 1.0, Medium -> 0.66, Low -> 0.33."""
    return WEIGHT_HUNDREDTHS[importance] / 100


class Shade(IntEnum):
    NONE = 0
    LIGHT = 1
    MID = 2
    STRONG = 3


_SHADE_BY_WEIGHT = {0.0: Shade.NONE, 0.33: Shade.LIGHT, 0.66: Shade.MID, 1.0: Shade.STRONG}
_SHADE_BY_HUNDREDTHS = {0: Shade.NONE, 33: Shade.LIGHT, 66: Shade.MID, 100: Shade.STRONG}


def highlight_shade(weight: float) -> Shade:
    """Map a factor weight to its highlight saturation level."""
    try:
        return _SHADE_BY_WEIGHT[float(weight)]
    except (KeyError, TypeError, ValueError):
        raise UnknownWeight(f"no shade defined for weight {weight!r}") from None


class FactorStatus(Enum):
    DRAFT = "Draft"
    ANALYZED = "Analyzed"
    UNRUNNABLE = "Unrunnable"


@dataclass
class RowMatch:
    row_id: int
    reason: str


@dataclass
class FactorAnalysis:
    factor_id: str
    profiles: list[ColumnProfile]
    local_shortlist: list[RowMatch]
    message: str
    # Reasons that came from the model, by row id; template fallbacks are not here.
    llm_reasons: dict[int, str] = field(default_factory=dict)

    def matched_ids(self) -> set[int]:
        return {match.row_id for match in self.local_shortlist}

    def to_dict(self) -> dict:
        return {
            "factor_id": self.factor_id,
            "profiles": [profile.to_dict() for profile in self.profiles],
            "local_shortlist": [
                {"row_id": m.row_id, "reason": m.reason} for m in self.local_shortlist
            ],
            "message": self.message,
        }


@dataclass
class Factor:
    id: str
    title: str = ""
    source_columns: list[str] = field(default_factory=list)
    criteria: str = ""
    provocation: str = ""
    importance: Importance = Importance.MEDIUM
    filter: Optional[FilterExpr] = None
    status: FactorStatus = FactorStatus.DRAFT
    analysis: Optional[FactorAnalysis] = None
    # Set when criteria were edited after the provocation was generated;
    # the provocation is kept but labelled "for original criteria".
    provocation_stale: bool = False

    @property
    def stale_analysis(self) -> bool:
        return self.analysis is not None and self.status is not FactorStatus.ANALYZED

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "source_columns": list(self.source_columns),
            "criteria": self.criteria,
            "provocation": self.provocation,
            "provocation_stale": self.provocation_stale,
            "importance": self.importance.value,
            "weight": importance_weight(self.importance),
            "filter": print_filter(self.filter) if self.filter is not None else None,
            "status": self.status.value,
            "stale_analysis": self.stale_analysis,
            "analysis": self.analysis.to_dict() if self.analysis else None,
        }


def refresh_status(factor: Factor, dataset: Dataset) -> None:
    """Re-derive runnability; keeps an Analyzed status when nothing changed."""
    if not factor.source_columns:
        factor.status = FactorStatus.UNRUNNABLE
        return
    if factor.filter is not None and validate_columns(factor.filter, dataset):
        factor.status = FactorStatus.UNRUNNABLE
        return
    if factor.status is FactorStatus.UNRUNNABLE:
        factor.status = FactorStatus.DRAFT


def apply_edits(
    factor: Factor,
    dataset: Dataset,
    *,
    title: Optional[str] = None,
    source_columns: Optional[Sequence[str]] = None,
    criteria: Optional[str] = None,
    importance: Optional[Importance] = None,
) -> None:
    """Apply card edits; criteria/source changes reset the factor to Draft."""
    if title is not None:
        factor.title = title
    if importance is not None:
        factor.importance = importance
    if source_columns is not None:
        factor.source_columns = list(source_columns)
        factor.status = FactorStatus.DRAFT
    if criteria is not None and criteria != factor.criteria:
        factor.criteria = criteria
        factor.status = FactorStatus.DRAFT
        if factor.provocation:
            factor.provocation_stale = True
    refresh_status(factor, dataset)


def analyze_factor(
    factor: Factor,
    dataset: Dataset,
    *,
    per_row_reasons: Optional[Mapping[int, str]] = None,
    message: str = "",
    explicit_row_ids: Optional[Sequence[int]] = None,
) -> FactorAnalysis:
    """Profile source columns and compute the factor-local shortlist.

    The shortlist normally comes from scanning the factor's filter over every
    row; `explicit_row_ids` is the degraded path used when the model never
    produced a parsable filter. Marks the factor Analyzed.
    """
    refresh_status(factor, dataset)
    if factor.status is FactorStatus.UNRUNNABLE:
        raise UnrunnableFactor(
            f"factor {factor.id!r} needs a non-empty, resolvable source column list"
        )

    profiles = [profile_column(dataset, column) for column in factor.source_columns]
    reasons = dict(per_row_reasons or {})
    notes: list[str] = [message] if message else []

    if explicit_row_ids is not None:
        valid = {row.id_ for row in dataset.rows}
        ids = sorted({i for i in explicit_row_ids if i in valid})
        dropped = len(set(explicit_row_ids)) - len(ids)
        if dropped:
            notes.append(f"{dropped} shortlisted id(s) not present in the dataset were dropped.")
        fallback = "Selected by analysis."
        matches = [RowMatch(i, reasons.get(i) or fallback) for i in ids]
    else:
        if factor.filter is None:
            raise ValueError(f"factor {factor.id!r} has no filter to analyze")
        compiled = compile_filter(factor.filter, dataset)
        fallback = f"Matches filter: {print_filter(factor.filter)}"
        matches = []
        eval_warnings: list[str] = []
        for row in dataset.rows:
            if compiled(row, eval_warnings):
                matches.append(RowMatch(row.id_, reasons.get(row.id_) or fallback))
        if eval_warnings:
            distinct = sorted(set(eval_warnings))
            shown = "; ".join(distinct[:3])
            notes.append(f"{len(eval_warnings)} evaluation warning(s): {shown}")

    if not matches:
        notes.append("The filter matched zero rows.")

    analysis = FactorAnalysis(
        factor_id=factor.id,
        profiles=profiles,
        local_shortlist=matches,
        message=" ".join(notes),
        llm_reasons={i: r for i, r in reasons.items() if r},
    )
    factor.analysis = analysis
    factor.status = FactorStatus.ANALYZED
    return analysis


@dataclass
class RankedRow:
    row_id: int
    score_hundredths: int
    contributors: list[tuple[str, float]]
    reason: str

    @property
    def score(self) -> float:
        return self.score_hundredths / 100


@dataclass
class GlobalShortlist:
    entries: list[RankedRow]
    highlights: dict[tuple[int, str], Shade]

    def to_dict(self) -> dict:
        nested: dict[str, dict[str, str]] = {}
        for (row_id, column), shade in self.highlights.items():
            nested.setdefault(str(row_id), {})[column] = shade.name.lower()
        return {
            "entries": [
                {
                    "row_id": e.row_id,
                    "score": e.score,
                    "score_hundredths": e.score_hundredths,
                    "contributors": [
                        {"factor_id": fid, "weight": w} for fid, w in e.contributors
                    ],
                    "reason": e.reason,
                }
                for e in self.entries
            ],
            "highlights": nested,
        }


def _analyzed(factors: Sequence[Factor]) -> list[Factor]:
    return [
        f
        for f in factors
        if f.status is FactorStatus.ANALYZED and f.analysis is not None
    ]


def compute_global_shortlist(dataset: Dataset, factors: Sequence[Factor]) -> GlobalShortlist:
    """Rank every row by the exact sum of weights of the factors it satisfies.

    Draft and Unrunnable factors contribute nothing. Entries sort by score
    descending, ties by ascending row id; highlights mark source columns of
    satisfied factors with the maximum contributing weight's shade.
    """
    scoring = _analyzed(factors)
    if not scoring:
        raise NoAnalyzedFactors("at least one factor must be analyzed")

    match_sets = {f.id: f.analysis.matched_ids() for f in scoring}
    highlights: dict[tuple[int, str], Shade] = {}
    entries: list[RankedRow] = []

    for row in dataset.rows:
        score = 0
        contributors: list[tuple[str, float]] = []
        for f in scoring:
            if row.id_ not in match_sets[f.id]:
                continue
            hundredths = weight_hundredths(f.importance)
            score += hundredths
            contributors.append((f.id, hundredths / 100))
            shade = _SHADE_BY_HUNDREDTHS[hundredths]
            for column in f.source_columns:
                key = (row.id_, column)
                if highlights.get(key, Shade.NONE) < shade:
                    highlights[key] = shade
        entries.append(RankedRow(row.id_, score, contributors, ""))

    entries.sort(key=lambda e: (-e.score_hundredths, e.row_id))
    for entry in entries:
        entry.reason = compose_reason(entry, factors)
    return GlobalShortlist(entries=entries, highlights=highlights)


def compose_reason(ranked: RankedRow, factors: Sequence[Factor]) -> str:
    """Deterministic Reason text: met factors with weights, then unmet ones,
    then any model-written per-row notes."""
    scoring = _analyzed(factors)
    satisfied_ids = {fid for fid, _ in ranked.contributors}
    met = [f for f in scoring if f.id in satisfied_ids]
    unmet = [f for f in scoring if f.id not in satisfied_ids]

    if not met:
        text = "Meets no analyzed factors."
    else:
        listed = ", ".join(
            f"{f.title} ({weight_hundredths(f.importance) / 100})" for f in met
        )
        text = f"Meets: {listed}."
        if unmet:
            text += f" Does not meet: {', '.join(f.title for f in unmet)}."

    extras = [
        f"{f.title}: {f.analysis.llm_reasons[ranked.row_id]}"
        for f in met
        if ranked.row_id in f.analysis.llm_reasons
    ]
    if extras:
        text += " " + " ".join(extras)
    return text
