"""Provider transport and structured parsing for factor and analysis calls.

The gateway is stateless. Every orchestration function takes a ``send``
callable so the scenario layer can intercept requests for record/replay; the
live sender posts to an OpenAI-compatible chat-completions endpoint.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import httpx

from .dataset import Dataset, fingerprint
from .factors import Factor, Importance
from .filter_dsl import FilterExpr, ParseError, parse_filter, validate_columns
from .prompts import (
    MAX_FACTORS,
    TEMPLATE_VERSION,
    build_analysis_prompt,
    build_factor_prompt,
    build_provocation_prompt,
)

API_KEY_ENV = "PROVOSCOPE_API_KEY"
DEFAULT_MODEL = "gpt-4o"


class GatewayError(Exception):
    pass


class Timeout(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class ProviderError(GatewayError):
    def __init__(self, status: Optional[int], body: str):
        self.status = status
        self.body = body
        super().__init__(f"provider error (status {status}): {body[:200]}")


class NotJson(GatewayError):
    pass


class SchemaError(GatewayError):
    def __init__(self, field_name: str):
        self.field = field_name
        super().__init__(f"response is missing or malforms required field {field_name!r}")


class UnusableAnalysis(GatewayError):
    pass


@dataclass
class ProviderConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = DEFAULT_MODEL
    api_key: Optional[str] = None  # falls back to PROVOSCOPE_API_KEY
    temperature: float = 0.0
    timeout: float = 90.0
    max_retries: int = 1
    retry_backoff: float = 1.0
    joint_provocations: bool = True
    max_in_flight: int = 4
    _gate: threading.Semaphore = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be within [0, 2]")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        self._gate = threading.Semaphore(self.max_in_flight)

    def resolved_api_key(self) -> str:
        return self.api_key or os.environ.get(API_KEY_ENV, "")


@dataclass(frozen=True)
class LlmRequest:
    """One interceptable provider request; the fields (minus prompt snapshots
    of no interest to keying) define the replay cache identity."""

    kind: str  # "factors" | "analysis" | "recommendation" (reserved, unused)
    model: str
    template_version: str
    dataset_fingerprint: str
    prompt: str


Send = Callable[[LlmRequest], str]


def complete(cfg: ProviderConfig, prompt: str, transport=None) -> str:
    """POST the prompt to {base_url}/chat/completions and return the
    assistant message content verbatim.

    Transient transport failures, 5xx, and 429 are retried at most
    cfg.max_retries times; timeouts are terminal (the deadline is the
    contract). `transport` is an httpx transport for tests.
    """
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    payload = {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    }
    headers = {}
    key = cfg.resolved_api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"

    last_error: Optional[GatewayError] = None
    for attempt in range(cfg.max_retries + 1):
        if attempt and cfg.retry_backoff:
            time.sleep(cfg.retry_backoff * attempt)
        try:
            with cfg._gate:
                with httpx.Client(timeout=cfg.timeout, transport=transport) as client:
                    response = client.post(url, json=payload, headers=headers)
        except httpx.TimeoutException as exc:
            raise Timeout(f"no response within {cfg.timeout}s: {exc}") from exc
        except httpx.TransportError as exc:
            last_error = ProviderError(None, str(exc))
            continue

        if response.status_code == 429:
            last_error = RateLimited("provider rate limit (HTTP 429)")
            continue
        if response.status_code >= 500:
            last_error = ProviderError(response.status_code, response.text)
            continue
        if response.status_code >= 400:
            raise ProviderError(response.status_code, response.text)

        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise ProviderError(response.status_code, response.text) from exc
        if not isinstance(content, str):
            raise ProviderError(response.status_code, "message content is not text")
        return content

    assert last_error is not None
    raise last_error


def live_sender(cfg: ProviderConfig, transport=None) -> Send:
    return lambda request: complete(cfg, request.prompt, transport=transport)


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"```[A-Za-z]*\s*(.*?)```", re.DOTALL)


def _fenced_payload(raw: str) -> str:
    match = _FENCE_RE.search(raw)
    return match.group(1) if match else raw


def _decode_json(raw: str):
    try:
        return json.loads(_fenced_payload(raw))
    except json.JSONDecodeError as exc:
        raise NotJson(f"response is not decodable JSON: {exc}") from exc


def _required_text(item: dict, field_name: str) -> str:
    value = item.get(field_name)
    if not isinstance(value, str) or not value.strip():
        raise SchemaError(field_name)
    return value


def parse_factor_response(raw: str, headers: Sequence[str]) -> tuple[list[Factor], list[str]]:
    """Map the provider's factor array to Factor drafts.

    Responses with more than 5 factors are truncated to the first 5. Source
    columns not present in the dataset are dropped with a warning, possibly
    leaving the factor without source columns. Draft ids are minted by the
    session that adopts them.
    """
    data = _decode_json(raw)
    if isinstance(data, dict) and isinstance(data.get("factors"), list):
        data = data["factors"]
    if not isinstance(data, list) or not data:
        raise SchemaError("factors")

    known = set(headers)
    drafts: list[Factor] = []
    warnings: list[str] = []
    for item in data[:MAX_FACTORS]:
        if not isinstance(item, dict):
            raise SchemaError("factor")
        name = _required_text(item, "name")
        criteria = _required_text(item, "criteria")
        risk = _required_text(item, "risk")
        importance_text = item.get("importance")
        if not isinstance(importance_text, str):
            raise SchemaError("importance")
        try:
            importance = Importance.parse(importance_text)
        except ValueError:
            raise SchemaError("importance") from None

        source = item.get("source_columns", [])
        if isinstance(source, str):
            source = [source]
        if not isinstance(source, list):
            raise SchemaError("source_columns")
        kept = [c for c in source if isinstance(c, str) and c in known]
        dropped = [c for c in source if not (isinstance(c, str) and c in known)]
        if dropped:
            warnings.append(
                f"factor {name!r}: dropped unknown source column(s): "
                + ", ".join(repr(c) for c in dropped)
            )
        drafts.append(
            Factor(
                id="",
                title=name,
                source_columns=kept,
                criteria=criteria,
                provocation=risk,
                importance=importance,
            )
        )
    return drafts, warnings


def serialize_factor_drafts(drafts: Sequence[Factor]) -> str:
    """Drafts back to the response schema; parse of this is the identity."""
    items = [
        {
            "name": d.title,
            "source_columns": list(d.source_columns),
            "criteria": d.criteria,
            "importance": d.importance.value,
            "risk": d.provocation,
        }
        for d in drafts
    ]
    return json.dumps(items, indent=2)


@dataclass
class AnalysisResponse:
    filter_text: Optional[str]
    per_row: dict[int, str]
    message: str


def parse_analysis_response(raw: str) -> AnalysisResponse:
    data = _decode_json(raw)
    if not isinstance(data, dict):
        raise SchemaError("analysis")
    filter_text = data.get("filter")
    if filter_text is not None and not isinstance(filter_text, str):
        raise SchemaError("filter")
    message = data.get("message", "")
    if not isinstance(message, str):
        raise SchemaError("message")
    per_row: dict[int, str] = {}
    entries = data.get("per_row", [])
    if not isinstance(entries, list):
        raise SchemaError("per_row")
    for entry in entries:
        if not isinstance(entry, dict) or "id_" not in entry:
            raise SchemaError("id_")
        try:
            row_id = int(entry["id_"])
        except (TypeError, ValueError):
            raise SchemaError("id_") from None
        reason = entry.get("reason", "")
        per_row[row_id] = reason if isinstance(reason, str) else ""
    return AnalysisResponse(filter_text=filter_text, per_row=per_row, message=message)


def parse_provocation_response(raw: str) -> dict[str, str]:
    data = _decode_json(raw)
    if not isinstance(data, list):
        raise SchemaError("provocations")
    risks: dict[str, str] = {}
    for item in data:
        if not isinstance(item, dict):
            raise SchemaError("provocation")
        risks[_required_text(item, "name")] = _required_text(item, "risk")
    return risks


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def generate_factors(
    query: str, dataset: Dataset, cfg: ProviderConfig, send: Send
) -> tuple[list[Factor], list[str]]:
    """One provider call yielding 1..5 drafts, provocations included.

    With joint_provocations off, a second call regenerates the provocation
    texts; the joint default keeps this at exactly one call per query.
    """
    request = LlmRequest(
        kind="factors",
        model=cfg.model,
        template_version=TEMPLATE_VERSION,
        dataset_fingerprint=fingerprint(dataset),
        prompt=build_factor_prompt(query, dataset),
    )
    drafts, warnings = parse_factor_response(send(request), dataset.headers)

    if not cfg.joint_provocations:
        followup = LlmRequest(
            kind="factors",
            model=cfg.model,
            template_version=TEMPLATE_VERSION,
            dataset_fingerprint=fingerprint(dataset),
            prompt=build_provocation_prompt([(d.title, d.criteria) for d in drafts]),
        )
        risks = parse_provocation_response(send(followup))
        for draft in drafts:
            if risks.get(draft.title, "").strip():
                draft.provocation = risks[draft.title]
    return drafts, warnings


@dataclass
class AnalysisOutcome:
    """What the analysis protocol produced for one factor."""

    filter: Optional[FilterExpr]
    row_ids: Optional[list[int]]  # degraded path: explicit shortlist ids
    per_row_reasons: dict[int, str]
    message: str
    retried: bool = False
    degraded: bool = False


def _try_filter(
    response: AnalysisResponse, dataset: Dataset
) -> tuple[Optional[FilterExpr], Optional[str]]:
    if not response.filter_text or not response.filter_text.strip():
        return None, "the response contained no filter"
    try:
        expr = parse_filter(response.filter_text)
    except ParseError as exc:
        return None, f"the filter did not parse: {exc}"
    unknown = validate_columns(expr, dataset)
    if unknown:
        return None, "the filter references unknown column(s): " + ", ".join(unknown)
    return expr, None


def generate_filter_with_fallback(
    factor: Factor, dataset: Dataset, cfg: ProviderConfig, send: Send
) -> AnalysisOutcome:
    """Analysis protocol: use the response's filter if it parses; otherwise
    re-prompt once with the error appended; otherwise fall back to the
    response's explicit id_ list; otherwise raise UnusableAnalysis."""

    def request(prompt: str) -> LlmRequest:
        return LlmRequest(
            kind="analysis",
            model=cfg.model,
            template_version=TEMPLATE_VERSION,
            dataset_fingerprint=fingerprint(dataset),
            prompt=prompt,
        )

    prompt = build_analysis_prompt(factor.criteria, dataset)

    first: Optional[AnalysisResponse] = None
    try:
        first = parse_analysis_response(send(request(prompt)))
        expr, problem = _try_filter(first, dataset)
    except (NotJson, SchemaError) as exc:
        expr, problem = None, str(exc)
    if expr is not None:
        assert first is not None
        return AnalysisOutcome(
            filter=expr,
            row_ids=None,
            per_row_reasons=first.per_row,
            message=first.message,
        )

    retry_prompt = (
        prompt
        + f"\nYour previous response could not be used: {problem}."
        + " Respond again, following the required format exactly.\n"
    )
    second: Optional[AnalysisResponse] = None
    try:
        second = parse_analysis_response(send(request(retry_prompt)))
        expr, _ = _try_filter(second, dataset)
    except (NotJson, SchemaError):
        expr = None
    if expr is not None:
        assert second is not None
        message = (second.message + " " if second.message else "") + (
            "Filter accepted after one retry."
        )
        return AnalysisOutcome(
            filter=expr,
            row_ids=None,
            per_row_reasons=second.per_row,
            message=message,
            retried=True,
        )

    usable = second if second and second.per_row else first
    if usable and usable.per_row:
        message = (usable.message + " " if usable.message else "") + (
            "Degraded mode: shortlist taken from the model's explicit row list;"
            " no runnable filter was produced."
        )
        return AnalysisOutcome(
            filter=None,
            row_ids=sorted(usable.per_row),
            per_row_reasons=usable.per_row,
            message=message,
            retried=True,
            degraded=True,
        )
    raise UnusableAnalysis(
        f"factor {factor.id!r}: no usable filter or row list after one retry"
    )
