"""Scenario-driven interception of provider calls: record, replay, alter.

A scenario names a mode (live, record, replay), optional session automation
(auto-upload, analyze-on-arrival), a cache directory, and declarative
alterations applied to cached responses at replay time. Scenarios ship as
JSON manifests; paths inside a manifest resolve against its directory.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Optional

from .gateway import LlmRequest, Send
from .jsonedit import PathNotFound, replace_value

logger = logging.getLogger(__name__)


class ScenarioError(Exception):
    pass


class CacheMiss(ScenarioError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"replay cache has no entry for key {key}")


class AlterationTargetMissing(ScenarioError):
    pass


class MissingScenarioFile(ScenarioError):
    pass


class UnknownScenario(ScenarioError):
    pass


class Mode(Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


@dataclass
class Alteration:
    """Declarative edit of one field in a cached response.

    `match` selects entries by exact cache key or by substring of the
    recorded request; empty matches every entry. Applying the same
    alteration twice equals applying it once.
    """

    match: str
    field_path: str
    replacement: object


@dataclass
class Scenario:
    display_name: str
    mode: Mode = Mode.LIVE
    auto_upload_filename: Optional[str] = None
    analyze_factors_immediately: bool = False
    cache_dir: Optional[Path] = None
    alterations: list[Alteration] = field(default_factory=list)
    base_dir: Optional[Path] = None  # manifest directory, for relative paths

    def resolve(self, candidate: str) -> Path:
        path = Path(candidate)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def auto_upload_path(self) -> Optional[Path]:
        if self.auto_upload_filename is None:
            return None
        path = self.resolve(self.auto_upload_filename)
        if not path.exists():
            raise MissingScenarioFile(f"auto-upload dataset not found: {path}")
        return path


@dataclass
class CacheEntry:
    key: str
    request_snapshot: str
    response: str
    recorded_at: str


def cache_key(request: LlmRequest) -> str:
    """Deterministic digest over template version, model, dataset
    fingerprint, and the canonicalized request payload. Timestamps and API
    keys never participate."""
    canonical = json.dumps(
        {
            "template_version": request.template_version,
            "model": request.model,
            "dataset_fingerprint": request.dataset_fingerprint,
            "payload": {"kind": request.kind, "prompt": request.prompt},
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """One human-inspectable JSON file per entry, named by key digest.

    Writes are atomic (temp file + rename) and entries are immutable: an
    existing key is never overwritten.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Optional[CacheEntry]:
        path = self._path(key)
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        return CacheEntry(
            key=data["key"],
            request_snapshot=data["request_snapshot"],
            response=data["response"],
            recorded_at=data["recorded_at"],
        )

    def put(self, entry: CacheEntry) -> None:
        path = self._path(entry.key)
        if path.exists():
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(
            {
                "key": entry.key,
                "request_snapshot": entry.request_snapshot,
                "response": entry.response,
                "recorded_at": entry.recorded_at,
            },
            indent=2,
            ensure_ascii=False,
        )
        fd, tmp_name = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(payload)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise


# Responses may be a fenced block; alterations edit the JSON inside it.
_FENCE_RE = re.compile(r"```[A-Za-z]*\s*(.*?)```", re.DOTALL)


def apply_alterations(scenario: Scenario, entry: CacheEntry) -> str:
    """Rewrite matched fields of the cached response; every other byte is
    preserved. Raises AlterationTargetMissing when a matched alteration's
    field path does not resolve."""
    response = entry.response
    for alteration in scenario.alterations:
        if (
            alteration.match
            and alteration.match != entry.key
            and alteration.match not in entry.request_snapshot
        ):
            continue
        fence = _FENCE_RE.search(response)
        start, end = fence.span(1) if fence else (0, len(response))
        try:
            edited = replace_value(
                response[start:end], alteration.field_path, alteration.replacement
            )
        except PathNotFound as exc:
            raise AlterationTargetMissing(
                f"alteration path {alteration.field_path!r} not found in entry {entry.key}"
            ) from exc
        response = response[:start] + edited + response[end:]
    return response


class LlmInterceptor:
    """Scenario-directed stand-in for the live provider.

    Replay serves (possibly altered) cached bytes and never touches the
    network; Record performs the live call once per key and persists it;
    Live passes through, logging every response.
    """

    def __init__(self, scenario: Scenario, live: Optional[Send] = None):
        self.scenario = scenario
        self.live = live
        if scenario.mode in (Mode.RECORD, Mode.REPLAY):
            if scenario.cache_dir is None:
                raise ScenarioError(f"{scenario.mode.value} mode requires cache_dir")
            self.cache: Optional[ResponseCache] = ResponseCache(
                scenario.resolve(str(scenario.cache_dir))
            )
        else:
            self.cache = None
        if scenario.mode in (Mode.LIVE, Mode.RECORD) and live is None:
            raise ScenarioError(f"{scenario.mode.value} mode requires a live provider")

    def intercept(self, request: LlmRequest) -> str:
        key = cache_key(request)
        if self.scenario.mode is Mode.REPLAY:
            assert self.cache is not None
            entry = self.cache.get(key)
            if entry is None:
                raise CacheMiss(key)
            return apply_alterations(self.scenario, entry)

        if self.scenario.mode is Mode.RECORD:
            assert self.cache is not None and self.live is not None
            existing = self.cache.get(key)
            if existing is not None:
                # Entries are immutable; a second identical request replays
                # the recording rather than re-spending a provider call.
                return existing.response
            response = self.live(request)
            self.cache.put(
                CacheEntry(
                    key=key,
                    request_snapshot=request.prompt,
                    response=response,
                    recorded_at=datetime.now(timezone.utc).isoformat(),
                )
            )
            return response

        assert self.live is not None
        response = self.live(request)
        logger.info("llm response [%s] %s: %d chars", request.kind, key[:12], len(response))
        return response

    __call__ = intercept


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def load_scenario(path: Path) -> Scenario:
    """Read one JSON scenario manifest."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise MissingScenarioFile(str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not data.get("display_name"):
        raise ScenarioError(f"manifest {path} needs a display_name")
    try:
        mode = Mode(data.get("mode", "live"))
    except ValueError:
        raise ScenarioError(f"manifest {path}: unknown mode {data.get('mode')!r}") from None
    alterations = [
        Alteration(
            match=item.get("match", ""),
            field_path=item["field_path"],
            replacement=item["replacement"],
        )
        for item in data.get("alterations", [])
    ]
    cache_dir = data.get("cache_dir")
    return Scenario(
        display_name=data["display_name"],
        mode=mode,
        auto_upload_filename=data.get("auto_upload_filename"),
        analyze_factors_immediately=bool(data.get("analyze_factors_immediately", False)),
        cache_dir=Path(cache_dir) if cache_dir else None,
        alterations=alterations,
        base_dir=Path(path).resolve().parent,
    )


DEFAULT_SCENARIO_NAME = "default"


class ScenarioStore:
    """All selectable scenarios: the built-in default plus manifest files."""

    def __init__(self, directory: Optional[Path] = None):
        self.directory = Path(directory) if directory else None

    def list(self) -> list[Scenario]:
        scenarios = [Scenario(display_name=DEFAULT_SCENARIO_NAME, mode=Mode.LIVE)]
        if self.directory and self.directory.is_dir():
            for path in sorted(self.directory.glob("*.json")):
                scenarios.append(load_scenario(path))
        return scenarios

    def get(self, display_name: str) -> Scenario:
        for scenario in self.list():
            if scenario.display_name == display_name:
                return scenario
        raise UnknownScenario(display_name)
