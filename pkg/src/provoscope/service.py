"""Session-oriented REST service wiring datasets, factors, gateway, and
scenarios together.

Sessions live in memory (optionally snapshotted to a directory) and walk the
flow dataset -> query -> factors -> analyses -> shortlist; endpoints enforce
the prerequisite edges with 409s. Writes within one session are serialized by
a per-session lock; different sessions run concurrently.
"""

from __future__ import annotations

import base64
import json
import os
import re
import threading
import uuid
from dataclasses import dataclass, field as dataclass_field, replace
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import dataset as dataset_mod
from .dataset import Dataset, load_csv
from .factors import (
    Factor,
    FactorAnalysis,
    FactorStatus,
    Importance,
    NoAnalyzedFactors,
    RowMatch,
    UnrunnableFactor,
    analyze_factor,
    apply_edits,
    compute_global_shortlist,
    refresh_status,
)
from .filter_dsl import parse_filter
from .gateway import (
    NotJson,
    ProviderConfig,
    ProviderError,
    RateLimited,
    SchemaError,
    Timeout,
    UnusableAnalysis,
    generate_factors,
    generate_filter_with_fallback,
    live_sender,
)
from .prompts import EmptyCriteria, EmptyQuery
from .scenario import (
    CacheMiss,
    LlmInterceptor,
    MissingScenarioFile,
    Mode,
    Scenario,
    ScenarioStore,
    UnknownScenario,
)

FACTOR_CAP = 8


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, retriable: bool = False):
        self.status = status
        self.code = code
        self.message = message
        self.retriable = retriable
        super().__init__(message)


def _snake(name: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", name).lower()


@dataclass
class ServiceConfig:
    provider: ProviderConfig = dataclass_field(default_factory=ProviderConfig)
    scenario_name: str = "default"
    scenario_dir: Optional[Path] = None
    cache_dir: Optional[Path] = None
    mode_override: Optional[Mode] = None
    persist_dir: Optional[Path] = None
    ui_dir: Optional[Path] = None
    transport: object = None  # injected httpx transport, for tests


@dataclass
class Session:
    id: str
    scenario: Scenario
    interceptor: LlmInterceptor
    dataset: Optional[Dataset] = None
    dataset_raw: Optional[bytes] = None
    query: Optional[str] = None
    factors: list[Factor] = dataclass_field(default_factory=list)
    shortlist_body: Optional[dict] = None
    shortlist_stale: bool = False
    next_factor: int = 1
    lock: threading.Lock = dataclass_field(default_factory=threading.Lock)

    def mint_factor_id(self) -> str:
        fid = f"f{self.next_factor}"
        self.next_factor += 1
        return fid

    def factor(self, fid: str) -> Factor:
        for factor in self.factors:
            if factor.id == fid:
                return factor
        raise ApiError(404, "unknown_factor", f"no factor {fid!r} in this session")


def _dataset_summary(dataset: Dataset) -> dict:
    return {
        "name": dataset.name,
        "rows": len(dataset.rows),
        "columns": list(dataset.headers),
        "column_types": {h: t.value for h, t in dataset.column_types.items()},
    }


def _session_summary(session: Session) -> dict:
    return {
        "session_id": session.id,
        "scenario": session.scenario.display_name,
        "dataset": _dataset_summary(session.dataset) if session.dataset else None,
        "query": session.query,
        "factors": [f.to_dict() for f in session.factors],
        "shortlist_stale": session.shortlist_stale,
        "shortlist": session.shortlist_body,
    }


class QueryBody(BaseModel):
    text: str


class FactorPatch(BaseModel):
    title: Optional[str] = None
    source_columns: Optional[list[str]] = None
    criteria: Optional[str] = None
    importance: Optional[str] = None


class ScenarioBody(BaseModel):
    name: str


def _provider_guard(fn):
    """Run a gateway/scenario interaction, mapping failures to the uniform
    error body."""
    try:
        return fn()
    except Timeout as exc:
        raise ApiError(504, "timeout", str(exc), retriable=True) from exc
    except RateLimited as exc:
        raise ApiError(502, "rate_limited", str(exc), retriable=True) from exc
    except ProviderError as exc:
        raise ApiError(502, "provider_error", str(exc), retriable=True) from exc
    except (NotJson, SchemaError) as exc:
        raise ApiError(502, "bad_provider_response", str(exc), retriable=True) from exc
    except UnusableAnalysis as exc:
        raise ApiError(502, "unusable_analysis", str(exc), retriable=True) from exc
    except CacheMiss as exc:
        raise ApiError(502, "cache_miss", str(exc), retriable=False) from exc


class ShortlistService:
    """Application object behind the HTTP surface."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.scenarios = ScenarioStore(config.scenario_dir)
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._send = live_sender(config.provider, transport=config.transport)
        if config.persist_dir:
            config.persist_dir.mkdir(parents=True, exist_ok=True)
            self._restore_sessions()

    # -- scenario wiring ----------------------------------------------------

    def effective_scenario(self, name: str) -> Scenario:
        scenario = self.scenarios.get(name)
        overrides = {}
        if self.config.mode_override is not None:
            overrides["mode"] = self.config.mode_override
        if self.config.cache_dir is not None:
            overrides["cache_dir"] = self.config.cache_dir
            overrides["base_dir"] = scenario.base_dir or Path.cwd()
        return replace(scenario, **overrides) if overrides else scenario

    def _bind(self, session: Session, scenario: Scenario) -> None:
        session.scenario = scenario
        session.interceptor = LlmInterceptor(scenario, self._send)
        self._autostart(session)

    def _autostart(self, session: Session) -> None:
        path = session.scenario.auto_upload_path()
        if path is not None:
            self._load_dataset(session, path.read_bytes(), path.name)

    # -- session flow -------------------------------------------------------

    def create_session(self) -> Session:
        scenario = self.effective_scenario(self.config.scenario_name)
        session = Session(
            id=uuid.uuid4().hex[:12],
            scenario=scenario,
            interceptor=LlmInterceptor(scenario, self._send),
        )
        self._autostart(session)
        with self._lock:
            self.sessions[session.id] = session
        self._persist(session)
        return session

    def get_session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}") from None

    def _load_dataset(self, session: Session, data: bytes, name: str) -> None:
        try:
            dataset = load_csv(data, name)
        except dataset_mod.DatasetError as exc:
            raise ApiError(422, _snake(type(exc).__name__), str(exc)) from exc
        # Re-upload restarts the flow below the dataset.
        session.dataset = dataset
        session.dataset_raw = data
        session.query = None
        session.factors = []
        session.shortlist_body = None
        session.shortlist_stale = False

    def upload_dataset(self, session: Session, data: bytes, name: str) -> dict:
        with session.lock:
            self._load_dataset(session, data, name)
            self._persist(session)
            return _dataset_summary(session.dataset)

    def run_query(self, session: Session, text: str) -> dict:
        with session.lock:
            if session.dataset is None:
                raise ApiError(409, "no_dataset", "upload a dataset before querying")
            if not text.strip():
                raise ApiError(422, "empty_query", "query text must be non-empty")
            try:
                drafts, warnings = _provider_guard(
                    lambda: generate_factors(
                        text, session.dataset, self.config.provider, session.interceptor
                    )
                )
            except EmptyQuery as exc:
                raise ApiError(422, "empty_query", str(exc)) from exc
            session.query = text
            session.factors = []
            session.shortlist_body = None
            session.shortlist_stale = False
            for draft in drafts:
                draft.id = session.mint_factor_id()
                refresh_status(draft, session.dataset)
                session.factors.append(draft)
            if session.scenario.analyze_factors_immediately:
                for factor in session.factors:
                    if factor.status is not FactorStatus.UNRUNNABLE:
                        self._analyze(session, factor)
            self._persist(session)
            return {
                "factors": [f.to_dict() for f in session.factors],
                "warnings": warnings,
            }

    def patch_factor(self, session: Session, fid: str, patch: FactorPatch) -> dict:
        with session.lock:
            factor = session.factor(fid)
            importance = None
            if patch.importance is not None:
                try:
                    importance = Importance.parse(patch.importance)
                except ValueError as exc:
                    raise ApiError(422, "unknown_importance", str(exc)) from exc
            if patch.source_columns is not None and session.dataset is not None:
                unknown = [
                    c for c in patch.source_columns if c not in session.dataset.headers
                ]
                if unknown:
                    raise ApiError(
                        422,
                        "unknown_column",
                        "unknown source column(s): " + ", ".join(unknown),
                    )
            apply_edits(
                factor,
                session.dataset,
                title=patch.title,
                source_columns=patch.source_columns,
                criteria=patch.criteria,
                importance=importance,
            )
            session.shortlist_stale = True
            self._persist(session)
            return factor.to_dict()

    def spawn_factor(self, session: Session) -> dict:
        with session.lock:
            if session.dataset is None:
                raise ApiError(409, "no_dataset", "upload a dataset before adding factors")
            if len(session.factors) >= FACTOR_CAP:
                raise ApiError(
                    409, "factor_cap", f"a session holds at most {FACTOR_CAP} factors"
                )
            factor = Factor(id=session.mint_factor_id())
            refresh_status(factor, session.dataset)
            session.factors.append(factor)
            self._persist(session)
            return factor.to_dict()

    def delete_factor(self, session: Session, fid: str) -> None:
        with session.lock:
            factor = session.factor(fid)
            session.factors.remove(factor)
            session.shortlist_stale = True
            self._persist(session)

    def _analyze(self, session: Session, factor: Factor) -> FactorAnalysis:
        try:
            outcome = _provider_guard(
                lambda: generate_filter_with_fallback(
                    factor, session.dataset, self.config.provider, session.interceptor
                )
            )
        except EmptyCriteria as exc:
            raise ApiError(422, "empty_criteria", str(exc)) from exc
        factor.filter = outcome.filter
        try:
            analysis = analyze_factor(
                factor,
                session.dataset,
                per_row_reasons=outcome.per_row_reasons,
                message=outcome.message,
                explicit_row_ids=outcome.row_ids,
            )
        except UnrunnableFactor as exc:
            raise ApiError(409, "unrunnable_factor", str(exc)) from exc
        session.shortlist_stale = True
        return analysis

    def analyze(self, session: Session, fid: str) -> dict:
        with session.lock:
            factor = session.factor(fid)
            if session.dataset is None:
                raise ApiError(409, "no_dataset", "upload a dataset before analyzing")
            refresh_status(factor, session.dataset)
            if factor.status is FactorStatus.UNRUNNABLE:
                raise ApiError(
                    409,
                    "unrunnable_factor",
                    "the factor needs at least one resolvable source column",
                )
            analysis = self._analyze(session, factor)
            self._persist(session)
            return analysis.to_dict()

    def shortlist(self, session: Session) -> dict:
        with session.lock:
            if session.dataset is None:
                raise ApiError(409, "no_dataset", "upload a dataset first")
            try:
                shortlist = compute_global_shortlist(session.dataset, session.factors)
            except NoAnalyzedFactors as exc:
                raise ApiError(409, "no_analyzed_factors", str(exc)) from exc
            session.shortlist_body = shortlist.to_dict()
            session.shortlist_stale = False
            self._persist(session)
            return session.shortlist_body

    def bind_scenario(self, session: Session, name: str) -> dict:
        with session.lock:
            try:
                scenario = self.effective_scenario(name)
            except UnknownScenario as exc:
                raise ApiError(404, "unknown_scenario", f"no scenario {name!r}") from exc
            # Automation assumes a fresh flow; rebinding resets the session.
            session.dataset = None
            session.dataset_raw = None
            session.query = None
            session.factors = []
            session.shortlist_body = None
            session.shortlist_stale = False
            self._bind(session, scenario)
            self._persist(session)
            return _session_summary(session)

    # -- persistence ----------------------------------------------------------

    def _persist(self, session: Session) -> None:
        directory = self.config.persist_dir
        if not directory:
            return
        snapshot = {
            "session_id": session.id,
            "scenario": session.scenario.display_name,
            "query": session.query,
            "next_factor": session.next_factor,
            "dataset": (
                {
                    "name": session.dataset.name,
                    "csv_b64": base64.b64encode(session.dataset_raw or b"").decode(),
                }
                if session.dataset is not None
                else None
            ),
            "factors": [
                {
                    **factor.to_dict(),
                    "llm_reasons": (
                        {str(k): v for k, v in factor.analysis.llm_reasons.items()}
                        if factor.analysis
                        else {}
                    ),
                }
                for factor in session.factors
            ],
        }
        path = directory / f"{session.id}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(snapshot, indent=2), encoding="utf-8")
        os.replace(tmp, path)

    def _restore_sessions(self) -> None:
        for path in sorted(self.config.persist_dir.glob("*.json")):
            try:
                self._restore_one(json.loads(path.read_text(encoding="utf-8")))
            except Exception:  # pragma: no cover - corrupt snapshots are skipped
                continue

    def _restore_one(self, snapshot: dict) -> None:
        scenario = self.effective_scenario(snapshot.get("scenario", "default"))
        session = Session(
            id=snapshot["session_id"],
            scenario=scenario,
            interceptor=LlmInterceptor(scenario, self._send),
        )
        if snapshot.get("dataset"):
            raw = base64.b64decode(snapshot["dataset"]["csv_b64"])
            session.dataset = load_csv(raw, snapshot["dataset"]["name"])
            session.dataset_raw = raw
        session.query = snapshot.get("query")
        session.next_factor = snapshot.get("next_factor", 1)
        for item in snapshot.get("factors", []):
            factor = Factor(
                id=item["id"],
                title=item["title"],
                source_columns=list(item["source_columns"]),
                criteria=item["criteria"],
                provocation=item["provocation"],
                provocation_stale=item.get("provocation_stale", False),
                importance=Importance.parse(item["importance"]),
                filter=parse_filter(item["filter"]) if item.get("filter") else None,
            )
            session.factors.append(factor)
            if item.get("analysis") and session.dataset is not None:
                stored = item["analysis"]
                factor.analysis = FactorAnalysis(
                    factor_id=factor.id,
                    profiles=[
                        dataset_mod.profile_column(session.dataset, c)
                        for c in factor.source_columns
                    ],
                    local_shortlist=[
                        RowMatch(m["row_id"], m["reason"])
                        for m in stored["local_shortlist"]
                    ],
                    message=stored["message"],
                    llm_reasons={
                        int(k): v for k, v in item.get("llm_reasons", {}).items()
                    },
                )
            if item.get("status") == FactorStatus.ANALYZED.value and factor.analysis:
                factor.status = FactorStatus.ANALYZED
            elif session.dataset is not None:
                refresh_status(factor, session.dataset)
        session.shortlist_stale = True
        self.sessions[session.id] = session


def create_app(config: Optional[ServiceConfig] = None) -> FastAPI:
    service = ShortlistService(config or ServiceConfig())
    app = FastAPI(title="provoscope", version="0.1.0")
    app.state.service = service

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "retriable": exc.retriable},
        )

    @app.exception_handler(MissingScenarioFile)
    async def scenario_file_handler(request: Request, exc: MissingScenarioFile):
        return JSONResponse(
            status_code=500,
            content={"code": "scenario_file_missing", "message": str(exc), "retriable": False},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        # Keep the uniform error body even for body/shape validation.
        return JSONResponse(
            status_code=422,
            content={"code": "validation_error", "message": str(exc.errors()), "retriable": False},
        )

    @app.post("/api/sessions", status_code=201)
    def create_session():
        session = service.create_session()
        return _session_summary(session)

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_summary(service.get_session(session_id))

    @app.get("/api/sessions/{session_id}/rows")
    def dataset_rows(session_id: str):
        session = service.get_session(session_id)
        if session.dataset is None:
            raise ApiError(409, "no_dataset", "no dataset loaded in this session")
        return {
            "headers": list(session.dataset.headers),
            "rows": [
                {"id_": row.id_, "cells": [c.raw for c in row.cells]}
                for row in session.dataset.rows
            ],
        }

    @app.post("/api/sessions/{session_id}/dataset")
    def upload_dataset(session_id: str, file: UploadFile):
        session = service.get_session(session_id)
        data = file.file.read()
        return service.upload_dataset(session, data, file.filename or "upload.csv")

    @app.post("/api/sessions/{session_id}/query")
    def run_query(session_id: str, body: QueryBody):
        return service.run_query(service.get_session(session_id), body.text)

    @app.post("/api/sessions/{session_id}/factors", status_code=201)
    def spawn_factor(session_id: str):
        return service.spawn_factor(service.get_session(session_id))

    @app.patch("/api/sessions/{session_id}/factors/{fid}")
    def patch_factor(session_id: str, fid: str, body: FactorPatch):
        return service.patch_factor(service.get_session(session_id), fid, body)

    @app.delete("/api/sessions/{session_id}/factors/{fid}", status_code=204)
    def delete_factor(session_id: str, fid: str):
        service.delete_factor(service.get_session(session_id), fid)
        return Response(status_code=204)

    @app.post("/api/sessions/{session_id}/factors/{fid}/analyze")
    def analyze_factor_endpoint(session_id: str, fid: str):
        return service.analyze(service.get_session(session_id), fid)

    @app.post("/api/sessions/{session_id}/shortlist")
    def shortlist(session_id: str):
        return service.shortlist(service.get_session(session_id))

    @app.get("/api/scenarios")
    def list_scenarios():
        return {
            "scenarios": [
                {"display_name": s.display_name, "mode": s.mode.value}
                for s in service.scenarios.list()
            ]
        }

    @app.post("/api/sessions/{session_id}/scenario")
    def bind_scenario(session_id: str, body: ScenarioBody):
        return service.bind_scenario(service.get_session(session_id), body.name)

    ui_dir = config.ui_dir if config else None
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
