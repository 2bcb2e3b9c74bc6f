"""HTTP facade over scenarios, consultation sessions, cycles, and what-if
re-optimization.

Every response body is exactly the corresponding engine result; the routes
validate, look up, delegate, and serialize, nothing more. What-if runs are
ephemeral by design: committing one requires a fresh cycle POST, so the
stored history only ever grows through deliberate runs.
"""
from __future__ import annotations

import itertools
import json
import os
from dataclasses import replace
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse, Response

from .classify import (
    AggregationRule,
    IncompleteVotesError,
    SessionStateError,
    classify,
    close_session,
    missing_votes,
    open_session,
    record_vote,
    register_groups,
    session_from_ledger,
)
from .config import resolve_config
from .cycle import (
    CycleError,
    CycleRecord,
    RecordStore,
    record_from_dict,
    run_cycle,
)
from .model import ModelError, ScenarioDocument
from .scenario_io import (
    REPORT_FORMATS,
    UsageError,
    canonical_json,
    emit_report,
    parse_scenario,
    parse_votes,
    scenario_digest,
)

#: Config keys a what-if request may override.
WHATIF_CONFIG_KEYS = ("epsilon", "hardship_multiplier", "equity_weights", "mode")


def _error(status: int, code: str, message: str, diagnostics: Optional[list] = None) -> JSONResponse:
    body = {"error": {"code": code, "message": message}}
    if diagnostics:
        body["error"]["diagnostics"] = diagnostics
    return JSONResponse(status_code=status, content=body)


def create_app(store_dir: Optional[str] = None) -> FastAPI:
    """Build the service around one record store directory."""
    app = FastAPI(title="pcl service", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    store = RecordStore(store_dir or os.environ.get("PCL_STORE") or "./pcl-store")
    scenarios: dict[str, dict] = {}  # scenario_id -> {"doc", "digest"}
    sessions: dict[str, dict] = {}  # session_id -> {"session", "scenario_id"}
    records: dict[str, CycleRecord] = {}  # cycle_id -> record (this process)
    session_seq = itertools.count(1)

    def _find_record(cycle_id: str) -> Optional[CycleRecord]:
        if cycle_id in records:
            return records[cycle_id]
        for lineage in store.lineages():
            for data in store.list(lineage):
                if data.get("cycle_id") == cycle_id:
                    record = record_from_dict(data)
                    records[cycle_id] = record
                    return record
        return None

    def _doc_for(scenario_id: str) -> Optional[ScenarioDocument]:
        entry = scenarios.get(scenario_id)
        return entry["doc"] if entry else None

    @app.post("/scenarios")
    def upload_scenario(payload: dict = Body(...)):
        doc, diags = parse_scenario(json.dumps(payload))
        if doc is None or diags:
            return _error(
                400,
                "E_SCENARIO",
                "scenario rejected",
                [
                    {"code": d.code, "kind": d.kind, "location": d.location, "message": d.message}
                    for d in diags
                ],
            )
        digest = scenario_digest(doc)
        scenario_id = "s" + digest[:12]
        scenarios[scenario_id] = {"doc": doc, "digest": digest}
        return {
            "scenario_id": scenario_id,
            "digest": digest,
            "hazard_id": doc.hazard.hazard_id,
            "currency_unit": doc.hazard.currency_unit,
            "losses": [l.loss_id for l in doc.losses],
            "income_groups": list(doc.income_groups),
        }

    @app.post("/scenarios/{scenario_id}/sessions")
    def open_consultation(scenario_id: str, payload: dict = Body(default={})):
        doc = _doc_for(scenario_id)
        if doc is None:
            return _error(404, "E_UNKNOWN_SCENARIO", f"unknown scenario {scenario_id!r}")
        try:
            config = resolve_config(doc.appraisal_defaults, payload.get("config"))
            session = open_session(
                doc,
                threshold=config.likelihood_threshold,
                session_id=f"sess-{next(session_seq):04d}",
                scenario_digest=scenarios[scenario_id]["digest"],
            )
            groups = payload.get("groups", [])
            if groups:
                session = register_groups(session, list(groups))
        except ModelError as exc:
            return _error(400, "E_SESSION", str(exc))
        sessions[session.session_id] = {"session": session, "scenario_id": scenario_id}
        return {
            "session_id": session.session_id,
            "scenario_id": scenario_id,
            "groups": list(session.groups),
            "considered_losses": list(session.considered_losses),
            "retained_by_default": [list(p) for p in session.retained],
            "likelihood_threshold": session.likelihood_threshold,
            "status": session.status,
        }

    @app.post("/sessions/{session_id}/votes")
    def post_votes(session_id: str, payload: dict = Body(...)):
        entry = sessions.get(session_id)
        if entry is None:
            return _error(404, "E_UNKNOWN_SESSION", f"unknown session {session_id!r}")
        session = entry["session"]
        votes = payload.get("votes")
        if votes is None:
            votes = [payload]  # single-vote body
        try:
            for vote in votes:
                if not isinstance(vote, dict):
                    return _error(400, "E_VOTE", "each vote must be an object")
                session = record_vote(
                    session,
                    str(vote.get("group", "")),
                    str(vote.get("loss_id", "")),
                    str(vote.get("verdict", "")),
                )
        except SessionStateError as exc:
            return _error(409, "E_CLOSED", str(exc))
        except ModelError as exc:
            return _error(400, "E_VOTE", str(exc))
        entry["session"] = session
        return {
            "session_id": session_id,
            "tally": session.tally(),
            "missing": [list(p) for p in missing_votes(session)],
            "status": session.status,
        }

    @app.post("/sessions/{session_id}/classify")
    def classify_session(session_id: str, payload: dict = Body(default={})):
        entry = sessions.get(session_id)
        if entry is None:
            return _error(404, "E_UNKNOWN_SESSION", f"unknown session {session_id!r}")
        session = entry["session"]
        threshold = payload.get("vote_threshold")
        doc = _doc_for(entry["scenario_id"])
        try:
            if threshold is None:
                threshold = resolve_config(doc.appraisal_defaults).vote_threshold
            partition = classify(session, AggregationRule(threshold=float(threshold)))
        except IncompleteVotesError as exc:
            return _error(
                400, "E_INCOMPLETE", str(exc), [list(p) for p in exc.missing]
            )
        except ModelError as exc:
            return _error(400, "E_CLASSIFY", str(exc))
        if session.status == "open":
            entry["session"] = close_session(session)
        return {"session_id": session_id, "partition": partition.to_dict()}

    @app.post("/scenarios/{scenario_id}/cycles")
    def post_cycle(scenario_id: str, payload: dict = Body(default={})):
        doc = _doc_for(scenario_id)
        if doc is None:
            return _error(404, "E_UNKNOWN_SCENARIO", f"unknown scenario {scenario_id!r}")
        session_id = payload.get("session_id")
        entry = sessions.get(session_id)
        if entry is None:
            return _error(404, "E_UNKNOWN_SESSION", f"unknown session {session_id!r}")
        if entry["scenario_id"] != scenario_id:
            return _error(
                400,
                "E_SCENARIO_MISMATCH",
                f"session {session_id!r} belongs to scenario {entry['scenario_id']!r}",
            )
        try:
            config = resolve_config(doc.appraisal_defaults, payload.get("config"))
            record = run_cycle(
                doc,
                entry["session"],
                config,
                store=store,
                deterministic=bool(payload.get("deterministic", False)),
            )
        except IncompleteVotesError as exc:
            return _error(400, "E_INCOMPLETE", str(exc), [list(p) for p in exc.missing])
        except (CycleError, ModelError) as exc:
            return _error(400, "E_CYCLE", str(exc))
        records[record.cycle_id] = record
        return record.to_dict()

    @app.post("/cycles/{cycle_id}/whatif")
    def whatif(cycle_id: str, payload: dict = Body(default={})):
        record = _find_record(cycle_id)
        if record is None:
            return _error(404, "E_UNKNOWN_CYCLE", f"unknown cycle {cycle_id!r}")

        include = [str(x) for x in payload.get("include", [])]
        exclude = [str(x) for x in payload.get("exclude", [])]
        overlap = sorted(set(include) & set(exclude))
        if overlap:
            return _error(400, "E_CONFLICT", f"include and exclude overlap: {overlap}")

        overrides = payload.get("config") or {}
        bad_keys = sorted(set(overrides) - set(WHATIF_CONFIG_KEYS))
        if bad_keys:
            return _error(400, "E_CONFIG_KEY", f"what-if cannot override: {bad_keys}")

        doc, diags = parse_scenario(canonical_json(dict(record.scenario)))
        if doc is None or diags:
            return _error(500, "E_RECORD", "stored scenario no longer parses")
        known = {a.action_id for a in doc.actions} | {i.instrument_id for i in doc.instruments}
        unknown = sorted((set(include) | set(exclude)) - known)
        if unknown:
            return _error(400, "E_REF", f"unknown candidate id(s): {unknown}")

        # Exclusions remove candidates from both steps; synergies that
        # reference a removed candidate go with it.
        excluded = set(exclude)
        doc = replace(
            doc,
            actions=tuple(a for a in doc.actions if a.action_id not in excluded),
            instruments=tuple(i for i in doc.instruments if i.instrument_id not in excluded),
            synergies=tuple(
                s
                for s in doc.synergies
                if s.p_action not in excluded and s.c_instrument not in excluded
            ),
        )

        raw_votes = payload.get("vote_overrides", [])
        if isinstance(raw_votes, dict):  # {group: {loss: verdict}}
            triples = [
                (group, loss, verdict)
                for group, by_loss in raw_votes.items()
                for loss, verdict in by_loss.items()
            ]
        else:
            triples = [tuple(v) for v in raw_votes]

        ledger, _ = parse_votes(canonical_json(dict(record.votes)))
        if ledger is None:
            return _error(500, "E_RECORD", "stored votes no longer parse")
        ledger = replace(ledger, status="open", scenario_digest=None)
        try:
            config = resolve_config(None, dict(record.config), dict(overrides))
            session = session_from_ledger(doc, ledger, threshold=config.likelihood_threshold)
            for group, loss_id, verdict in triples:
                session = record_vote(session, str(group), str(loss_id), str(verdict))
            result = run_cycle(
                doc,
                session,
                config,
                store=None,  # ephemeral by contract
                deterministic=True,
                require=tuple(include),
            )
        except IncompleteVotesError as exc:
            return _error(400, "E_INCOMPLETE", str(exc), [list(p) for p in exc.missing])
        except (CycleError, ModelError) as exc:
            return _error(400, "E_WHATIF", str(exc))
        return {
            "base_cycle_id": cycle_id,
            "ephemeral": True,
            "partition": result.partition.to_dict(),
            "step1": result.step1.to_dict(),
            "step2": result.step2.to_dict(),
            "gap": result.gap.to_dict(),
            "appraisal": result.appraisal.to_dict(),
            "escalation": result.escalation,
            "disclosures": dict(result.disclosures),
            "config": dict(result.config),
        }

    @app.get("/cycles/{cycle_id}/report")
    def get_report(cycle_id: str, format: str = "machine"):
        record = _find_record(cycle_id)
        if record is None:
            return _error(404, "E_UNKNOWN_CYCLE", f"unknown cycle {cycle_id!r}")
        try:
            text = emit_report(record, format)
        except UsageError as exc:
            return _error(400, "E_FORMAT", str(exc))
        if format == "human":
            return PlainTextResponse(text)
        # The canonical text itself is the contract; do not re-serialize.
        return Response(content=text, media_type="application/json")

    @app.get("/scenarios/{scenario_id}/history")
    def get_history(scenario_id: str):
        doc = _doc_for(scenario_id)
        if doc is None:
            return _error(404, "E_UNKNOWN_SCENARIO", f"unknown scenario {scenario_id!r}")
        lineage = doc.hazard.hazard_id
        return {"lineage": lineage, "records": store.list(lineage)}

    ui_dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dist.is_dir():  # serve the built workbench when present
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dist), html=True), name="ui")

    return app
