"""File formats: scenario documents, vote ledgers, configs, and reports.

Everything on disk is UTF-8 JSON. Canonical emission sorts every collection
by identifier and every map by key, so emitted files are byte-stable and
diffable regardless of input order. Parsing returns diagnostics as data
(code, location, message) split into syntax and validation classes; it
never raises on malformed content.

docs/scenario-format.md documents the full grammar.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Mapping, Optional

from .classify import VERDICTS, VoteLedger
from .config import CONFIG_DEFAULTS
from .model import (
    ContingentInstrument,
    EventScenario,
    HazardModel,
    LossItem,
    ResponseAction,
    ScenarioDocument,
    Synergy,
    validate_model,
)

SUPPORTED_SCHEMA_VERSIONS = (1,)

REPORT_FORMATS = ("human", "machine", "plotdata")


class UsageError(ValueError):
    """Caller asked for something the interface does not offer."""


@dataclass(frozen=True)
class Diagnostic:
    """One parse or validation finding, located by JSON pointer."""

    code: str
    kind: str  # "syntax" or "validation"
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} ({self.kind}) at {self.location}: {self.message}"


def canonical_json(payload: Any) -> str:
    """The one serialization used for files, digests, and wire payloads."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def document_digest(payload: Any) -> str:
    """Hex sha256 of the canonical serialization; platform-stable."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Typed getters. Each appends a syntax diagnostic and returns a fallback, so
# a single pass collects every problem instead of stopping at the first.
# ---------------------------------------------------------------------------


def _get_map(obj, key, loc, diags, required=True) -> dict:
    value = obj.get(key)
    if value is None:
        if required:
            diags.append(Diagnostic("E_MISSING", "syntax", f"{loc}/{key}", "required object missing"))
        return {}
    if not isinstance(value, dict):
        diags.append(Diagnostic("E_TYPE", "syntax", f"{loc}/{key}", f"expected object, got {type(value).__name__}"))
        return {}
    return value


def _get_list(obj, key, loc, diags, required=False) -> list:
    value = obj.get(key)
    if value is None:
        if required:
            diags.append(Diagnostic("E_MISSING", "syntax", f"{loc}/{key}", "required array missing"))
        return []
    if not isinstance(value, list):
        diags.append(Diagnostic("E_TYPE", "syntax", f"{loc}/{key}", f"expected array, got {type(value).__name__}"))
        return []
    return value


def _get_str(obj, key, loc, diags, required=True, default="") -> str:
    value = obj.get(key)
    if value is None:
        if required:
            diags.append(Diagnostic("E_MISSING", "syntax", f"{loc}/{key}", "required string missing"))
        return default
    if not isinstance(value, str):
        diags.append(Diagnostic("E_TYPE", "syntax", f"{loc}/{key}", f"expected string, got {type(value).__name__}"))
        return default
    return value


def _get_num(obj, key, loc, diags, required=True, default=0.0) -> float:
    value = obj.get(key)
    if value is None:
        if required:
            diags.append(Diagnostic("E_MISSING", "syntax", f"{loc}/{key}", "required number missing"))
        return default
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        diags.append(Diagnostic("E_TYPE", "syntax", f"{loc}/{key}", f"expected number, got {type(value).__name__}"))
        return default
    return float(value)


def _get_int(obj, key, loc, diags, required=True, default=0) -> int:
    value = obj.get(key)
    if value is None:
        if required:
            diags.append(Diagnostic("E_MISSING", "syntax", f"{loc}/{key}", "required integer missing"))
        return default
    if isinstance(value, bool) or not isinstance(value, int):
        diags.append(Diagnostic("E_TYPE", "syntax", f"{loc}/{key}", f"expected integer, got {type(value).__name__}"))
        return default
    return value


def _num_map(obj, key, loc, diags) -> dict[str, float]:
    raw = _get_map(obj, key, loc, diags, required=False)
    out: dict[str, float] = {}
    for k, v in raw.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            diags.append(
                Diagnostic("E_TYPE", "syntax", f"{loc}/{key}/{k}", f"expected number, got {type(v).__name__}")
            )
            continue
        out[str(k)] = float(v)
    return out


def _load_json(text: str, diags: list[Diagnostic]) -> Optional[Any]:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        diags.append(
            Diagnostic("E_JSON", "syntax", f"line {exc.lineno} col {exc.colno}", exc.msg)
        )
        return None


# ---------------------------------------------------------------------------
# Scenario documents
# ---------------------------------------------------------------------------


def parse_scenario(text: str) -> tuple[Optional[ScenarioDocument], list[Diagnostic]]:
    """Parse a scenario file into a canonical-ordered document.

    Returns (document, diagnostics). The document is None when the text is
    structurally unusable; validation findings (bad ranges, dangling
    references) come back as diagnostics alongside a parsed document so the
    caller can show all of them at once.
    """
    diags: list[Diagnostic] = []
    root = _load_json(text, diags)
    if root is None:
        return None, diags
    if not isinstance(root, dict):
        diags.append(Diagnostic("E_TYPE", "syntax", "/", "top level must be an object"))
        return None, diags

    version = _get_int(root, "schema_version", "", diags, default=-1)
    if version not in SUPPORTED_SCHEMA_VERSIONS and version != -1:
        diags.append(
            Diagnostic(
                "E_SCHEMA_VERSION",
                "syntax",
                "/schema_version",
                f"unsupported schema_version {version}; supported: {list(SUPPORTED_SCHEMA_VERSIONS)}",
            )
        )

    hz = _get_map(root, "hazard", "", diags)
    events = []
    for idx, entry in enumerate(_get_list(hz, "events", "/hazard", diags)):
        loc = f"/hazard/events/{idx}"
        if not isinstance(entry, dict):
            diags.append(Diagnostic("E_TYPE", "syntax", loc, "expected object"))
            continue
        events.append(
            EventScenario(
                event_id=_get_str(entry, "event_id", loc, diags),
                annual_probability=_get_num(entry, "annual_probability", loc, diags),
                magnitudes=_num_map(entry, "magnitudes", loc, diags),
            )
        )
    hazard = HazardModel(
        hazard_id=_get_str(hz, "hazard_id", "/hazard", diags),
        name=_get_str(hz, "name", "/hazard", diags, required=False),
        events=tuple(sorted(events, key=lambda e: e.event_id)),
        currency_unit=_get_str(hz, "currency_unit", "/hazard", diags, required=False, default="USD"),
    )

    losses = []
    for idx, entry in enumerate(_get_list(root, "losses", "", diags)):
        loc = f"/losses/{idx}"
        if not isinstance(entry, dict):
            diags.append(Diagnostic("E_TYPE", "syntax", loc, "expected object"))
            continue
        tol = _get_str(entry, "tolerability", loc, diags, required=False, default="unclassified")
        losses.append(
            LossItem(
                loss_id=_get_str(entry, "loss_id", loc, diags),
                description=_get_str(entry, "description", loc, diags, required=False),
                category=_get_str(entry, "category", loc, diags),
                incidence=_num_map(entry, "incidence", loc, diags),
                tolerability=tol,
            )
        )

    actions = []
    for idx, entry in enumerate(_get_list(root, "actions", "", diags)):
        loc = f"/actions/{idx}"
        if not isinstance(entry, dict):
            diags.append(Diagnostic("E_TYPE", "syntax", loc, "expected object"))
            continue
        actions.append(
            ResponseAction(
                action_id=_get_str(entry, "action_id", loc, diags),
                annual_cost=_get_num(entry, "annual_cost", loc, diags, required=False),
                capital_cost=_get_num(entry, "capital_cost", loc, diags, required=False),
                lifetime_years=_get_int(entry, "lifetime_years", loc, diags, required=False, default=1),
                reductions=_num_map(entry, "reductions", loc, diags),
            )
        )

    instruments = []
    for idx, entry in enumerate(_get_list(root, "instruments", "", diags)):
        loc = f"/instruments/{idx}"
        if not isinstance(entry, dict):
            diags.append(Diagnostic("E_TYPE", "syntax", loc, "expected object"))
            continue
        instruments.append(
            ContingentInstrument(
                instrument_id=_get_str(entry, "instrument_id", loc, diags),
                covers=_get_str(entry, "covers", loc, diags),
                coverage=_get_num(entry, "coverage", loc, diags),
                loading=_get_num(entry, "loading", loc, diags, required=False, default=1.0),
                fixed_annual_cost=_get_num(entry, "fixed_annual_cost", loc, diags, required=False),
            )
        )

    synergies = []
    for idx, entry in enumerate(_get_list(root, "synergies", "", diags)):
        loc = f"/synergies/{idx}"
        if not isinstance(entry, dict):
            diags.append(Diagnostic("E_TYPE", "syntax", loc, "expected object"))
            continue
        synergies.append(
            Synergy(
                p_action=_get_str(entry, "p_action", loc, diags),
                c_instrument=_get_str(entry, "c_instrument", loc, diags),
                discounted_loading=_get_num(entry, "discounted_loading", loc, diags),
            )
        )

    groups = []
    for idx, entry in enumerate(_get_list(root, "income_groups", "", diags)):
        if not isinstance(entry, str):
            diags.append(Diagnostic("E_TYPE", "syntax", f"/income_groups/{idx}", "expected string"))
            continue
        groups.append(entry)

    defaults = _get_map(root, "appraisal_defaults", "", diags, required=False)
    unknown = set(defaults) - set(CONFIG_DEFAULTS)
    if unknown:
        diags.append(
            Diagnostic(
                "E_CONFIG_KEY",
                "syntax",
                "/appraisal_defaults",
                f"unknown setting(s): {sorted(unknown)}",
            )
        )
        defaults = {k: v for k, v in defaults.items() if k in CONFIG_DEFAULTS}

    if any(d.kind == "syntax" for d in diags):
        return None, diags

    # Canonical order at construction: emitted files and float accumulation
    # are then independent of input order.
    doc = ScenarioDocument(
        schema_version=version,
        hazard=hazard,
        losses=tuple(sorted(losses, key=lambda l: l.loss_id)),
        actions=tuple(sorted(actions, key=lambda a: a.action_id)),
        instruments=tuple(sorted(instruments, key=lambda i: i.instrument_id)),
        synergies=tuple(sorted(synergies, key=lambda s: (s.p_action, s.c_instrument))),
        income_groups=tuple(sorted(groups)),
        appraisal_defaults=defaults,
    )
    for violation in validate_model(doc):
        diags.append(Diagnostic(violation.code, "validation", violation.entity, violation.message))
    return doc, diags


def scenario_to_dict(doc: ScenarioDocument) -> dict:
    return {
        "schema_version": doc.schema_version,
        "hazard": {
            "hazard_id": doc.hazard.hazard_id,
            "name": doc.hazard.name,
            "currency_unit": doc.hazard.currency_unit,
            "events": [
                {
                    "event_id": ev.event_id,
                    "annual_probability": ev.annual_probability,
                    "magnitudes": dict(sorted(ev.magnitudes.items())),
                }
                for ev in sorted(doc.hazard.events, key=lambda e: e.event_id)
            ],
        },
        "losses": [
            {
                "loss_id": l.loss_id,
                "description": l.description,
                "category": l.category,
                "incidence": dict(sorted(l.incidence.items())),
                "tolerability": l.tolerability,
            }
            for l in sorted(doc.losses, key=lambda l: l.loss_id)
        ],
        "actions": [
            {
                "action_id": a.action_id,
                "annual_cost": a.annual_cost,
                "capital_cost": a.capital_cost,
                "lifetime_years": a.lifetime_years,
                "reductions": dict(sorted(a.reductions.items())),
            }
            for a in sorted(doc.actions, key=lambda a: a.action_id)
        ],
        "instruments": [
            {
                "instrument_id": i.instrument_id,
                "covers": i.covers,
                "coverage": i.coverage,
                "loading": i.loading,
                "fixed_annual_cost": i.fixed_annual_cost,
            }
            for i in sorted(doc.instruments, key=lambda i: i.instrument_id)
        ],
        "synergies": [
            {
                "p_action": s.p_action,
                "c_instrument": s.c_instrument,
                "discounted_loading": s.discounted_loading,
            }
            for s in sorted(doc.synergies, key=lambda s: (s.p_action, s.c_instrument))
        ],
        "income_groups": sorted(doc.income_groups),
        "appraisal_defaults": {k: doc.appraisal_defaults[k] for k in sorted(doc.appraisal_defaults)},
    }


def emit_scenario(doc: ScenarioDocument) -> str:
    """Canonical byte-stable serialization; parse(emit(doc)) == doc."""
    return canonical_json(scenario_to_dict(doc))


def scenario_digest(doc: ScenarioDocument) -> str:
    return document_digest(scenario_to_dict(doc))


# ---------------------------------------------------------------------------
# Vote ledgers
# ---------------------------------------------------------------------------


def parse_votes(text: str) -> tuple[Optional[VoteLedger], list[Diagnostic]]:
    diags: list[Diagnostic] = []
    root = _load_json(text, diags)
    if root is None:
        return None, diags
    if not isinstance(root, dict):
        diags.append(Diagnostic("E_TYPE", "syntax", "/", "top level must be an object"))
        return None, diags

    version = _get_int(root, "schema_version", "", diags, default=-1)
    if version not in SUPPORTED_SCHEMA_VERSIONS and version != -1:
        diags.append(
            Diagnostic("E_SCHEMA_VERSION", "syntax", "/schema_version", f"unsupported schema_version {version}")
        )
    digest = root.get("scenario_digest")
    if digest is not None and not isinstance(digest, str):
        diags.append(Diagnostic("E_TYPE", "syntax", "/scenario_digest", "expected string or null"))
        digest = None

    groups = []
    for idx, entry in enumerate(_get_list(root, "groups", "", diags, required=True)):
        if not isinstance(entry, str):
            diags.append(Diagnostic("E_TYPE", "syntax", f"/groups/{idx}", "expected string"))
            continue
        groups.append(entry)

    votes = []
    for idx, entry in enumerate(_get_list(root, "votes", "", diags, required=True)):
        loc = f"/votes/{idx}"
        if not (isinstance(entry, list) and len(entry) == 3 and all(isinstance(x, str) for x in entry)):
            diags.append(Diagnostic("E_TYPE", "syntax", loc, "expected [group, loss_id, verdict]"))
            continue
        if entry[2] not in VERDICTS:
            diags.append(
                Diagnostic("E_VERDICT", "validation", loc, f"verdict {entry[2]!r} not in {VERDICTS}")
            )
            continue
        votes.append((entry[0], entry[1], entry[2]))

    status = _get_str(root, "status", "", diags, required=False, default="open")
    if status not in ("open", "closed"):
        diags.append(Diagnostic("E_STATUS", "validation", "/status", f"status {status!r} invalid"))
        status = "open"

    if any(d.kind == "syntax" for d in diags):
        return None, diags
    ledger = VoteLedger(
        schema_version=version,
        session_id=_get_str(root, "session_id", "", diags, required=False, default="session-1"),
        scenario_digest=digest,
        groups=tuple(groups),
        votes=tuple(votes),
        status=status,
    )
    return ledger, diags


def votes_to_dict(ledger: VoteLedger) -> dict:
    return {
        "schema_version": ledger.schema_version,
        "session_id": ledger.session_id,
        "scenario_digest": ledger.scenario_digest,
        "groups": list(ledger.groups),
        "votes": [list(v) for v in sorted(ledger.votes)],
        "status": ledger.status,
    }


def emit_votes(ledger: VoteLedger) -> str:
    return canonical_json(votes_to_dict(ledger))


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def parse_config(text: str) -> tuple[Optional[dict], list[Diagnostic]]:
    """Parse a config-override file into a plain dict for resolve_config."""
    diags: list[Diagnostic] = []
    root = _load_json(text, diags)
    if root is None:
        return None, diags
    if not isinstance(root, dict):
        diags.append(Diagnostic("E_TYPE", "syntax", "/", "top level must be an object"))
        return None, diags
    unknown = set(root) - set(CONFIG_DEFAULTS)
    if unknown:
        diags.append(
            Diagnostic("E_CONFIG_KEY", "validation", "/", f"unknown setting(s): {sorted(unknown)}")
        )
    out = {}
    for key in root:
        if key in CONFIG_DEFAULTS:
            out[key] = root[key]
    return out, diags


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _as_record_dict(record) -> dict:
    if isinstance(record, Mapping):
        return dict(record)
    return record.to_dict()


def _money(value, unit: str) -> str:
    return f"{value:,.2f} {unit}/yr"


def emit_report(record, format: str = "human") -> str:
    """Render a cycle record: human tables, the machine JSON mirror, or the
    plot-ready gap series. Unknown formats raise UsageError."""
    if format not in REPORT_FORMATS:
        raise UsageError(f"unknown report format {format!r}; expected one of {REPORT_FORMATS}")
    data = _as_record_dict(record)
    if format == "machine":
        return canonical_json(data)
    if format == "plotdata":
        return canonical_json(gap_plotdata(data))
    return _human_report(data)


def gap_plotdata(data: Mapping) -> dict:
    """Two stacked series comparing accept-all against the optimized split,
    on the tolerable cluster where the comparison is money-vs-money."""
    gap = data.get("gap", {})
    step2 = data.get("step2", {})
    outlay = step2.get("outlay", {})
    unopt = gap.get("unoptimized_total", 0.0)
    return {
        "kind": "gap-comparison",
        "currency_unit": data.get("currency_unit", "USD"),
        "series": [
            {
                "name": "unoptimized",
                "segments": {"P": 0.0, "C": 0.0, "L": unopt},
                "total": unopt,
            },
            {
                "name": "optimized",
                "segments": {
                    "P": outlay.get("p_cost", 0.0),
                    "C": outlay.get("c_cost", 0.0),
                    "L": outlay.get("accepted_weighted_loss", 0.0),
                },
                "total": gap.get("optimized_tolerable_total", outlay.get("total", 0.0)),
            },
        ],
        "step1_cost": data.get("step1", {}).get("annualized_cost", 0.0),
        "optimized_total": gap.get("optimized_total", 0.0),
        "savings": gap.get("savings", 0.0),
        "intolerable_exposure": gap.get("intolerable_exposure", {}),
        "retained_by_default": gap.get("retained_by_default", []),
    }


def _human_report(data: Mapping) -> str:
    unit = data.get("currency_unit", "USD")
    cfg = data.get("config", {})
    disclosures = data.get("disclosures", {})
    partition = data.get("partition", {})
    step1 = data.get("step1", {})
    step2 = data.get("step2", {})
    outlay = step2.get("outlay", {})
    gap = data.get("gap", {})
    modes = data.get("solver_modes", {})

    lines: list[str] = []
    push = lines.append
    push("PCL cycle report")
    push("=" * 60)
    push(f"cycle {data.get('cycle_id', '?')}  revision {data.get('revision', '?')}  lineage {data.get('lineage', '?')}")
    push(f"inputs sha256:{str(data.get('inputs_digest', ''))[:16]}  created_at {data.get('created_at', 0)}")
    push(f"objective mode: {cfg.get('mode', '?')}   currency: {unit}")
    push("")

    push(f"Consideration filter (annual probability > {cfg.get('likelihood_threshold', '?')})")
    considered = data.get("considered_events", [])
    push(f"  considered events: {', '.join(considered) if considered else '(none)'}")
    retained = gap.get("retained_by_default", [])
    if retained:
        push("  retained by default (not dropped, outside this cycle's arithmetic):")
        for item in retained:
            if isinstance(item, Mapping):
                push(
                    f"    {item.get('loss_id')}/{item.get('event_id')}: p={item.get('annual_probability')}"
                    f" magnitude={item.get('magnitude')} expected={item.get('expected_annual_exposure')}"
                )
            else:
                push(f"    {item[0]}/{item[1]}")
    else:
        push("  retained by default: (none)")
    push("")

    push(f"Classification ({partition.get('rule_used', '?')})")
    push(f"  intolerable: {', '.join(partition.get('intolerable', [])) or '(none)'}")
    push(f"  tolerable:   {', '.join(partition.get('tolerable', [])) or '(none)'}")
    push("")

    push(
        f"Step 1: eliminate intolerable losses"
        f" (target residual <= {step1.get('epsilon', '?')}, solver {modes.get('step1', step1.get('solver_mode', '?'))})"
    )
    selected = step1.get("selected", [])
    push(f"  selected actions: {', '.join(selected) if selected else '(none needed)'}")
    push(f"  annualized cost: {_money(step1.get('annualized_cost', 0.0), unit)}")
    for loss_id, resid in sorted((step1.get("residuals") or {}).items()):
        push(f"  residual fraction {loss_id}: {resid:.6g}")
    if not step1.get("feasible", True):
        push("  ** INFEASIBLE: no action set reaches the target; best achievable shown.")
        push("  ** Escalate: intolerable risk remains above the elimination target.")
    push("")

    push(
        f"Step 2: optimize tolerable outlay"
        f" (hardship x{cfg.get('hardship_multiplier', '?')}, solver {modes.get('step2', step2.get('solver_mode', '?'))})"
    )
    push(f"  preemptive:  {', '.join(step2.get('p_selected', [])) or '(none)'}")
    push(f"  contingent:  {', '.join(step2.get('c_selected', [])) or '(none)'}")
    loadings = disclosures.get("instrument_loadings", {})
    for inst_id in sorted(loadings):
        row = loadings[inst_id]
        note = " (synergy discount active)" if row.get("synergy_active") else ""
        push(f"    {inst_id}: base loading {row.get('base')}, effective {row.get('effective')}{note}")
    assignments = step2.get("assignments", {})
    if assignments:
        push("  cluster assignment: " + ", ".join(f"{k}->{v}" for k, v in sorted(assignments.items())))
    push(
        "  outlay: P "
        + f"{outlay.get('p_cost', 0.0):,.2f} + C {outlay.get('c_cost', 0.0):,.2f}"
        + f" + L {outlay.get('accepted_weighted_loss', 0.0):,.2f} = {outlay.get('total', 0.0):,.2f} {unit}/yr"
    )
    flagged = [
        loss_id
        for loss_id, row in sorted((data.get("appraisal", {}).get("per_loss") or {}).items())
        if isinstance(row, Mapping) and row.get("flag_sociocultural")
    ]
    if flagged:
        push(f"  note: sociocultural losses monetized from scenario magnitudes: {', '.join(flagged)}")
    push("")

    push("Gap (unoptimized vs optimized)")
    push(f"  accept-all tolerable losses: {_money(gap.get('unoptimized_total', 0.0), unit)}")
    push(f"  optimized total (step 1 + step 2): {_money(gap.get('optimized_total', 0.0), unit)}")
    push(f"  optimized tolerable cluster: {_money(gap.get('optimized_tolerable_total', 0.0), unit)}")
    push(f"  savings on the tolerable cluster: {_money(gap.get('savings', 0.0), unit)}")
    exposure = gap.get("intolerable_exposure", {})
    if exposure.get("loss_ids"):
        push(
            f"  intolerable exposure (eliminated by step 1, unpriced here): "
            f"{', '.join(exposure['loss_ids'])} (EAL {exposure.get('total_eal', 0.0):,.2f} {unit}/yr before action)"
        )
    push("")
    return "\n".join(lines)
