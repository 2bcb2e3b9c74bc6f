"""One full decision cycle, its persistent record, and the gap comparison.

A cycle runs filter, classification, intolerable elimination, ancillary
propagation, and portfolio optimization in that order, then freezes the
whole thing (inputs included) into an append-only record so later revisions
can diff against it. Identical inputs produce identical decisions; only
cycle_id and created_at vary outside deterministic mode.
"""
from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .classify import (
    AggregationRule,
    ConsultationSession,
    TolerabilityPartition,
    classify,
    filter_by_likelihood,
    ledger_from_session,
    retained_exposure_detail,
)
from .config import RunConfig
from .cover import CoverSolution, eliminate_intolerable, propagate_ancillary
from .model import ActionCluster, ModelError, ScenarioDocument, expected_annual_loss, validate_model
from .portfolio import (
    Appraisal,
    AppraisalConfig,
    OutlayDecomposition,
    Portfolio,
    appraise,
    optimize,
    total_outlay,
)
from .scenario_io import (
    canonical_json,
    document_digest,
    parse_scenario,
    scenario_to_dict,
    votes_to_dict,
)


class CycleError(ModelError):
    """The cycle cannot run on these inputs as given."""


@dataclass(frozen=True)
class GapReport:
    """The unoptimized-vs-optimized comparison.

    unoptimized_total prices accept-all on the revised tolerable losses;
    optimized_total adds the step-1 cost to the step-2 outlay. savings is
    computed on the tolerable cluster only (unoptimized minus the step-2
    total), because step 1 answers a constraint, not a price signal, and
    the accept-all baseline has no step-1 counterpart to subtract against.
    Intolerable exposure is flagged unpriced rather than folded in.
    """

    unoptimized_total: float
    optimized_total: float
    optimized_tolerable_total: float
    savings: float
    intolerable_exposure: Mapping[str, object]
    retained_by_default: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "intolerable_exposure", dict(self.intolerable_exposure))
        object.__setattr__(self, "retained_by_default", tuple(self.retained_by_default))

    def to_dict(self) -> dict:
        return {
            "unoptimized_total": self.unoptimized_total,
            "optimized_total": self.optimized_total,
            "optimized_tolerable_total": self.optimized_tolerable_total,
            "savings": self.savings,
            "intolerable_exposure": dict(self.intolerable_exposure),
            "retained_by_default": [dict(r) for r in self.retained_by_default],
        }


@dataclass(frozen=True)
class CycleRecord:
    """Everything about one cycle run: the inputs verbatim, every stage's
    output, and the disclosures a reader needs to audit the numbers."""

    cycle_id: str
    lineage: str
    revision: int
    inputs_digest: str
    created_at: int
    scenario: Mapping
    votes: Mapping
    config: Mapping
    considered_events: tuple[str, ...]
    partition: TolerabilityPartition
    step1: CoverSolution
    revised_tolerable: Mapping[str, float]
    fully_addressed: tuple[str, ...]
    step2: Portfolio
    appraisal: Appraisal
    gap: GapReport
    solver_modes: Mapping[str, str]
    disclosures: Mapping[str, object]
    escalation: bool
    currency_unit: str

    def to_dict(self) -> dict:
        return {
            "cycle_id": self.cycle_id,
            "lineage": self.lineage,
            "revision": self.revision,
            "inputs_digest": self.inputs_digest,
            "created_at": self.created_at,
            "scenario": dict(self.scenario),
            "votes": dict(self.votes),
            "config": dict(self.config),
            "considered_events": list(self.considered_events),
            "partition": self.partition.to_dict(),
            "step1": self.step1.to_dict(),
            "revised_tolerable": dict(sorted(self.revised_tolerable.items())),
            "fully_addressed": list(self.fully_addressed),
            "step2": self.step2.to_dict(),
            "appraisal": self.appraisal.to_dict(),
            "gap": self.gap.to_dict(),
            "solver_modes": dict(self.solver_modes),
            "disclosures": dict(self.disclosures),
            "escalation": self.escalation,
            "currency_unit": self.currency_unit,
        }


def record_from_dict(data: Mapping) -> CycleRecord:
    """Rebuild a typed record from its stored machine form."""
    part = data["partition"]
    step1 = data["step1"]
    step2 = data["step2"]
    outlay = step2["outlay"]
    appraisal = data["appraisal"]
    gap = data["gap"]
    return CycleRecord(
        cycle_id=data["cycle_id"],
        lineage=data["lineage"],
        revision=data["revision"],
        inputs_digest=data["inputs_digest"],
        created_at=data["created_at"],
        scenario=dict(data["scenario"]),
        votes=dict(data["votes"]),
        config=dict(data["config"]),
        considered_events=tuple(data["considered_events"]),
        partition=TolerabilityPartition(
            intolerable=frozenset(part["intolerable"]),
            tolerable=frozenset(part["tolerable"]),
            retained_by_default=tuple((p[0], p[1]) for p in part["retained_by_default"]),
            rule_used=part["rule_used"],
        ),
        step1=CoverSolution(
            selected=tuple(step1["selected"]),
            annualized_cost=step1["annualized_cost"],
            residuals=dict(step1["residuals"]),
            feasible=step1["feasible"],
            epsilon=step1["epsilon"],
            solver_mode=step1["solver_mode"],
        ),
        revised_tolerable=dict(data["revised_tolerable"]),
        fully_addressed=tuple(data["fully_addressed"]),
        step2=Portfolio(
            p_selected=tuple(step2["p_selected"]),
            c_selected=tuple(step2["c_selected"]),
            assignments={k: ActionCluster(v) for k, v in step2["assignments"].items()},
            outlay=OutlayDecomposition(
                p_cost=outlay["p_cost"],
                c_cost=outlay["c_cost"],
                accepted_weighted_loss=outlay["accepted_weighted_loss"],
                total=outlay["total"],
                uncompensated_eal=outlay["uncompensated_eal"],
            ),
            solver_mode=step2["solver_mode"],
        ),
        appraisal=Appraisal(
            mode_totals=dict(appraisal["mode_totals"]),
            per_loss={k: dict(v) for k, v in appraisal["per_loss"].items()},
            per_group_burden=dict(appraisal["per_group_burden"]),
            cluster_costs=dict(appraisal["cluster_costs"]),
        ),
        gap=GapReport(
            unoptimized_total=gap["unoptimized_total"],
            optimized_total=gap["optimized_total"],
            optimized_tolerable_total=gap["optimized_tolerable_total"],
            savings=gap["savings"],
            intolerable_exposure=dict(gap["intolerable_exposure"]),
            retained_by_default=tuple(gap["retained_by_default"]),
        ),
        solver_modes=dict(data["solver_modes"]),
        disclosures=dict(data["disclosures"]),
        escalation=data["escalation"],
        currency_unit=data["currency_unit"],
    )


class RecordStore:
    """Append-only directory store: one subdirectory per scenario lineage,
    one numbered JSON file per revision."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _lineage_dir(self, lineage: str) -> Path:
        return self.root / lineage

    def _revision_paths(self, lineage: str) -> list[Path]:
        folder = self._lineage_dir(lineage)
        if not folder.is_dir():
            return []
        return sorted(folder.glob("r[0-9][0-9][0-9][0-9].json"))

    def next_revision(self, lineage: str) -> int:
        paths = self._revision_paths(lineage)
        if not paths:
            return 1
        return int(paths[-1].stem[1:]) + 1

    def append(self, record: CycleRecord) -> Path:
        folder = self._lineage_dir(record.lineage)
        folder.mkdir(parents=True, exist_ok=True)
        path = folder / f"r{record.revision:04d}.json"
        if path.exists():
            raise CycleError(f"revision {record.revision} already stored for lineage {record.lineage!r}")
        path.write_text(canonical_json(record.to_dict()), encoding="utf-8")
        return path

    def list(self, lineage: str) -> list[dict]:
        return [
            json.loads(path.read_text(encoding="utf-8"))
            for path in self._revision_paths(lineage)
        ]

    def latest(self, lineage: str) -> Optional[dict]:
        records = self.list(lineage)
        return records[-1] if records else None

    def lineages(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())


def inputs_digest(doc: ScenarioDocument, session: ConsultationSession, config: RunConfig) -> str:
    """Content hash over scenario + votes + settings; ids and timestamps are
    identity, not content, and stay out of it."""
    ledger = ledger_from_session(session)
    votes_content = {
        "groups": sorted(ledger.groups),
        "votes": [list(v) for v in sorted(ledger.votes)],
    }
    return document_digest(
        {
            "scenario": scenario_to_dict(doc),
            "votes": votes_content,
            "config": config.to_dict(),
        }
    )


def _accept_all_portfolio(loss_ids: Sequence[str]) -> Portfolio:
    return Portfolio(
        p_selected=(),
        c_selected=(),
        assignments={loss_id: ActionCluster.L for loss_id in loss_ids},
        outlay=OutlayDecomposition(0.0, 0.0, 0.0, 0.0, 0.0),
        solver_mode="exact",
    )


def run_cycle(
    doc: ScenarioDocument,
    session: ConsultationSession,
    config: RunConfig = RunConfig(),
    store: Optional[RecordStore] = None,
    deterministic: bool = False,
    revision: Optional[int] = None,
    require: Sequence[str] = (),
) -> CycleRecord:
    """Execute one cycle end to end and persist it when a store is given.

    An infeasible step 1 does not abort: step 2 still runs on the tolerable
    losses and the record carries an escalation flag, so the shortfall is
    surfaced instead of hidden.

    ``require`` pins candidates into the step-2 portfolio (the what-if
    inclusion probe); an id already selected by step 1 is dropped from it,
    since that action is in force either way.
    """
    violations = validate_model(doc)
    if violations:
        raise CycleError(
            "scenario fails validation: " + "; ".join(str(v) for v in violations[:5])
            + ("" if len(violations) <= 5 else f" (+{len(violations) - 5} more)")
        )
    if session.likelihood_threshold != config.likelihood_threshold:
        raise CycleError(
            f"session was opened at likelihood threshold {session.likelihood_threshold}, "
            f"config says {config.likelihood_threshold}; reopen the session"
        )

    filt = filter_by_likelihood(doc.hazard, config.likelihood_threshold)
    partition = classify(session, AggregationRule(threshold=config.vote_threshold))

    eal = {
        loss.loss_id: expected_annual_loss(loss.loss_id, doc.hazard, filt.considered_set)
        for loss in doc.losses
    }
    appraisal_cfg = config.appraisal()

    intolerable = sorted(partition.intolerable)
    step1 = eliminate_intolerable(
        intolerable, doc.actions, epsilon=config.epsilon, discount_rate=config.discount_rate
    )

    tolerable_pairs = [(loss_id, eal[loss_id]) for loss_id in sorted(partition.tolerable)]
    revised, fully_addressed = propagate_ancillary(step1.selected, doc.actions, tolerable_pairs)
    revised_map = dict(revised)

    step2_pairs = [
        (doc.loss(loss_id), value)
        for loss_id, value in revised
        if loss_id not in set(fully_addressed)
    ]
    remaining_actions = [a for a in doc.actions if a.action_id not in set(step1.selected)]
    step2 = optimize(
        step2_pairs,
        remaining_actions,
        doc.instruments,
        doc.synergies,
        config=appraisal_cfg,
        preselected=step1.selected,
        require=tuple(r for r in require if r not in set(step1.selected)),
        seed=config.seed,
    )

    appraisal = appraise(
        step2,
        step2_pairs,
        remaining_actions,
        doc.instruments,
        doc.synergies,
        config=appraisal_cfg,
        preselected=step1.selected,
    )

    accept_all = total_outlay(
        _accept_all_portfolio([loss_id for loss_id, _ in revised]),
        [(doc.loss(loss_id), value) for loss_id, value in revised],
        remaining_actions,
        doc.instruments,
        doc.synergies,
        config=appraisal_cfg,
        preselected=step1.selected,
    )
    gap = GapReport(
        unoptimized_total=accept_all.total,
        optimized_total=step1.annualized_cost + step2.outlay.total,
        optimized_tolerable_total=step2.outlay.total,
        savings=accept_all.total - step2.outlay.total,
        intolerable_exposure={
            "loss_ids": intolerable,
            "total_eal": sum(eal[loss_id] for loss_id in intolerable),
            "eliminated": step1.feasible,
        },
        retained_by_default=tuple(retained_exposure_detail(doc.hazard, filt.retained)),
    )

    active_actions = set(step1.selected) | set(step2.p_selected)
    loadings = {}
    for inst_id in step2.c_selected:
        inst = doc.instrument(inst_id)
        effective = inst.loading
        for syn in doc.synergies:
            if syn.c_instrument == inst_id and syn.p_action in active_actions:
                effective = min(effective, syn.discounted_loading)
        loadings[inst_id] = {
            "base": inst.loading,
            "effective": effective,
            "synergy_active": effective < inst.loading,
        }
    disclosures = {
        "epsilon": config.epsilon,
        "hardship_multiplier": config.hardship_multiplier,
        "mode": config.mode,
        "discount_rate": config.discount_rate,
        "likelihood_threshold": config.likelihood_threshold,
        "vote_threshold": config.vote_threshold,
        "instrument_loadings": loadings,
        "aggregation_rule": partition.rule_used,
    }

    digest = inputs_digest(doc, session, config)
    if deterministic:
        cycle_id = "c" + digest[:12]
        created_at = 0
    else:
        cycle_id = uuid.uuid4().hex[:12]
        created_at = int(time.time())

    lineage = doc.hazard.hazard_id
    if revision is None:
        revision = store.next_revision(lineage) if store is not None else 1

    ledger = ledger_from_session(session)
    record = CycleRecord(
        cycle_id=cycle_id,
        lineage=lineage,
        revision=revision,
        inputs_digest=digest,
        created_at=created_at,
        scenario=scenario_to_dict(doc),
        votes=votes_to_dict(ledger),
        config=config.to_dict(),
        considered_events=filt.considered_events,
        partition=partition,
        step1=step1,
        revised_tolerable=revised_map,
        fully_addressed=fully_addressed,
        step2=step2,
        appraisal=appraisal,
        gap=gap,
        solver_modes={"step1": step1.solver_mode, "step2": step2.solver_mode},
        disclosures=disclosures,
        escalation=not step1.feasible,
        currency_unit=doc.hazard.currency_unit,
    )
    if store is not None:
        store.append(record)
    return record


@dataclass(frozen=True)
class RevisionDiff:
    """What changed between two consecutive records of one lineage."""

    reclassified: Mapping[str, tuple[str, str]] = field(default_factory=dict)
    step1_added: tuple[str, ...] = ()
    step1_removed: tuple[str, ...] = ()
    step2_p_added: tuple[str, ...] = ()
    step2_p_removed: tuple[str, ...] = ()
    step2_c_added: tuple[str, ...] = ()
    step2_c_removed: tuple[str, ...] = ()
    optimized_delta: float = 0.0
    savings_delta: float = 0.0

    @property
    def empty(self) -> bool:
        return (
            not self.reclassified
            and not self.step1_added
            and not self.step1_removed
            and not self.step2_p_added
            and not self.step2_p_removed
            and not self.step2_c_added
            and not self.step2_c_removed
            and self.optimized_delta == 0.0
            and self.savings_delta == 0.0
        )

    def to_dict(self) -> dict:
        return {
            "reclassified": {k: list(v) for k, v in sorted(self.reclassified.items())},
            "step1_added": list(self.step1_added),
            "step1_removed": list(self.step1_removed),
            "step2_p_added": list(self.step2_p_added),
            "step2_p_removed": list(self.step2_p_removed),
            "step2_c_added": list(self.step2_c_added),
            "step2_c_removed": list(self.step2_c_removed),
            "optimized_delta": self.optimized_delta,
            "savings_delta": self.savings_delta,
            "empty": self.empty,
        }


def diff_records(previous: CycleRecord, current: CycleRecord) -> RevisionDiff:
    reclassified: dict[str, tuple[str, str]] = {}
    before: dict[str, str] = {}
    for loss_id in previous.partition.intolerable:
        before[loss_id] = "intolerable"
    for loss_id in previous.partition.tolerable:
        before[loss_id] = "tolerable"
    after: dict[str, str] = {}
    for loss_id in current.partition.intolerable:
        after[loss_id] = "intolerable"
    for loss_id in current.partition.tolerable:
        after[loss_id] = "tolerable"
    for loss_id in sorted(set(before) | set(after)):
        old = before.get(loss_id, "unclassified")
        new = after.get(loss_id, "unclassified")
        if old != new:
            reclassified[loss_id] = (old, new)

    def added_removed(old: Sequence[str], new: Sequence[str]):
        return (
            tuple(sorted(set(new) - set(old))),
            tuple(sorted(set(old) - set(new))),
        )

    s1_add, s1_rem = added_removed(previous.step1.selected, current.step1.selected)
    p_add, p_rem = added_removed(previous.step2.p_selected, current.step2.p_selected)
    c_add, c_rem = added_removed(previous.step2.c_selected, current.step2.c_selected)
    return RevisionDiff(
        reclassified=reclassified,
        step1_added=s1_add,
        step1_removed=s1_rem,
        step2_p_added=p_add,
        step2_p_removed=p_rem,
        step2_c_added=c_add,
        step2_c_removed=c_rem,
        optimized_delta=current.gap.optimized_total - previous.gap.optimized_total,
        savings_delta=current.gap.savings - previous.gap.savings,
    )


def revise_cycle(
    previous: CycleRecord,
    doc: ScenarioDocument,
    session: ConsultationSession,
    config: RunConfig = RunConfig(),
    store: Optional[RecordStore] = None,
    deterministic: bool = False,
) -> tuple[CycleRecord, RevisionDiff]:
    """Run a fresh cycle as the next revision of an existing lineage."""
    if doc.hazard.hazard_id != previous.lineage:
        raise CycleError(
            f"scenario lineage {doc.hazard.hazard_id!r} does not match record lineage {previous.lineage!r}"
        )
    record = run_cycle(
        doc,
        session,
        config,
        store=store,
        deterministic=deterministic,
        revision=previous.revision + 1,
    )
    return record, diff_records(previous, record)


def compare_scenarios(record: CycleRecord) -> GapReport:
    """Recompute the gap comparison from the record's embedded inputs.

    Returns the same numbers run_cycle stored; exists so a reader can audit
    a record without trusting its stored gap.
    """
    doc, diags = parse_scenario(canonical_json(dict(record.scenario)))
    if doc is None or any(d.kind == "validation" for d in diags):
        raise CycleError("record's embedded scenario does not parse cleanly")
    cfg = RunConfig(**record.config)
    pairs = [(doc.loss(loss_id), value) for loss_id, value in sorted(record.revised_tolerable.items())]
    remaining = [a for a in doc.actions if a.action_id not in set(record.step1.selected)]
    accept_all = total_outlay(
        _accept_all_portfolio([loss.loss_id for loss, _ in pairs]),
        pairs,
        remaining,
        doc.instruments,
        doc.synergies,
        config=cfg.appraisal(),
        preselected=record.step1.selected,
    )
    return GapReport(
        unoptimized_total=accept_all.total,
        optimized_total=record.step1.annualized_cost + record.step2.outlay.total,
        optimized_tolerable_total=record.step2.outlay.total,
        savings=accept_all.total - record.step2.outlay.total,
        intolerable_exposure=dict(record.gap.intolerable_exposure),
        retained_by_default=record.gap.retained_by_default,
    )


def history(store: RecordStore, lineage: str) -> list[CycleRecord]:
    """All stored records of a lineage in revision order; [] when unknown."""
    return [record_from_dict(data) for data in store.list(lineage)]
