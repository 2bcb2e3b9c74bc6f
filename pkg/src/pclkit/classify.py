"""Likelihood consideration filter and societal tolerability classification.

The filter drops events rarer than the consideration threshold and reports
their exposure as retained-by-default (never silently). Tolerability is then
a societal verdict: one vote per stakeholder group per surviving loss,
aggregated by a configurable group-fraction rule. No economics enter here.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

from .model import HazardModel, ModelError, ScenarioDocument

DEFAULT_LIKELIHOOD_THRESHOLD = 0.005
DEFAULT_VOTE_THRESHOLD = 0.5
VERDICTS = ("tolerable", "intolerable")


class SessionStateError(ModelError):
    """Write attempted against a closed consultation session."""


class IncompleteVotesError(ModelError):
    """Classification requested before every (group, loss) pair voted."""

    def __init__(self, missing: list[tuple[str, str]]):
        self.missing = list(missing)
        pairs = ", ".join(f"({g}, {l})" for g, l in self.missing)
        super().__init__(f"missing votes for: {pairs}")


@dataclass(frozen=True)
class FilterResult:
    """Outcome of the likelihood consideration filter."""

    threshold: float
    considered_events: tuple[str, ...]
    retained: tuple[tuple[str, str], ...]  # (loss_id, event_id) exposure pairs

    @property
    def considered_set(self) -> frozenset[str]:
        return frozenset(self.considered_events)


def filter_by_likelihood(
    hazard: HazardModel, threshold: float = DEFAULT_LIKELIHOOD_THRESHOLD
) -> FilterResult:
    """Split events into considered vs retained-by-default exposure.

    An event is considered only when its annual probability is strictly
    greater than the threshold ("higher than", read literally). Exposure
    pairs of excluded events are returned, never dropped.
    """
    if not (0.0 <= threshold < 1.0):
        raise ModelError(f"likelihood threshold must be in [0,1), got {threshold}")
    considered: list[str] = []
    retained: list[tuple[str, str]] = []
    for ev in hazard.events:
        if ev.annual_probability > threshold:
            considered.append(ev.event_id)
        else:
            for loss_id in sorted(ev.magnitudes):
                retained.append((loss_id, ev.event_id))
    return FilterResult(
        threshold=threshold,
        considered_events=tuple(considered),
        retained=tuple(sorted(retained)),
    )


def retained_exposure_detail(
    hazard: HazardModel, retained: tuple[tuple[str, str], ...]
) -> list[dict]:
    """Expand retained (loss, event) pairs with probability and magnitude."""
    detail = []
    for loss_id, event_id in retained:
        ev = hazard.event(event_id)
        detail.append(
            {
                "loss_id": loss_id,
                "event_id": event_id,
                "annual_probability": ev.annual_probability,
                "magnitude": ev.magnitudes.get(loss_id, 0.0),
                "expected_annual_exposure": ev.annual_probability * ev.magnitudes.get(loss_id, 0.0),
            }
        )
    return detail


def considered_losses(doc: ScenarioDocument, filter_result: FilterResult) -> tuple[str, ...]:
    """Losses carrying exposure in at least one considered event, in id order."""
    considered = filter_result.considered_set
    out = []
    for item in doc.losses:
        for ev in doc.hazard.events:
            if ev.event_id in considered and item.loss_id in ev.magnitudes:
                out.append(item.loss_id)
                break
    return tuple(sorted(out))


@dataclass(frozen=True)
class AggregationRule:
    """Vote aggregation: intolerable iff the intolerable-vote fraction of
    groups reaches the threshold."""

    kind: str = "group-fraction"
    threshold: float = DEFAULT_VOTE_THRESHOLD

    def __post_init__(self):
        # threshold 0 would flag every loss with no votes at all
        if not (0.0 < self.threshold <= 1.0):
            raise ModelError(f"vote threshold must be in (0, 1], got {self.threshold}")

    def describe(self) -> str:
        return f"{self.kind}>={self.threshold}"


@dataclass(frozen=True)
class ConsultationSession:
    """A vote ledger for one scenario: one verdict per (group, loss) pair."""

    session_id: str
    scenario_digest: str | None
    groups: tuple[str, ...]
    considered_losses: tuple[str, ...]
    likelihood_threshold: float
    retained: tuple[tuple[str, str], ...] = ()
    votes: Mapping[tuple[str, str], str] = field(default_factory=dict)
    status: str = "open"

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "considered_losses", tuple(self.considered_losses))
        object.__setattr__(self, "retained", tuple(self.retained))
        object.__setattr__(self, "votes", dict(self.votes))

    @property
    def complete(self) -> bool:
        return not missing_votes(self)

    def tally(self) -> dict[str, dict[str, int]]:
        """Per-loss vote counts, for mirrors like the consultation UI."""
        out: dict[str, dict[str, int]] = {
            loss: {"tolerable": 0, "intolerable": 0} for loss in self.considered_losses
        }
        for (_, loss_id), verdict in self.votes.items():
            out[loss_id][verdict] += 1
        return out


def open_session(
    doc: ScenarioDocument,
    threshold: float = DEFAULT_LIKELIHOOD_THRESHOLD,
    session_id: str = "session-1",
    scenario_digest: str | None = None,
) -> ConsultationSession:
    """Start an empty session over the losses that survive the filter."""
    result = filter_by_likelihood(doc.hazard, threshold)
    return ConsultationSession(
        session_id=session_id,
        scenario_digest=scenario_digest,
        groups=(),
        considered_losses=considered_losses(doc, result),
        likelihood_threshold=threshold,
        retained=result.retained,
    )


def register_groups(session: ConsultationSession, groups: list[str]) -> ConsultationSession:
    if session.status != "open":
        raise SessionStateError(f"session {session.session_id} is closed")
    merged = list(session.groups)
    for g in groups:
        if g not in merged:
            merged.append(g)
    return replace(session, groups=tuple(merged))


def record_vote(
    session: ConsultationSession, group: str, loss_id: str, verdict: str
) -> ConsultationSession:
    """Set (or overwrite) one group's verdict on one considered loss."""
    if session.status != "open":
        raise SessionStateError(f"session {session.session_id} is closed")
    if group not in session.groups:
        raise ModelError(f"unknown stakeholder group: {group!r}")
    if loss_id not in session.considered_losses:
        raise ModelError(f"loss {loss_id!r} is not open to consultation (filtered or unknown)")
    if verdict not in VERDICTS:
        raise ModelError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
    votes = dict(session.votes)
    votes[(group, loss_id)] = verdict
    return replace(session, votes=votes)


def close_session(session: ConsultationSession) -> ConsultationSession:
    return replace(session, status="closed")


def missing_votes(session: ConsultationSession) -> list[tuple[str, str]]:
    return [
        (group, loss)
        for group in session.groups
        for loss in session.considered_losses
        if (group, loss) not in session.votes
    ]


@dataclass(frozen=True)
class TolerabilityPartition:
    """Disjoint verdict over all considered losses, plus the exposure the
    filter already set aside."""

    intolerable: frozenset[str]
    tolerable: frozenset[str]
    retained_by_default: tuple[tuple[str, str], ...]
    rule_used: str

    def to_dict(self) -> dict:
        return {
            "intolerable": sorted(self.intolerable),
            "tolerable": sorted(self.tolerable),
            "retained_by_default": [list(pair) for pair in self.retained_by_default],
            "rule_used": self.rule_used,
        }


def classify(
    session: ConsultationSession, rule: AggregationRule = AggregationRule()
) -> TolerabilityPartition:
    """Aggregate the complete vote ledger into the tolerability partition.

    A loss is intolerable iff the fraction of groups voting intolerable
    reaches the rule threshold; group order never matters.
    """
    missing = missing_votes(session)
    if missing:
        raise IncompleteVotesError(missing)
    n_groups = len(session.groups)
    intolerable, tolerable = set(), set()
    for loss in session.considered_losses:
        count = sum(
            1 for g in session.groups if session.votes.get((g, loss)) == "intolerable"
        )
        if n_groups > 0 and count / n_groups >= rule.threshold:
            intolerable.add(loss)
        else:
            tolerable.add(loss)
    return TolerabilityPartition(
        intolerable=frozenset(intolerable),
        tolerable=frozenset(tolerable),
        retained_by_default=session.retained,
        rule_used=rule.describe(),
    )


@dataclass(frozen=True)
class VoteLedger:
    """File-borne form of a consultation session (see the scenario file docs)."""

    schema_version: int
    session_id: str
    scenario_digest: str | None
    groups: tuple[str, ...]
    votes: tuple[tuple[str, str, str], ...]  # (group, loss_id, verdict)
    status: str = "open"

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "votes", tuple(tuple(v) for v in self.votes))


def session_from_ledger(
    doc: ScenarioDocument,
    ledger: VoteLedger,
    threshold: float = DEFAULT_LIKELIHOOD_THRESHOLD,
    scenario_digest: str | None = None,
) -> ConsultationSession:
    """Replay a vote ledger against a scenario, enforcing every vote rule.

    A ledger bound to a digest must match the scenario it is replayed on;
    an unbound ledger (null digest) binds to the digest supplied here.
    """
    if ledger.scenario_digest and scenario_digest and ledger.scenario_digest != scenario_digest:
        raise ModelError(
            f"vote ledger {ledger.session_id!r} is bound to scenario digest "
            f"{ledger.scenario_digest[:12]}..., not {scenario_digest[:12]}..."
        )
    session = open_session(
        doc,
        threshold=threshold,
        session_id=ledger.session_id,
        scenario_digest=ledger.scenario_digest or scenario_digest,
    )
    session = register_groups(session, list(ledger.groups))
    for group, loss_id, verdict in ledger.votes:
        session = record_vote(session, group, loss_id, verdict)
    if ledger.status == "closed":
        session = close_session(session)
    return session


def ledger_from_session(session: ConsultationSession) -> VoteLedger:
    votes = tuple(
        (group, loss, session.votes[(group, loss)])
        for group, loss in sorted(session.votes)
    )
    return VoteLedger(
        schema_version=1,
        session_id=session.session_id,
        scenario_digest=session.scenario_digest,
        groups=session.groups,
        votes=votes,
        status=session.status,
    )
