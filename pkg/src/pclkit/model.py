"""Hazard/loss/action data model and the elementary quantitative kernels.

Everything here is a pure function over immutable values: expected annual
loss over discrete event scenarios, multiplicative composition of risk
reductions, capital-cost annualization, and loaded contingent-instrument
pricing. Structural validation returns violations as data rather than
raising.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

LOSS_CATEGORIES = ("human", "physical", "socioeconomic", "sociocultural", "environmental")
TOLERABILITY_STATES = ("unclassified", "tolerable", "intolerable")

#: Absolute slack used when comparing a composed residual fraction against a
#: target: 1 - 0.95 is 0.050000000000000044 in binary floating point, and a
#: 95% reduction must satisfy a 0.05 target.
RESIDUAL_TOLERANCE = 1e-12


class ActionCluster(str, Enum):
    """The three response clusters a loss can be assigned to."""

    P = "P"  # preemptive risk reduction
    C = "C"  # contingent arrangement
    L = "L"  # loss acceptance


class ModelError(ValueError):
    """Domain or reference error raised by the quantitative kernels."""


@dataclass(frozen=True)
class EventScenario:
    """One discrete annual event: occurrence probability plus per-loss magnitudes."""

    event_id: str
    annual_probability: float
    magnitudes: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "magnitudes", dict(self.magnitudes))


@dataclass(frozen=True)
class HazardModel:
    """A single hazard with its event scenarios.

    Events are independent annual occurrence processes, not a partition:
    probabilities may sum to anything. The model never mixes hazards.
    """

    hazard_id: str
    name: str
    events: tuple[EventScenario, ...] = ()
    currency_unit: str = "USD"

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def event(self, event_id: str) -> EventScenario:
        for ev in self.events:
            if ev.event_id == event_id:
                return ev
        raise ModelError(f"unknown event id: {event_id!r}")

    @property
    def event_ids(self) -> tuple[str, ...]:
        return tuple(ev.event_id for ev in self.events)


@dataclass(frozen=True)
class LossItem:
    """A potential loss with its category, incidence across income groups, and
    tolerability state (a societal verdict, set by classification)."""

    loss_id: str
    description: str
    category: str
    incidence: Mapping[str, float] = field(default_factory=dict)
    tolerability: str = "unclassified"

    def __post_init__(self):
        object.__setattr__(self, "incidence", dict(self.incidence))


@dataclass(frozen=True)
class ResponseAction:
    """A preemptive (P-cluster) measure with per-loss reduction fractions."""

    action_id: str
    annual_cost: float = 0.0
    capital_cost: float = 0.0
    lifetime_years: int = 1
    reductions: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "reductions", dict(self.reductions))

    def annualized_cost(self, discount_rate: float) -> float:
        """Annual cost plus the capital charge spread over the lifetime."""
        total = float(self.annual_cost)
        if self.capital_cost > 0:
            total += annualize_capital(self.capital_cost, self.lifetime_years, discount_rate)
        return total


@dataclass(frozen=True)
class ContingentInstrument:
    """A contingent (C-cluster) instrument covering a fraction of one loss,
    priced as expected payout times a loading factor."""

    instrument_id: str
    covers: str
    coverage: float
    loading: float = 1.0
    fixed_annual_cost: float = 0.0


@dataclass(frozen=True)
class Synergy:
    """A P-C pairing that unlocks a discounted loading on the instrument when
    the paired action is in force."""

    p_action: str
    c_instrument: str
    discounted_loading: float


@dataclass(frozen=True)
class Violation:
    """One invariant or cross-reference failure, named by entity and rule."""

    code: str
    entity: str
    message: str

    def __str__(self) -> str:  # keeps CLI diagnostics one-per-line
        return f"{self.code} [{self.entity}]: {self.message}"


@dataclass(frozen=True)
class ScenarioDocument:
    """A full parsed scenario: hazard, losses, candidate actions and
    instruments, synergies, income groups, and appraisal defaults."""

    schema_version: int
    hazard: HazardModel
    losses: tuple[LossItem, ...] = ()
    actions: tuple[ResponseAction, ...] = ()
    instruments: tuple[ContingentInstrument, ...] = ()
    synergies: tuple[Synergy, ...] = ()
    income_groups: tuple[str, ...] = ()
    appraisal_defaults: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "losses", tuple(self.losses))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "instruments", tuple(self.instruments))
        object.__setattr__(self, "synergies", tuple(self.synergies))
        object.__setattr__(self, "income_groups", tuple(self.income_groups))
        object.__setattr__(self, "appraisal_defaults", dict(self.appraisal_defaults))

    @property
    def loss_ids(self) -> tuple[str, ...]:
        return tuple(l.loss_id for l in self.losses)

    def loss(self, loss_id: str) -> LossItem:
        for item in self.losses:
            if item.loss_id == loss_id:
                return item
        raise ModelError(f"unknown loss id: {loss_id!r}")

    def action(self, action_id: str) -> ResponseAction:
        for act in self.actions:
            if act.action_id == action_id:
                return act
        raise ModelError(f"unknown action id: {action_id!r}")

    def instrument(self, instrument_id: str) -> ContingentInstrument:
        for inst in self.instruments:
            if inst.instrument_id == instrument_id:
                return inst
        raise ModelError(f"unknown instrument id: {instrument_id!r}")

    def with_losses(self, losses: Iterable[LossItem]) -> "ScenarioDocument":
        return replace(self, losses=tuple(losses))


def expected_annual_loss(
    loss_id: str, hazard: HazardModel, considered_events: Iterable[str]
) -> float:
    """Probability-weighted annual loss over the considered event set.

    Args:
        loss_id: the loss whose expectation is computed.
        hazard: the hazard model holding the event scenarios.
        considered_events: event ids to include; an event id the hazard does
            not know raises ``ModelError``.

    Returns:
        Sum over considered events of annual_probability x magnitude, zero
        when the loss appears in none of them.
    """
    considered = set(considered_events)
    known = set(hazard.event_ids)
    unknown = considered - known
    if unknown:
        raise ModelError(f"unknown event id(s) in considered set: {sorted(unknown)}")
    total = 0.0
    for ev in hazard.events:  # file order; EAL is a sum, order only affects ulps
        if ev.event_id in considered and loss_id in ev.magnitudes:
            total += ev.annual_probability * ev.magnitudes[loss_id]
    return total


def residual_fraction(reductions: Sequence[float]) -> float:
    """Compose reduction fractions multiplicatively: the risk left over.

    Order-independent up to float rounding; an empty sequence leaves the risk
    untouched (1.0), a full reduction (1.0) absorbs everything.
    """
    result = 1.0
    for r in reductions:
        if not (0.0 <= r <= 1.0):
            raise ModelError(f"reduction fraction out of [0,1]: {r}")
        result *= 1.0 - r
    return result


def annualize_capital(capital: float, lifetime_years: int, discount_rate: float) -> float:
    """Spread a one-off capital outlay into an equivalent annual charge.

    Uses the capital-recovery factor d(1+d)^T / ((1+d)^T - 1); at a zero rate
    this degenerates to straight-line capital / lifetime.
    """
    if lifetime_years < 1:
        raise ModelError(f"lifetime_years must be >= 1, got {lifetime_years}")
    if discount_rate < 0:
        raise ModelError(f"discount_rate must be >= 0, got {discount_rate}")
    if capital == 0:
        return 0.0
    if discount_rate == 0:
        return capital / lifetime_years
    growth = (1.0 + discount_rate) ** lifetime_years
    crf = discount_rate * growth / (growth - 1.0)
    return capital * crf


def effective_loading(
    instrument: ContingentInstrument, active_synergies: Iterable[Synergy]
) -> float:
    """Minimum discounted loading over the active synergies, or the base loading."""
    loading = instrument.loading
    for syn in active_synergies:
        if syn.c_instrument != instrument.instrument_id:
            raise ModelError(
                f"synergy ({syn.p_action}, {syn.c_instrument}) does not reference "
                f"instrument {instrument.instrument_id!r}"
            )
        loading = min(loading, syn.discounted_loading)
    return loading


def contingent_cost(
    instrument: ContingentInstrument,
    residual_eal: float,
    active_synergies: Iterable[Synergy] = (),
) -> float:
    """Annual cost of a contingent instrument on a given residual expected loss.

    Fixed cost plus coverage x residual EAL x effective loading, where any
    active synergy selects its discounted loading over the base one.
    """
    if residual_eal < 0:
        raise ModelError(f"residual_eal must be >= 0, got {residual_eal}")
    loading = effective_loading(instrument, active_synergies)
    return instrument.fixed_annual_cost + instrument.coverage * residual_eal * loading


def _check_fraction_map(
    out: list[Violation], code: str, entity: str, name: str, values: Mapping[str, float]
) -> None:
    for key, frac in values.items():
        if not (0.0 <= frac <= 1.0):
            out.append(Violation(code, entity, f"{name}[{key}] = {frac} outside [0,1]"))


def validate_model(doc: ScenarioDocument) -> list[Violation]:
    """Check every type invariant and cross-reference of a scenario document.

    Returns an empty list iff the document is well formed. Violations are
    data, not failures: the function never raises on bad content and is
    idempotent.
    """
    out: list[Violation] = []
    loss_ids = [l.loss_id for l in doc.losses]
    loss_set = set(loss_ids)

    seen: set[str] = set()
    for ev in doc.hazard.events:
        if ev.event_id in seen:
            out.append(Violation("E_DUP_EVENT", ev.event_id, "duplicate event id"))
        seen.add(ev.event_id)
        if not (0.0 < ev.annual_probability <= 1.0):
            out.append(
                Violation(
                    "E_EVENT_PROB",
                    ev.event_id,
                    f"annual_probability {ev.annual_probability} outside (0,1]",
                )
            )
        for loss_id, mag in ev.magnitudes.items():
            if mag < 0:
                out.append(
                    Violation("E_MAG_NEG", ev.event_id, f"magnitude[{loss_id}] = {mag} negative")
                )
            if loss_id not in loss_set:
                out.append(
                    Violation("E_REF_LOSS", ev.event_id, f"magnitude references unknown loss {loss_id!r}")
                )

    group_set = set(doc.income_groups)
    dup = [g for g in doc.income_groups if doc.income_groups.count(g) > 1]
    if dup:
        out.append(Violation("E_DUP_ID", "income_groups", f"duplicate income group(s): {sorted(set(dup))}"))

    seen = set()
    for item in doc.losses:
        if item.loss_id in seen:
            out.append(Violation("E_DUP_ID", item.loss_id, "duplicate loss id"))
        seen.add(item.loss_id)
        if item.category not in LOSS_CATEGORIES:
            out.append(
                Violation(
                    "E_CATEGORY",
                    item.loss_id,
                    f"category {item.category!r} not in {LOSS_CATEGORIES}",
                )
            )
        if item.tolerability not in TOLERABILITY_STATES:
            out.append(
                Violation("E_TOLERABILITY", item.loss_id, f"tolerability {item.tolerability!r} invalid")
            )
        for group, frac in item.incidence.items():
            if frac < 0:
                out.append(
                    Violation("E_INCIDENCE_NEG", item.loss_id, f"incidence[{group}] = {frac} negative")
                )
            if group not in group_set:
                out.append(
                    Violation("E_REF_GROUP", item.loss_id, f"incidence references unknown group {group!r}")
                )
        total = sum(item.incidence.values())
        if abs(total - 1.0) > 1e-9:
            out.append(
                Violation(
                    "E_INCIDENCE_SUM",
                    item.loss_id,
                    f"incidence fractions sum to {total}, must sum to 1 within 1e-9",
                )
            )

    seen = set()
    for act in doc.actions:
        if act.action_id in seen:
            out.append(Violation("E_DUP_ID", act.action_id, "duplicate action id"))
        seen.add(act.action_id)
        if not act.reductions:
            out.append(Violation("E_ACTION_EMPTY", act.action_id, "action has no reduction entries"))
        _check_fraction_map(out, "E_ACTION_FRACTION", act.action_id, "reductions", act.reductions)
        for loss_id in act.reductions:
            if loss_id not in loss_set:
                out.append(
                    Violation("E_REF_LOSS", act.action_id, f"reduction references unknown loss {loss_id!r}")
                )
        if act.annual_cost < 0:
            out.append(Violation("E_COST_NEG", act.action_id, f"annual_cost {act.annual_cost} negative"))
        if act.capital_cost < 0:
            out.append(Violation("E_COST_NEG", act.action_id, f"capital_cost {act.capital_cost} negative"))
        if act.capital_cost > 0 and act.lifetime_years < 1:
            out.append(
                Violation("E_LIFETIME", act.action_id, f"lifetime_years {act.lifetime_years} must be >= 1")
            )

    seen = set()
    inst_by_id: dict[str, ContingentInstrument] = {}
    for inst in doc.instruments:
        if inst.instrument_id in seen:
            out.append(Violation("E_DUP_ID", inst.instrument_id, "duplicate instrument id"))
        seen.add(inst.instrument_id)
        inst_by_id[inst.instrument_id] = inst
        if not (0.0 <= inst.coverage <= 1.0):
            out.append(
                Violation("E_INSTR_COVERAGE", inst.instrument_id, f"coverage {inst.coverage} outside [0,1]")
            )
        if inst.loading < 1.0:
            out.append(
                Violation("E_INSTR_LOADING", inst.instrument_id, f"base loading {inst.loading} must be >= 1")
            )
        if inst.fixed_annual_cost < 0:
            out.append(
                Violation("E_COST_NEG", inst.instrument_id, f"fixed_annual_cost {inst.fixed_annual_cost} negative")
            )
        if inst.covers not in loss_set:
            out.append(
                Violation("E_REF_LOSS", inst.instrument_id, f"covers unknown loss {inst.covers!r}")
            )

    action_set = {a.action_id for a in doc.actions}
    for syn in doc.synergies:
        entity = f"({syn.p_action},{syn.c_instrument})"
        if syn.p_action not in action_set:
            out.append(Violation("E_SYN_REF", entity, f"synergy references unknown action {syn.p_action!r}"))
        if syn.c_instrument not in inst_by_id:
            out.append(
                Violation("E_SYN_REF", entity, f"synergy references unknown instrument {syn.c_instrument!r}")
            )
        if syn.discounted_loading < 0:
            out.append(
                Violation("E_SYN_LOADING", entity, f"discounted_loading {syn.discounted_loading} negative")
            )
        base = inst_by_id.get(syn.c_instrument)
        if base is not None and syn.discounted_loading >= base.loading:
            out.append(
                Violation(
                    "E_SYN_LOADING",
                    entity,
                    f"discounted_loading {syn.discounted_loading} not below base loading {base.loading}",
                )
            )

    appraisal = doc.appraisal_defaults
    mode = appraisal.get("mode")
    if mode is not None and mode not in ("financial", "economic", "social"):
        out.append(Violation("E_MODE", "appraisal", f"mode {mode!r} invalid"))
    hardship = appraisal.get("hardship_multiplier")
    if hardship is not None and hardship < 1.0:
        out.append(Violation("E_HARDSHIP", "appraisal", f"hardship_multiplier {hardship} must be >= 1"))
    weights = appraisal.get("equity_weights") or {}
    if isinstance(weights, Mapping):
        for group, w in weights.items():
            if w < 0:
                out.append(Violation("E_WEIGHT_NEG", "appraisal", f"equity weight for {group!r} negative"))
            if group not in group_set:
                out.append(
                    Violation("E_REF_GROUP", "appraisal", f"equity weight references unknown group {group!r}")
                )
    rate = appraisal.get("discount_rate")
    if rate is not None and rate < 0:
        out.append(Violation("E_RATE_NEG", "appraisal", f"discount_rate {rate} negative"))

    return out


def residual_meets_target(residual: float, epsilon: float) -> bool:
    """Single definition of 'virtually eliminated': residual <= target with a
    tiny absolute slack for float round-off in the composed products."""
    return residual <= epsilon + RESIDUAL_TOLERANCE
