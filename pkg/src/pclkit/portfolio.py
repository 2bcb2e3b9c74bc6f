"""Step 2: minimize total expected annual outlay across the P/C/L clusters.

Candidate portfolios pair preemptive actions (annualized cost, risk
reduction) with contingent instruments (loaded premiums on the residual
expected loss); whatever stays uncovered is accepted and, outside financial
mode, carried at a hardship-multiplied weighted expected loss. The optimizer
scans subsets exactly up to a size threshold and falls back to a seeded
local search above it.

All float accumulation runs in ascending sorted-id order so the enumeration
kernels, the local search, and the plain-Python oracle produce bit-identical
totals for the same selection.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from ._kernels import _prefer_py
from .model import (
    ActionCluster,
    ContingentInstrument,
    LossItem,
    ModelError,
    ResponseAction,
    Synergy,
)

APPRAISAL_MODES = ("financial", "economic", "social")

#: Above this many candidates (actions + instruments) the exact subset scan
#: gives way to the seeded local search.
EXACT_CANDIDATE_LIMIT = 16

#: Oracle refuses instances beyond this; it exists to check the optimizer,
#: not to be fast.
ORACLE_CANDIDATE_LIMIT = 20

_LOCAL_SEARCH_RESTARTS = 8


@dataclass(frozen=True)
class AppraisalConfig:
    """Valuation stance for the step-2 objective.

    financial counts only budget lines (action costs and premiums); economic
    adds uncompensated societal expected loss at the hardship multiplier;
    social additionally applies per-group equity weights. Outside social
    mode every weight is treated as 1.
    """

    mode: str = "economic"
    equity_weights: Mapping[str, float] = field(default_factory=dict)
    hardship_multiplier: float = 1.5
    discount_rate: float = 0.05

    def __post_init__(self):
        if self.mode not in APPRAISAL_MODES:
            raise ModelError(f"mode must be one of {APPRAISAL_MODES}, got {self.mode!r}")
        if self.hardship_multiplier < 1.0:
            raise ModelError(
                f"hardship_multiplier must be >= 1, got {self.hardship_multiplier}"
            )
        if self.discount_rate < 0.0:
            raise ModelError(f"discount_rate must be >= 0, got {self.discount_rate}")
        for group, w in self.equity_weights.items():
            if w < 0.0:
                raise ModelError(f"equity weight for {group!r} negative: {w}")
        object.__setattr__(self, "equity_weights", dict(self.equity_weights))

    def weight(self, group: str) -> float:
        if self.mode != "social":
            return 1.0
        return float(self.equity_weights.get(group, 1.0))

    def loss_weight_factor(self, loss: LossItem) -> float:
        # Ascending group order keeps the sum bit-stable across call sites.
        factor = 0.0
        for group in sorted(loss.incidence):
            factor += loss.incidence[group] * self.weight(group)
        return factor

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "equity_weights": dict(sorted(self.equity_weights.items())),
            "hardship_multiplier": self.hardship_multiplier,
            "discount_rate": self.discount_rate,
        }


def weighted_eal(loss: LossItem, eal: float, config: AppraisalConfig) -> float:
    """Expected annual loss weighted by who bears it: eal x sum of
    incidence x equity weight (weights forced to 1 outside social mode)."""
    return eal * config.loss_weight_factor(loss)


@dataclass(frozen=True)
class OutlayDecomposition:
    """Additive breakdown of a portfolio's annual outlay.

    total = p_cost + c_cost + accepted_weighted_loss always holds;
    accepted_weighted_loss is zero in financial mode because uncompensated
    losses sit outside the budget view. uncompensated_eal reports the raw
    uncovered residual expectation in every mode, for disclosure only; it is
    never part of the objective.
    """

    p_cost: float
    c_cost: float
    accepted_weighted_loss: float
    total: float
    uncompensated_eal: float

    def to_dict(self) -> dict:
        return {
            "p_cost": self.p_cost,
            "c_cost": self.c_cost,
            "accepted_weighted_loss": self.accepted_weighted_loss,
            "total": self.total,
            "uncompensated_eal": self.uncompensated_eal,
        }


@dataclass(frozen=True)
class Portfolio:
    """A step-2 answer: selected actions and instruments plus the per-loss
    cluster labels and the outlay decomposition backing them."""

    p_selected: tuple[str, ...]
    c_selected: tuple[str, ...]
    assignments: Mapping[str, ActionCluster]
    outlay: OutlayDecomposition
    solver_mode: str  # "exact" or "heuristic"

    def __post_init__(self):
        object.__setattr__(self, "p_selected", tuple(self.p_selected))
        object.__setattr__(self, "c_selected", tuple(self.c_selected))
        object.__setattr__(self, "assignments", dict(self.assignments))

    def to_dict(self) -> dict:
        return {
            "p_selected": list(self.p_selected),
            "c_selected": list(self.c_selected),
            "assignments": {
                loss_id: cluster.value
                for loss_id, cluster in sorted(self.assignments.items())
            },
            "outlay": self.outlay.to_dict(),
            "solver_mode": self.solver_mode,
        }


def assign_clusters(
    p_selected: Iterable[str],
    c_selected: Iterable[str],
    loss_ids: Iterable[str],
    actions: Sequence[ResponseAction],
    instruments: Sequence[ContingentInstrument],
) -> dict[str, ActionCluster]:
    """Label each loss by how the selection treats it: C when a selected
    instrument covers it, else P when a selected action reduces it, else L."""
    chosen_acts = [a for a in actions if a.action_id in set(p_selected)]
    covered = {i.covers for i in instruments if i.instrument_id in set(c_selected)}
    out: dict[str, ActionCluster] = {}
    for loss_id in sorted(set(loss_ids)):
        if loss_id in covered:
            out[loss_id] = ActionCluster.C
        elif any(a.reductions.get(loss_id, 0.0) > 0.0 for a in chosen_acts):
            out[loss_id] = ActionCluster.P
        else:
            out[loss_id] = ActionCluster.L
    return out


def _evaluate_selection(
    sel_actions: Sequence[ResponseAction],
    sel_instruments: Sequence[ContingentInstrument],
    losses: Sequence[tuple[LossItem, float]],
    synergies: Sequence[Synergy],
    config: AppraisalConfig,
    preselected: frozenset[str],
) -> OutlayDecomposition:
    """Score one explicit selection. The shared reference evaluator: the
    enumeration kernels replicate exactly this accumulation order."""
    acts = sorted(sel_actions, key=lambda a: a.action_id)
    insts = sorted(sel_instruments, key=lambda i: i.instrument_id)
    ordered = sorted(losses, key=lambda pair: pair[0].loss_id)
    active = preselected | {a.action_id for a in acts}

    p_cost = 0.0
    for act in acts:
        p_cost += act.annualized_cost(config.discount_rate)

    resid: dict[str, float] = {}
    for loss, eal in ordered:
        value = eal
        for act in acts:
            value *= 1.0 - act.reductions.get(loss.loss_id, 0.0)
        resid[loss.loss_id] = value

    c_cost = 0.0
    uncov = {loss.loss_id: 1.0 for loss, _ in ordered}
    for inst in insts:
        loading = inst.loading
        for syn in synergies:
            if syn.c_instrument == inst.instrument_id and syn.p_action in active:
                loading = min(loading, syn.discounted_loading)
        c_cost += inst.fixed_annual_cost + inst.coverage * resid.get(inst.covers, 0.0) * loading
        if inst.covers in uncov:
            uncov[inst.covers] *= 1.0 - inst.coverage

    loss_sum = 0.0
    raw_sum = 0.0
    for loss, _ in ordered:
        left = resid[loss.loss_id] * uncov[loss.loss_id]
        loss_sum += config.loss_weight_factor(loss) * resid[loss.loss_id] * uncov[loss.loss_id]
        raw_sum += left
    if config.mode == "financial":
        accepted = 0.0
        total = p_cost + c_cost
    else:
        accepted = config.hardship_multiplier * loss_sum
        total = p_cost + c_cost + config.hardship_multiplier * loss_sum
    return OutlayDecomposition(
        p_cost=p_cost,
        c_cost=c_cost,
        accepted_weighted_loss=accepted,
        total=total,
        uncompensated_eal=raw_sum,
    )


def total_outlay(
    portfolio: Portfolio,
    revised_tolerable: Sequence[tuple[LossItem, float]],
    actions: Sequence[ResponseAction],
    instruments: Sequence[ContingentInstrument],
    synergies: Sequence[Synergy] = (),
    config: AppraisalConfig = AppraisalConfig(),
    preselected: Iterable[str] = (),
) -> OutlayDecomposition:
    """Recompute a portfolio's outlay decomposition from the catalogs.

    Synergy discounts activate when the paired action is selected here or
    arrived preselected from step 1. Raises when a loss is labeled C without
    a selected instrument covering it.
    """
    by_act = {a.action_id: a for a in actions}
    by_inst = {i.instrument_id: i for i in instruments}
    try:
        sel_acts = [by_act[a] for a in portfolio.p_selected]
        sel_insts = [by_inst[i] for i in portfolio.c_selected]
    except KeyError as exc:
        raise ModelError(f"portfolio references unknown candidate: {exc.args[0]!r}")
    covered = {i.covers for i in sel_insts}
    for loss_id, cluster in portfolio.assignments.items():
        if cluster is ActionCluster.C and loss_id not in covered:
            raise ModelError(
                f"loss {loss_id!r} assigned C without a selected instrument covering it"
            )
    return _evaluate_selection(
        sel_acts, sel_insts, revised_tolerable, synergies, config, frozenset(preselected)
    )


def _prune_candidates(
    losses: Sequence[tuple[LossItem, float]],
    actions: Sequence[ResponseAction],
    instruments: Sequence[ContingentInstrument],
    synergies: Sequence[Synergy],
    keep: frozenset[str],
) -> tuple[list[ResponseAction], list[ContingentInstrument]]:
    """Drop candidates that cannot influence the optimum: instruments whose
    covered loss is not on the table, and actions that neither reduce any
    loss on the table nor unlock a synergy discount on a kept instrument.
    Anything explicitly required is kept regardless."""
    loss_set = {loss.loss_id for loss, _ in losses}
    insts = [
        i
        for i in sorted(instruments, key=lambda i: i.instrument_id)
        if i.covers in loss_set or i.instrument_id in keep
    ]
    inst_ids = {i.instrument_id for i in insts}
    syn_actions = {s.p_action for s in synergies if s.c_instrument in inst_ids}
    acts = [
        a
        for a in sorted(actions, key=lambda a: a.action_id)
        if a.action_id in keep
        or a.action_id in syn_actions
        or any(a.reductions.get(l, 0.0) > 0.0 for l in loss_set)
    ]
    return acts, insts


def _build_arrays(
    losses: Sequence[tuple[LossItem, float]],
    acts: Sequence[ResponseAction],
    insts: Sequence[ContingentInstrument],
    synergies: Sequence[Synergy],
    config: AppraisalConfig,
    preselected: frozenset[str],
):
    ordered = sorted(losses, key=lambda pair: pair[0].loss_id)
    loss_index = {loss.loss_id: j for j, (loss, _) in enumerate(ordered)}
    rev_eal = np.array([eal for _, eal in ordered], dtype=np.float64)
    wfactor = np.array(
        [config.loss_weight_factor(loss) for loss, _ in ordered], dtype=np.float64
    )
    act_costs = np.array(
        [a.annualized_cost(config.discount_rate) for a in acts], dtype=np.float64
    )
    act_factors = np.ones((len(acts), len(ordered)), dtype=np.float64)
    for j, act in enumerate(acts):
        for loss_id, r in act.reductions.items():
            if loss_id in loss_index:
                act_factors[j, loss_index[loss_id]] = 1.0 - r
    inst_fixed = np.array([i.fixed_annual_cost for i in insts], dtype=np.float64)
    inst_cov = np.array([i.coverage for i in insts], dtype=np.float64)
    inst_load = np.array([i.loading for i in insts], dtype=np.float64)
    # Instruments covering a loss off the table contribute premium on a zero
    # residual; point them at a scratch slot holding 0.
    scratch = len(ordered)
    inst_loss = np.array(
        [loss_index.get(i.covers, scratch) for i in insts], dtype=np.int64
    )
    if any(idx == scratch for idx in inst_loss):
        rev_eal = np.append(rev_eal, 0.0)
        wfactor = np.append(wfactor, 0.0)
        act_factors = np.hstack([act_factors, np.ones((len(acts), 1))])

    act_index = {a.action_id: j for j, a in enumerate(acts)}
    inst_index = {i.instrument_id: j for j, i in enumerate(insts)}
    syn_rows = []
    for syn in synergies:
        if syn.c_instrument not in inst_index:
            continue
        if syn.p_action in preselected:
            syn_rows.append((inst_index[syn.c_instrument], 0, syn.discounted_loading, True))
        elif syn.p_action in act_index:
            syn_rows.append(
                (inst_index[syn.c_instrument], act_index[syn.p_action], syn.discounted_loading, False)
            )
    syn_inst = np.array([r[0] for r in syn_rows], dtype=np.int64)
    syn_act = np.array([r[1] for r in syn_rows], dtype=np.int64)
    syn_load = np.array([r[2] for r in syn_rows], dtype=np.float64)
    syn_pre = np.array([r[3] for r in syn_rows], dtype=np.bool_)
    return (
        act_costs,
        act_factors,
        inst_fixed,
        inst_cov,
        inst_load,
        inst_loss,
        syn_inst,
        syn_act,
        syn_load,
        syn_pre,
        rev_eal,
        wfactor,
    )


def optimize(
    revised_tolerable: Sequence[tuple[LossItem, float]],
    actions: Sequence[ResponseAction],
    instruments: Sequence[ContingentInstrument],
    synergies: Sequence[Synergy] = (),
    config: AppraisalConfig = AppraisalConfig(),
    preselected: Iterable[str] = (),
    require: Iterable[str] = (),
    seed: int = 0,
) -> Portfolio:
    """Select the outlay-minimizing P/C/L portfolio over the candidates.

    ``preselected`` names actions already in force from the elimination step;
    they cost nothing here but keep their synergy discounts live. ``require``
    pins candidates into the solution (what-if probes). Exact subset scan up
    to EXACT_CANDIDATE_LIMIT candidates; beyond that, steepest-descent
    single-bit local search from seeded restarts, labeled heuristic. Ties
    break on lower total, then fewer selections, then lexicographic ids.
    """
    pre = frozenset(preselected)
    keep = frozenset(require)
    known = {a.action_id for a in actions} | {i.instrument_id for i in instruments}
    missing = keep - known
    if missing:
        raise ModelError(f"required candidate(s) not in the pool: {sorted(missing)}")

    acts, insts = _prune_candidates(revised_tolerable, actions, instruments, synergies, keep)
    nbits = len(acts) + len(insts)
    require_mask = 0
    for j, act in enumerate(acts):
        if act.action_id in keep:
            require_mask |= 1 << j
    for j, inst in enumerate(insts):
        if inst.instrument_id in keep:
            require_mask |= 1 << (len(acts) + j)

    if nbits <= EXACT_CANDIDATE_LIMIT:
        arrays = _build_arrays(revised_tolerable, acts, insts, synergies, config, pre)
        mask = _kernels.portfolio_enumerate(
            *arrays,
            hardship=config.hardship_multiplier,
            include_loss_term=config.mode != "financial",
            require_mask=require_mask,
        )
        mode = "exact"
    else:
        mask = _local_search(
            acts, insts, revised_tolerable, synergies, config, pre, require_mask, seed
        )
        mode = "heuristic"

    sel_acts = [acts[j] for j in range(len(acts)) if mask & (1 << j)]
    sel_insts = [insts[j] for j in range(len(insts)) if mask & (1 << (len(acts) + j))]
    outlay = _evaluate_selection(
        sel_acts, sel_insts, revised_tolerable, synergies, config, pre
    )
    assignments = assign_clusters(
        [a.action_id for a in sel_acts],
        [i.instrument_id for i in sel_insts],
        [loss.loss_id for loss, _ in revised_tolerable],
        acts,
        insts,
    )
    return Portfolio(
        p_selected=tuple(a.action_id for a in sel_acts),
        c_selected=tuple(i.instrument_id for i in sel_insts),
        assignments=assignments,
        outlay=outlay,
        solver_mode=mode,
    )


def _local_search(
    acts: Sequence[ResponseAction],
    insts: Sequence[ContingentInstrument],
    losses: Sequence[tuple[LossItem, float]],
    synergies: Sequence[Synergy],
    config: AppraisalConfig,
    preselected: frozenset[str],
    require_mask: int,
    seed: int,
) -> int:
    nbits = len(acts) + len(insts)

    def evaluate(mask: int) -> float:
        sel_a = [acts[j] for j in range(len(acts)) if mask & (1 << j)]
        sel_i = [insts[j] for j in range(len(insts)) if mask & (1 << (len(acts) + j))]
        return _evaluate_selection(sel_a, sel_i, losses, synergies, config, preselected).total

    rng = np.random.default_rng(seed)
    starts = [require_mask]
    for _ in range(_LOCAL_SEARCH_RESTARTS):
        bits = rng.integers(0, 2, size=nbits)
        mask = require_mask
        for j in range(nbits):
            if bits[j]:
                mask |= 1 << j
        starts.append(mask)

    best_mask, best_total = -1, 0.0
    for start in starts:
        cur_mask, cur_total = start, evaluate(start)
        while True:
            step_mask, step_total = cur_mask, cur_total
            for b in range(nbits):
                if (require_mask >> b) & 1:
                    continue  # pinned bits never flip off
                trial = cur_mask ^ (1 << b)
                total = evaluate(trial)
                if _prefer_py(trial, total, step_mask, step_total):
                    step_mask, step_total = trial, total
            if step_mask == cur_mask:
                break
            cur_mask, cur_total = step_mask, step_total
        if best_mask < 0 or _prefer_py(cur_mask, cur_total, best_mask, best_total):
            best_mask, best_total = cur_mask, cur_total
    return best_mask


def optimize_oracle(
    revised_tolerable: Sequence[tuple[LossItem, float]],
    actions: Sequence[ResponseAction],
    instruments: Sequence[ContingentInstrument],
    synergies: Sequence[Synergy] = (),
    config: AppraisalConfig = AppraisalConfig(),
    preselected: Iterable[str] = (),
    require: Iterable[str] = (),
) -> Portfolio:
    """Exhaustive reference optimizer: no kernels, no pruning, no shortcuts.

    Slow by design; exists so equivalence tests have an independent answer.
    """
    pre = frozenset(preselected)
    keep = frozenset(require)
    acts = sorted(actions, key=lambda a: a.action_id)
    insts = sorted(instruments, key=lambda i: i.instrument_id)
    known = {a.action_id for a in acts} | {i.instrument_id for i in insts}
    missing = keep - known
    if missing:
        raise ModelError(f"required candidate(s) not in the pool: {sorted(missing)}")
    n = len(acts) + len(insts)
    if n > ORACLE_CANDIDATE_LIMIT:
        raise ModelError(f"instance too large for the oracle: {n} > {ORACLE_CANDIDATE_LIMIT}")

    candidates: list[tuple[str, object]] = [("a", a) for a in acts] + [("i", i) for i in insts]
    best: tuple[tuple[int, ...], OutlayDecomposition] | None = None
    best_key: tuple | None = None
    for size in range(n + 1):
        for combo in combinations(range(n), size):
            ids = {
                (c.action_id if kind == "a" else c.instrument_id)
                for kind, c in (candidates[j] for j in combo)
            }
            if not keep <= ids:
                continue
            sel_a = [candidates[j][1] for j in combo if candidates[j][0] == "a"]
            sel_i = [candidates[j][1] for j in combo if candidates[j][0] == "i"]
            outlay = _evaluate_selection(sel_a, sel_i, revised_tolerable, synergies, config, pre)
            id_tuple = tuple(
                sorted(
                    [a.action_id for a in sel_a] + [i.instrument_id for i in sel_i]
                )
            )
            key = (outlay.total, len(combo), id_tuple)
            if best_key is None or key < best_key:
                best_key = key
                best = (combo, outlay)
    assert best is not None  # size-0 combo always evaluated
    combo, outlay = best
    sel_a = [candidates[j][1] for j in combo if candidates[j][0] == "a"]
    sel_i = [candidates[j][1] for j in combo if candidates[j][0] == "i"]
    assignments = assign_clusters(
        [a.action_id for a in sel_a],
        [i.instrument_id for i in sel_i],
        [loss.loss_id for loss, _ in revised_tolerable],
        acts,
        insts,
    )
    return Portfolio(
        p_selected=tuple(sorted(a.action_id for a in sel_a)),
        c_selected=tuple(sorted(i.instrument_id for i in sel_i)),
        assignments=assignments,
        outlay=outlay,
        solver_mode="oracle",
    )


@dataclass(frozen=True)
class Appraisal:
    """How one portfolio looks from every valuation stance at once: the total
    under each mode, the per-loss residual detail, and who carries what."""

    mode_totals: Mapping[str, float]
    per_loss: Mapping[str, Mapping[str, object]]
    per_group_burden: Mapping[str, float]
    cluster_costs: Mapping[str, float]

    def to_dict(self) -> dict:
        return {
            "mode_totals": dict(self.mode_totals),
            "per_loss": {k: dict(v) for k, v in sorted(self.per_loss.items())},
            "per_group_burden": dict(sorted(self.per_group_burden.items())),
            "cluster_costs": dict(self.cluster_costs),
        }


def appraise(
    portfolio: Portfolio,
    revised_tolerable: Sequence[tuple[LossItem, float]],
    actions: Sequence[ResponseAction],
    instruments: Sequence[ContingentInstrument],
    synergies: Sequence[Synergy] = (),
    config: AppraisalConfig = AppraisalConfig(),
    preselected: Iterable[str] = (),
) -> Appraisal:
    """Evaluate a fixed portfolio under all three modes plus distributional
    detail. The selection is taken as given; only the valuation varies."""
    pre = frozenset(preselected)
    by_act = {a.action_id: a for a in actions}
    by_inst = {i.instrument_id: i for i in instruments}
    sel_acts = sorted((by_act[a] for a in portfolio.p_selected), key=lambda a: a.action_id)
    sel_insts = sorted(
        (by_inst[i] for i in portfolio.c_selected), key=lambda i: i.instrument_id
    )

    mode_totals: dict[str, float] = {}
    for mode in APPRAISAL_MODES:
        cfg = AppraisalConfig(
            mode=mode,
            equity_weights=config.equity_weights,
            hardship_multiplier=config.hardship_multiplier,
            discount_rate=config.discount_rate,
        )
        mode_totals[mode] = _evaluate_selection(
            sel_acts, sel_insts, revised_tolerable, synergies, cfg, pre
        ).total

    outlay = _evaluate_selection(
        sel_acts, sel_insts, revised_tolerable, synergies, config, pre
    )
    ordered = sorted(revised_tolerable, key=lambda pair: pair[0].loss_id)
    per_loss: dict[str, dict[str, object]] = {}
    burden: dict[str, float] = {}
    for loss, eal in ordered:
        resid = eal
        for act in sel_acts:
            resid *= 1.0 - act.reductions.get(loss.loss_id, 0.0)
        uncov = 1.0
        for inst in sel_insts:
            if inst.covers == loss.loss_id:
                uncov *= 1.0 - inst.coverage
        cluster = portfolio.assignments.get(loss.loss_id, ActionCluster.L)
        per_loss[loss.loss_id] = {
            "revised_eal": eal,
            "residual_eal": resid,
            "uncovered_fraction": uncov,
            "weighted_residual_eal": weighted_eal(loss, resid, config),
            "cluster": cluster.value,
            "flag_sociocultural": loss.category == "sociocultural",
        }
        for group in sorted(loss.incidence):
            share = loss.incidence[group] * config.weight(group) * resid * uncov
            burden[group] = burden.get(group, 0.0) + share
    return Appraisal(
        mode_totals=mode_totals,
        per_loss=per_loss,
        per_group_burden=burden,
        cluster_costs={
            "P": outlay.p_cost,
            "C": outlay.c_cost,
            "L": outlay.accepted_weighted_loss,
        },
    )
