"""Shared fixtures and instance generators for the test suite.

The generators draw monetary values on a dyadic grid (multiples of 1/16) so
that sums and small products are exact in binary floating point. Scale- and
mode-invariance tests rely on that exactness: multiplying every monetary
input by a constant then preserves the exact ordering of candidate totals.
"""
from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np
import pytest

from pclkit.classify import (
    close_session,
    open_session,
    record_vote,
    register_groups,
    session_from_ledger,
)
from pclkit.config import resolve_config
from pclkit.cycle import run_cycle
from pclkit.model import (
    ContingentInstrument,
    LossItem,
    ResponseAction,
    Synergy,
    residual_meets_target,
)
from pclkit.portfolio import AppraisalConfig
from pclkit._kernels import warmup
from pclkit.scenario_io import parse_scenario, parse_votes, scenario_digest

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "scenarios"

GOLDEN_SCENARIOS = [
    "coastal-flood-mini.json",
    "cyclone-microgrid.json",
    "drought-livelihoods.json",
    "heatwave-health.json",
    "landslide-road.json",
    "river-basin-levee.json",
]


@pytest.fixture(scope="session", autouse=True)
def _compile_kernels():
    # jit compilation must not land inside a timed test
    warmup()


@pytest.fixture(scope="session")
def mini_doc():
    doc, diags = parse_scenario((SCENARIO_DIR / "coastal-flood-mini.json").read_text())
    assert doc is not None and not diags
    return doc


@pytest.fixture(scope="session")
def mini_ledger():
    ledger, diags = parse_votes((SCENARIO_DIR / "coastal-flood-mini-votes.json").read_text())
    assert ledger is not None and not diags
    return ledger


@pytest.fixture()
def mini_config(mini_doc):
    return resolve_config(mini_doc.appraisal_defaults, None, None)


@pytest.fixture()
def mini_session(mini_doc, mini_ledger, mini_config):
    return session_from_ledger(
        mini_doc,
        mini_ledger,
        threshold=mini_config.likelihood_threshold,
        scenario_digest=scenario_digest(mini_doc),
    )


@pytest.fixture(scope="session")
def mini_record(mini_doc, mini_ledger):
    config = resolve_config(mini_doc.appraisal_defaults, None, None)
    session = session_from_ledger(
        mini_doc,
        mini_ledger,
        threshold=config.likelihood_threshold,
        scenario_digest=scenario_digest(mini_doc),
    )
    return run_cycle(mini_doc, session, config, deterministic=True)


@pytest.fixture(scope="session")
def infeasible_record():
    """Full cycle on the catalog that cannot eliminate its intolerable loss."""
    doc, diags = parse_scenario((SCENARIO_DIR / "heatwave-health.json").read_text())
    assert doc is not None and not diags
    config = resolve_config(doc.appraisal_defaults, None, None)
    session = open_session(
        doc, threshold=config.likelihood_threshold, scenario_digest=scenario_digest(doc)
    )
    session = register_groups(session, ["panel"])
    for loss_id in session.considered_losses:
        verdict = "intolerable" if loss_id == "L-mortality" else "tolerable"
        session = record_vote(session, "panel", loss_id, verdict)
    return run_cycle(doc, close_session(session), config, deterministic=True)


# ---------------------------------------------------------------------------
# Dyadic random values: exactly representable, exactly summable.
# ---------------------------------------------------------------------------


def dyadic(rng: np.random.Generator, low: float, high: float, step: float = 0.0625) -> float:
    lo = int(round(low / step))
    hi = int(round(high / step))
    return float(int(rng.integers(lo, hi + 1))) * step


def dyadic_fraction(rng: np.random.Generator) -> float:
    # reduction/coverage fractions on a 1/16 grid, away from 0
    return float(int(rng.integers(1, 16))) * 0.0625


def dyadic_incidence(rng: np.random.Generator, groups: list[str]) -> dict[str, float]:
    # sixteenths that sum to exactly 1.0
    n = len(groups)
    cuts = sorted(rng.choice(np.arange(1, 16), size=n - 1, replace=False).tolist()) if n > 1 else []
    bounds = [0] + list(cuts) + [16]
    return {g: (bounds[i + 1] - bounds[i]) / 16.0 for i, g in enumerate(groups)}


# ---------------------------------------------------------------------------
# Step-1 instances and the test-side exhaustive oracle.
# ---------------------------------------------------------------------------


def random_cover_instance(rng: np.random.Generator, max_actions: int = 15, max_losses: int = 6):
    """A random elimination problem: (loss_ids, actions, epsilon, discount_rate)."""
    n_losses = int(rng.integers(1, max_losses + 1))
    loss_ids = [f"x{j}" for j in range(n_losses)]
    n_actions = int(rng.integers(1, max_actions + 1))
    actions = []
    prev_costs: list[float] = []
    for i in range(n_actions):
        k = int(rng.integers(1, n_losses + 1))
        targets = rng.choice(n_losses, size=k, replace=False)
        reductions = {loss_ids[int(t)]: dyadic_fraction(rng) for t in targets}
        if rng.random() < 0.2:
            # occasionally a single strong reduction that exactly meets 0.05
            reductions[loss_ids[int(targets[0])]] = 0.95
        if prev_costs and rng.random() < 0.25:
            cost = float(rng.choice(prev_costs))  # deliberate cost tie
        else:
            cost = dyadic(rng, 0.5, 20.0)
        prev_costs.append(cost)
        if rng.random() < 0.3:
            actions.append(
                ResponseAction(
                    action_id=f"a{i:02d}",
                    capital_cost=cost * 10,
                    lifetime_years=int(rng.integers(5, 40)),
                    reductions=reductions,
                )
            )
        else:
            actions.append(ResponseAction(action_id=f"a{i:02d}", annual_cost=cost, reductions=reductions))
    epsilon = float(rng.choice([0.02, 0.05, 0.05, 0.1, 0.25]))
    discount_rate = float(rng.choice([0.0, 0.03, 0.05, 0.08]))
    return loss_ids, actions, epsilon, discount_rate


def cover_oracle(loss_ids, actions, epsilon, discount_rate):
    """Exhaustive minimum-cost cover, written independently of the solver.

    Returns (cost, selected_ids, feasible). When infeasible, returns the
    cheapest subset attaining the best-achievable (all-in) residual vector.
    """
    acts = sorted(actions, key=lambda a: a.action_id)
    best = None
    for r in range(len(acts) + 1):
        for combo in itertools.combinations(acts, r):
            if all(
                residual_meets_target(
                    math.prod(1.0 - a.reductions.get(lid, 0.0) for a in combo), epsilon
                )
                for lid in loss_ids
            ):
                cost = sum(a.annualized_cost(discount_rate) for a in combo)
                ids = tuple(a.action_id for a in combo)
                key = (cost, r, ids)
                if best is None or key < best:
                    best = key
    if best is not None:
        return best[0], best[2], True
    # best achievable: everything in; then the cheapest subset matching it
    goal = {
        lid: math.prod(1.0 - a.reductions.get(lid, 0.0) for a in acts) for lid in loss_ids
    }
    best = None
    for r in range(len(acts) + 1):
        for combo in itertools.combinations(acts, r):
            attained = {
                lid: math.prod(1.0 - a.reductions.get(lid, 0.0) for a in combo)
                for lid in loss_ids
            }
            if attained == goal:
                cost = sum(a.annualized_cost(discount_rate) for a in combo)
                ids = tuple(a.action_id for a in combo)
                key = (cost, r, ids)
                if best is None or key < best:
                    best = key
    return best[0], best[2], False


# ---------------------------------------------------------------------------
# Step-2 instances.
# ---------------------------------------------------------------------------


def random_portfolio_instance(
    rng: np.random.Generator,
    max_candidates: int = 12,
    max_losses: int = 6,
    mode: str | None = None,
    hardship: float | None = None,
):
    """A random outlay-optimization problem.

    Returns (pairs, actions, instruments, synergies, config, preselected).
    """
    groups = [f"g{j}" for j in range(int(rng.integers(1, 4)))]
    n_losses = int(rng.integers(1, max_losses + 1))
    pairs = []
    for j in range(n_losses):
        loss = LossItem(
            loss_id=f"x{j}",
            description="",
            category=str(rng.choice(["physical", "socioeconomic", "environmental"])),
            incidence=dyadic_incidence(rng, groups),
        )
        eal = dyadic(rng, 0.0, 40.0) if rng.random() > 0.1 else 0.0
        pairs.append((loss, eal))

    n_candidates = int(rng.integers(1, max_candidates + 1))
    n_actions = int(rng.integers(0, n_candidates + 1))
    n_instruments = n_candidates - n_actions

    actions = []
    for i in range(n_actions):
        k = int(rng.integers(1, n_losses + 1))
        targets = rng.choice(n_losses, size=k, replace=False)
        actions.append(
            ResponseAction(
                action_id=f"p{i:02d}",
                annual_cost=dyadic(rng, 0.0625, 15.0),
                reductions={f"x{int(t)}": dyadic_fraction(rng) for t in targets},
            )
        )

    instruments = []
    for i in range(n_instruments):
        base = 1.0 + float(int(rng.integers(0, 13))) * 0.0625  # 1.0 .. 1.75
        instruments.append(
            ContingentInstrument(
                instrument_id=f"c{i:02d}",
                covers=f"x{int(rng.integers(0, n_losses))}",
                coverage=float(rng.choice([0.25, 0.5, 0.75, 1.0])),
                loading=base,
                fixed_annual_cost=dyadic(rng, 0.0, 2.0),
            )
        )

    preselected = ()
    if rng.random() < 0.3:
        preselected = ("s1-held",)

    synergies = []
    for inst in instruments:
        if rng.random() < 0.4 and inst.loading > 1.0:
            partners = [a.action_id for a in actions] + list(preselected)
            if partners:
                partner = str(rng.choice(partners))
                # discounted loading strictly below base, dyadic
                steps_below = int(rng.integers(1, max(2, int(round((inst.loading - 0.5) / 0.0625)))))
                discounted = inst.loading - steps_below * 0.0625
                synergies.append(
                    Synergy(p_action=partner, c_instrument=inst.instrument_id,
                            discounted_loading=max(0.5, discounted))
                )

    chosen_mode = mode if mode is not None else str(rng.choice(["financial", "economic", "social"]))
    weights = {}
    if chosen_mode == "social":
        weights = {g: float(rng.choice([0.75, 1.0, 1.25, 1.5, 2.0])) for g in groups}
    config = AppraisalConfig(
        mode=chosen_mode,
        equity_weights=weights,
        hardship_multiplier=hardship if hardship is not None else float(rng.choice([1.0, 1.5, 2.5])),
        discount_rate=0.05,
    )
    return pairs, actions, instruments, synergies, config, preselected
