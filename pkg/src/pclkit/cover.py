"""Step 1: eliminate intolerable losses at minimum cost.

This is cost-effectiveness, not cost-benefit: the monetary value of an
intolerable loss never enters the objective, only the constraint that its
composed residual fraction reaches the elimination target. Ancillary
benefits of the selected actions are then propagated onto tolerable losses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .model import (
    RESIDUAL_TOLERANCE,
    ModelError,
    ResponseAction,
    residual_meets_target,
)

#: Elimination target: "virtually eliminated" means residual fraction <= this.
DEFAULT_EPSILON = 0.05

#: At most this many actions are solved exactly; larger catalogs fall back to
#: the greedy-with-exchange heuristic and the solution says so.
EXACT_ACTION_LIMIT = 20


@dataclass(frozen=True)
class CoverSolution:
    """Outcome of the intolerable-elimination search.

    When ``feasible`` is false no subset of the catalog reaches the target;
    ``selected`` is then the cheapest subset attaining the best-achievable
    residuals, and ``residuals`` reports those so the caller can disclose
    the shortfall instead of silently accepting it.
    """

    selected: tuple[str, ...]
    annualized_cost: float
    residuals: Mapping[str, float]
    feasible: bool
    epsilon: float
    solver_mode: str  # "exact" or "heuristic"

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(self.selected))
        # builtin floats keep stored records free of numpy scalar types
        object.__setattr__(self, "annualized_cost", float(self.annualized_cost))
        object.__setattr__(self, "residuals", {k: float(v) for k, v in dict(self.residuals).items()})

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "annualized_cost": self.annualized_cost,
            "residuals": dict(sorted(self.residuals.items())),
            "feasible": self.feasible,
            "epsilon": self.epsilon,
            "solver_mode": self.solver_mode,
        }


def eliminate_intolerable(
    intolerable: Iterable[str],
    actions: Sequence[ResponseAction],
    epsilon: float = DEFAULT_EPSILON,
    discount_rate: float = 0.05,
) -> CoverSolution:
    """Select the minimum-cost action set whose composed residual on every
    intolerable loss reaches the elimination target.

    Exact search up to EXACT_ACTION_LIMIT actions; beyond that a greedy
    cover with an exchange pass, labeled heuristic. Ties break on lower
    cost, then fewer actions, then lexicographically smaller id tuple.
    """
    if not (0.0 <= epsilon < 1.0):
        raise ModelError(f"epsilon must be in [0,1), got {epsilon}")
    loss_ids = sorted(set(intolerable))
    if not loss_ids:
        return CoverSolution(
            selected=(),
            annualized_cost=0.0,
            residuals={},
            feasible=True,
            epsilon=epsilon,
            solver_mode="exact",
        )

    ordered = sorted(actions, key=lambda a: a.action_id)
    costs = np.array(
        [a.annualized_cost(discount_rate) for a in ordered], dtype=np.float64
    )
    factors = np.empty((len(ordered), len(loss_ids)), dtype=np.float64)
    for i, act in enumerate(ordered):
        for j, loss_id in enumerate(loss_ids):
            factors[i, j] = 1.0 - act.reductions.get(loss_id, 0.0)

    if len(ordered) <= EXACT_ACTION_LIMIT:
        picked, feasible = _solve_exact(costs, factors, epsilon)
        mode = "exact"
    else:
        picked, feasible = _solve_heuristic(costs, factors, epsilon)
        mode = "heuristic"

    residuals = {}
    for j, loss_id in enumerate(loss_ids):
        resid = 1.0
        for i in picked:  # ascending index: same accumulation order everywhere
            resid *= factors[i, j]
        residuals[loss_id] = resid
    cost = 0.0
    for i in picked:
        cost += costs[i]
    return CoverSolution(
        selected=tuple(ordered[i].action_id for i in picked),
        annualized_cost=cost,
        residuals=residuals,
        feasible=feasible,
        epsilon=epsilon,
        solver_mode=mode,
    )


def _solve_exact(
    costs: np.ndarray, factors: np.ndarray, epsilon: float
) -> tuple[list[int], bool]:
    best_mask, fallback_mask = _kernels.cover_enumerate(
        costs, factors, epsilon, RESIDUAL_TOLERANCE
    )
    if best_mask >= 0:
        return _mask_indices(best_mask, len(costs)), True
    return _mask_indices(fallback_mask, len(costs)), False


def _mask_indices(mask: int, n: int) -> list[int]:
    return [i for i in range(n) if mask & (1 << i)]


def _solve_heuristic(
    costs: np.ndarray, factors: np.ndarray, epsilon: float
) -> tuple[list[int], bool]:
    """Greedy marginal-gain cover followed by a drop-and-swap exchange pass.

    Gains are measured in log space against the per-loss target so a 90%
    reduction on a nearly-done loss does not outrank a 50% reduction on an
    untouched one. Not guaranteed optimal; callers see solver_mode.
    """
    n, m = factors.shape
    target = np.log(epsilon + RESIDUAL_TOLERANCE) if epsilon > 0.0 else -745.0
    logf = np.where(factors > 0.0, np.log(np.maximum(factors, 1e-300)), -745.0)

    def deficits(idxs: list[int]) -> np.ndarray:
        cur = np.zeros(m)
        for i in idxs:
            cur += logf[i]
        # cur and target are both <= 0; the remaining need is cur - target
        return np.maximum(cur - target, 0.0) if epsilon > 0.0 else _zero_deficit(
            factors, idxs
        )

    def feasible(idxs: list[int]) -> bool:
        resid = np.ones(m)
        for i in sorted(idxs):
            resid *= factors[i]
        return all(residual_meets_target(r, epsilon) for r in resid)

    picked: list[int] = []
    remaining = set(range(n))
    while not feasible(picked) and remaining:
        need = deficits(picked)
        best_i, best_key = -1, None
        for i in sorted(remaining):
            gain = float(np.minimum(-logf[i], need).sum())
            if gain <= 0.0:
                continue
            key = (costs[i] / gain, i)
            if best_key is None or key < best_key:
                best_i, best_key = i, key
        if best_i < 0:
            break
        picked.append(best_i)
        remaining.discard(best_i)

    if not feasible(picked):
        # No subset reaches the target: report the all-in residuals and the
        # cheapest subset that attains them (drop everything droppable).
        picked = list(range(n))
        goal = np.ones(m)
        for i in picked:
            goal *= factors[i]
        for i in sorted(range(n), key=lambda i: (-costs[i], i)):
            trial = [j for j in picked if j != i]
            resid = np.ones(m)
            for j in sorted(trial):
                resid *= factors[j]
            if np.array_equal(resid, goal):
                picked = trial
        return sorted(picked), False

    # Drop pass: most expensive first, keep feasibility.
    for i in sorted(picked, key=lambda i: (-costs[i], i)):
        trial = [j for j in picked if j != i]
        if feasible(trial):
            picked = trial
    # Swap pass: replace any member with a cheaper outsider while feasible.
    improved = True
    while improved:
        improved = False
        outside = sorted(set(range(n)) - set(picked))
        for i in sorted(picked, key=lambda i: (-costs[i], i)):
            for k in outside:
                if costs[k] >= costs[i]:
                    continue
                trial = sorted([j for j in picked if j != i] + [k])
                if feasible(trial):
                    picked = trial
                    improved = True
                    break
            if improved:
                break
    return sorted(picked), True


def _zero_deficit(factors: np.ndarray, idxs: list[int]) -> np.ndarray:
    resid = np.ones(factors.shape[1])
    for i in sorted(idxs):
        resid *= factors[i]
    return (resid > 0.0).astype(np.float64)


def propagate_ancillary(
    selected: Iterable[str],
    actions: Sequence[ResponseAction],
    tolerable: Sequence[tuple[str, float]],
) -> tuple[list[tuple[str, float]], tuple[str, ...]]:
    """Apply the step-1 selection's side benefits to tolerable losses.

    ``tolerable`` holds (loss_id, expected annual loss) pairs. Returns the
    revised pairs in input order plus the ids whose revised value falls to
    zero; those are fully addressed and drop out of the step-2 search.
    """
    chosen = sorted(
        (a for a in actions if a.action_id in set(selected)),
        key=lambda a: a.action_id,
    )
    revised: list[tuple[str, float]] = []
    done: list[str] = []
    for loss_id, value in tolerable:
        for act in chosen:
            value *= 1.0 - act.reductions.get(loss_id, 0.0)
        revised.append((loss_id, value))
        if value == 0.0:
            done.append(loss_id)
    return revised, tuple(done)
