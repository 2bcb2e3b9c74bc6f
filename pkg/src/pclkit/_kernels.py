"""Exhaustive-search kernels behind the two exact solvers.

Both solvers reduce to scanning every subset mask of a small candidate set
and keeping the best one under the deterministic tie-break chain
(objective, then cardinality, then lexicographic id order). That scan is the
hot loop of the package and exists twice:

* a numba ``@njit`` version, and
* a pure-numpy chunked version,

selected at call time by the ``PCL_KERNEL`` env var (``numba`` / ``numpy`` /
``auto``; auto prefers numba when importable). Accumulation order is
ascending candidate index in every path, so the two backends, and the plain
Python evaluators used by the test oracles, produce bit-identical totals.

``benchmarks/bench_kernels.py`` times the backends against each other.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_CHUNK = 1 << 15  # masks per numpy chunk; bounds temp arrays to a few MB

#: (mask_a, cost_a) preferred over (mask_b, cost_b)? Shared tie-break chain:
#: lower cost, then fewer selections, then lexicographic order of the sorted
#: id tuple. For equal-cardinality masks over id-sorted candidates, the
#: lexicographically smaller tuple is the one holding the lowest differing bit.


def _prefer_py(mask_a: int, cost_a: float, mask_b: int, cost_b: float) -> bool:
    if cost_a != cost_b:
        return cost_a < cost_b
    pa, pb = bin(mask_a).count("1"), bin(mask_b).count("1")
    if pa != pb:
        return pa < pb
    if mask_a == mask_b:
        return False
    low = (mask_a ^ mask_b) & -(mask_a ^ mask_b)
    return (mask_a & low) != 0


@njit(cache=True)
def _popcount(mask):
    n = 0
    while mask:
        mask &= mask - 1
        n += 1
    return n


@njit(cache=True)
def _prefer(mask_a, cost_a, mask_b, cost_b):
    if cost_a != cost_b:
        return cost_a < cost_b
    pa = _popcount(mask_a)
    pb = _popcount(mask_b)
    if pa != pb:
        return pa < pb
    if mask_a == mask_b:
        return False
    d = mask_a ^ mask_b
    low = d & (-d)
    return (mask_a & low) != 0


def _lex_rank(masks: np.ndarray, n: int) -> np.ndarray:
    # Bit-reversed mask: tuple-lex-smaller <=> larger rank.
    rank = np.zeros_like(masks)
    for j in range(n):
        rank |= ((masks >> j) & 1) << (n - 1 - j)
    return rank


def _chunk_best(masks: np.ndarray, costs: np.ndarray, n: int) -> tuple[int, float]:
    """Best (mask, cost) of a chunk under the shared tie-break chain."""
    cmin = costs.min()
    sel = np.flatnonzero(costs == cmin)
    if sel.size > 1:
        pc = np.zeros(sel.size, dtype=np.int64)
        sub = masks[sel]
        for j in range(n):
            pc += (sub >> j) & 1
        keep = sel[pc == pc.min()]
        if keep.size > 1:
            keep = keep[np.argmax(_lex_rank(masks[keep], n))]
            return int(masks[keep]), float(cmin)
        return int(masks[keep[0]]), float(cmin)
    return int(masks[sel[0]]), float(cmin)


# ---------------------------------------------------------------------------
# Step-1 cover enumeration: min-cost subset of actions driving every
# intolerable residual fraction to <= epsilon (+ slack).
# ---------------------------------------------------------------------------


@njit(cache=True)
def _cover_enumerate_nb(costs, factors, epsilon, slack):
    n, m = factors.shape
    # Best achievable residual vector: every action applied.
    target = np.ones(m)
    for j in range(n):
        for l in range(m):
            target[l] *= factors[j, l]

    best_mask = np.int64(-1)
    best_cost = 1e300
    fb_mask = np.int64(-1)
    fb_cost = 1e300
    resid = np.ones(m)
    for mask in range(1 << n):
        cost = 0.0
        for l in range(m):
            resid[l] = 1.0
        for j in range(n):
            if (mask >> j) & 1:
                cost += costs[j]
                for l in range(m):
                    resid[l] *= factors[j, l]
        feasible = True
        matches = True
        for l in range(m):
            if resid[l] > epsilon + slack:
                feasible = False
            if resid[l] != target[l]:
                matches = False
        if feasible:
            if best_mask < 0 or _prefer(mask, cost, best_mask, best_cost):
                best_mask = np.int64(mask)
                best_cost = cost
        if matches:
            if fb_mask < 0 or _prefer(mask, cost, fb_mask, fb_cost):
                fb_mask = np.int64(mask)
                fb_cost = cost
    return best_mask, best_cost, fb_mask, fb_cost


def _cover_enumerate_np(costs, factors, epsilon, slack):
    n, m = factors.shape
    target = np.ones(m)
    for j in range(n):
        target *= factors[j]

    best: tuple[int, float] | None = None
    fallback: tuple[int, float] | None = None
    for start in range(0, 1 << n, _CHUNK):
        masks = np.arange(start, min(start + _CHUNK, 1 << n), dtype=np.int64)
        cost = np.zeros(masks.size)
        resid = np.ones((masks.size, m))
        for j in range(n):
            sel = ((masks >> j) & 1) == 1
            cost[sel] += costs[j]
            resid[sel] *= factors[j]
        feas = (resid <= epsilon + slack).all(axis=1)
        if feas.any():
            cand_mask, cand_cost = _chunk_best(masks[feas], cost[feas], n)
            if best is None or _prefer_py(cand_mask, cand_cost, best[0], best[1]):
                best = (cand_mask, cand_cost)
        match = (resid == target).all(axis=1)
        if match.any():
            cand_mask, cand_cost = _chunk_best(masks[match], cost[match], n)
            if fallback is None or _prefer_py(cand_mask, cand_cost, fallback[0], fallback[1]):
                fallback = (cand_mask, cand_cost)
    bm, bc = best if best is not None else (-1, 1e300)
    fm, fc = fallback if fallback is not None else (-1, 1e300)
    return np.int64(bm), bc, np.int64(fm), fc


def cover_enumerate(
    costs: np.ndarray, factors: np.ndarray, epsilon: float, slack: float
) -> tuple[int, int]:
    """Scan all 2^n action subsets.

    Returns ``(best_feasible_mask, fallback_mask)`` where the fallback is the
    cheapest subset attaining the best-achievable residual vector (used when
    nothing is feasible). A mask of -1 means no feasible subset exists.
    """
    fn = _cover_enumerate_nb if backend() == "numba" else _cover_enumerate_np
    best_mask, _, fb_mask, _ = fn(
        np.ascontiguousarray(costs, dtype=np.float64),
        np.ascontiguousarray(factors, dtype=np.float64),
        float(epsilon),
        float(slack),
    )
    return int(best_mask), int(fb_mask)


# ---------------------------------------------------------------------------
# Step-2 portfolio enumeration: min-outlay subset of actions + instruments.
# Bit layout: bits [0, na) are actions, bits [na, na+ni) are instruments.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _portfolio_enumerate_nb(
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
    hardship,
    include_loss_term,
    require_mask,
    forbid_mask,
):
    na = act_costs.shape[0]
    ni = inst_fixed.shape[0]
    m = rev_eal.shape[0]
    ns = syn_inst.shape[0]

    best_mask = np.int64(-1)
    best_total = 1e300
    resid = np.empty(m)
    uncov = np.empty(m)
    for mask in range(1 << (na + ni)):
        if (mask & require_mask) != require_mask or (mask & forbid_mask) != 0:
            continue
        p_cost = 0.0
        for l in range(m):
            resid[l] = rev_eal[l]
            uncov[l] = 1.0
        for j in range(na):
            if (mask >> j) & 1:
                p_cost += act_costs[j]
                for l in range(m):
                    resid[l] *= act_factors[j, l]
        c_cost = 0.0
        for i in range(ni):
            if (mask >> (na + i)) & 1:
                loading = inst_load[i]
                for s in range(ns):
                    if syn_inst[s] == i and (syn_pre[s] or ((mask >> syn_act[s]) & 1)):
                        if syn_load[s] < loading:
                            loading = syn_load[s]
                c_cost += inst_fixed[i] + inst_cov[i] * resid[inst_loss[i]] * loading
                uncov[inst_loss[i]] *= 1.0 - inst_cov[i]
        total = p_cost + c_cost
        if include_loss_term:
            loss_sum = 0.0
            for l in range(m):
                loss_sum += wfactor[l] * resid[l] * uncov[l]
            total = p_cost + c_cost + hardship * loss_sum
        if best_mask < 0 or _prefer(mask, total, best_mask, best_total):
            best_mask = np.int64(mask)
            best_total = total
    return best_mask, best_total


def _portfolio_enumerate_np(
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
    hardship,
    include_loss_term,
    require_mask,
    forbid_mask,
):
    na = act_costs.shape[0]
    ni = inst_fixed.shape[0]
    m = rev_eal.shape[0]
    ns = syn_inst.shape[0]
    nbits = na + ni

    best: tuple[int, float] | None = None
    for start in range(0, 1 << nbits, _CHUNK):
        masks = np.arange(start, min(start + _CHUNK, 1 << nbits), dtype=np.int64)
        ok = ((masks & require_mask) == require_mask) & ((masks & forbid_mask) == 0)
        masks = masks[ok]
        if masks.size == 0:
            continue
        p_cost = np.zeros(masks.size)
        resid = np.tile(rev_eal, (masks.size, 1))
        uncov = np.ones((masks.size, m))
        for j in range(na):
            sel = ((masks >> j) & 1) == 1
            p_cost[sel] += act_costs[j]
            resid[sel] *= act_factors[j]
        c_cost = np.zeros(masks.size)
        loads = np.tile(inst_load, (masks.size, 1))
        for s in range(ns):
            i = syn_inst[s]
            active = syn_pre[s] | (((masks >> syn_act[s]) & 1) == 1)
            loads[active, i] = np.minimum(loads[active, i], syn_load[s])
        for i in range(ni):
            sel = ((masks >> (na + i)) & 1) == 1
            c_cost[sel] += inst_fixed[i] + inst_cov[i] * resid[sel, inst_loss[i]] * loads[sel, i]
            uncov[sel, inst_loss[i]] *= 1.0 - inst_cov[i]
        total = p_cost + c_cost
        if include_loss_term:
            loss_sum = np.zeros(masks.size)
            for l in range(m):
                loss_sum += wfactor[l] * resid[:, l] * uncov[:, l]
            total = p_cost + c_cost + hardship * loss_sum
        cand_mask, cand_total = _chunk_best(masks, total, nbits)
        if best is None or _prefer_py(cand_mask, cand_total, best[0], best[1]):
            best = (cand_mask, cand_total)
    if best is None:
        return np.int64(-1), 1e300
    return np.int64(best[0]), best[1]


def portfolio_enumerate(
    act_costs: np.ndarray,
    act_factors: np.ndarray,
    inst_fixed: np.ndarray,
    inst_cov: np.ndarray,
    inst_load: np.ndarray,
    inst_loss: np.ndarray,
    syn_inst: np.ndarray,
    syn_act: np.ndarray,
    syn_load: np.ndarray,
    syn_pre: np.ndarray,
    rev_eal: np.ndarray,
    wfactor: np.ndarray,
    hardship: float,
    include_loss_term: bool,
    require_mask: int = 0,
    forbid_mask: int = 0,
) -> int:
    """Scan all portfolios over the candidate bit layout; return the best mask
    (or -1 when the require/forbid constraints rule everything out)."""
    fn = _portfolio_enumerate_nb if backend() == "numba" else _portfolio_enumerate_np
    mask, _ = fn(
        np.ascontiguousarray(act_costs, dtype=np.float64),
        # explicit width: -1 cannot be inferred when the action list is empty
        np.ascontiguousarray(act_factors, dtype=np.float64).reshape(len(act_costs), len(rev_eal)),
        np.ascontiguousarray(inst_fixed, dtype=np.float64),
        np.ascontiguousarray(inst_cov, dtype=np.float64),
        np.ascontiguousarray(inst_load, dtype=np.float64),
        np.ascontiguousarray(inst_loss, dtype=np.int64),
        np.ascontiguousarray(syn_inst, dtype=np.int64),
        np.ascontiguousarray(syn_act, dtype=np.int64),
        np.ascontiguousarray(syn_load, dtype=np.float64),
        np.ascontiguousarray(syn_pre, dtype=np.bool_),
        np.ascontiguousarray(rev_eal, dtype=np.float64),
        np.ascontiguousarray(wfactor, dtype=np.float64),
        float(hardship),
        bool(include_loss_term),
        np.int64(require_mask),
        np.int64(forbid_mask),
    )
    return int(mask)


def backend() -> str:
    """Active kernel backend: PCL_KERNEL env var, 'auto' prefers numba."""
    choice = os.environ.get("PCL_KERNEL", "auto").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("PCL_KERNEL=numba but numba is not importable")
        return "numba"
    return "numba" if HAS_NUMBA else "numpy"


def warmup() -> None:
    """Force-compile the numba kernels on tiny inputs (no-op without numba)."""
    if not HAS_NUMBA:
        return
    _cover_enumerate_nb(np.array([1.0]), np.array([[0.5]]), 0.6, 1e-12)
    _portfolio_enumerate_nb(
        np.array([1.0]),
        np.array([[0.5]]),
        np.array([0.0]),
        np.array([1.0]),
        np.array([1.2]),
        np.array([0], dtype=np.int64),
        np.array([0], dtype=np.int64),
        np.array([0], dtype=np.int64),
        np.array([1.1]),
        np.array([False]),
        np.array([3.0]),
        np.array([1.0]),
        1.5,
        True,
        np.int64(0),
        np.int64(0),
    )
