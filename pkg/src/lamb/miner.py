"""Iterative multiple-testing search for coherent variable sets.

Starting from a single-variable candidate set, each iteration tests every
variable against the current set and replaces the set with the rejections
of a Benjamini-Yekutieli procedure (valid under arbitrary p-value
dependence).  Searches terminate at a fixed point, an empty set, a
revisited set (cycle), or an iteration cap.  Nonempty fixed points with
at least two members are the estimated coherent sets; a single testing
sweep against a fixed target yields its coherent neighborhood.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .latentcorr import StandardizedMatrix, sweep

IndexSet = frozenset[int]

_REASON_RANK = {"fixed_point": 0, "cycle": 1, "max_iter": 2}


@dataclass(frozen=True)
class SearchOutcome:
    seed: IndexSet
    trajectory: tuple[IndexSet, ...]
    terminal: IndexSet
    reason: str  # fixed_point | cycle | empty | max_iter
    iterations: int


@dataclass(frozen=True)
class CoherentSetResult:
    members: IndexSet
    member_pvalues: dict[int, float]
    seeds_reaching: int
    labels: tuple[str, ...]
    reason: str


@dataclass(frozen=True)
class Neighborhood:
    target: IndexSet
    neighbors: IndexSet
    pvalues: dict[int, float]


def by_reject(pvalues: Sequence[float] | np.ndarray, q: float) -> IndexSet:
    """Benjamini-Yekutieli step-up rejection set.

    With c(d) = sum_{i<=d} 1/i, rejects the k* smallest p-values where
    k* = max{k : p_(k) <= k q / (d c(d))}; ties at the cutoff are all
    rejected.
    """
    if not 0 < q < 1:
        raise ValueError("FDR level q must lie in (0, 1)")
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("expected a nonempty 1-D p-value vector")
    if np.any(p < 0) or np.any(p > 1) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    d = p.size
    c_d = np.sum(1.0 / np.arange(1, d + 1))
    p_sorted = np.sort(p)
    ok = p_sorted <= np.arange(1, d + 1) * q / (d * c_d)
    if not ok.any():
        return frozenset()
    cut = p_sorted[np.nonzero(ok)[0].max()]
    return frozenset(int(j) for j in np.nonzero(p <= cut)[0])


def step(u: StandardizedMatrix, a_t: Iterable[int], q: float) -> IndexSet:
    """One testing sweep: the next candidate set given the current one.

    Every j is tested against A_t \\ {j} and the BY rejections form
    A_{t+1}.  A singleton {j} cannot test its own member (p = 1 by
    convention), so the member is carried along whenever anything else
    rejects; a singleton therefore either grows or dies.
    """
    a_t = frozenset(a_t)
    if not a_t:
        raise ValueError("current set A_t must be nonempty")
    rejected = _reject_sweep(u, a_t, q)[0]
    if len(a_t) == 1 and rejected:
        return rejected | a_t
    return rejected


def search(
    u: StandardizedMatrix,
    seed: int | Iterable[int],
    q: float = 0.05,
    max_iter: int = 100,
    _cache: dict[IndexSet, IndexSet] | None = None,
) -> SearchOutcome:
    """Iterate :func:`step` from a seed until a terminal condition.

    Termination: fixed point (A_{t+1} = A_t), empty set, cycle (A_{t+1}
    equals any earlier set; the final set is the output), or ``max_iter``
    sweeps.  Deterministic: there is no randomness in the search path.
    """
    seed_set = frozenset({seed}) if isinstance(seed, (int, np.integer)) else frozenset(seed)
    if not seed_set or any(not 0 <= j < u.d for j in seed_set):
        raise ValueError(f"seed must be a nonempty subset of [0, {u.d})")
    cache = _cache if _cache is not None else {}

    current = seed_set
    trajectory = [current]
    seen = {current}
    reason = "max_iter"
    iterations = 0
    for _ in range(max_iter):
        nxt = cache.get(current)
        if nxt is None:
            nxt = step(u, current, q)
            cache[current] = nxt
        iterations += 1
        trajectory.append(nxt)
        if nxt == current:
            reason = "fixed_point"
            break
        if not nxt:
            reason = "empty"
            break
        if nxt in seen:
            reason = "cycle"
            break
        seen.add(nxt)
        current = nxt
    return SearchOutcome(
        seed=seed_set,
        trajectory=tuple(trajectory),
        terminal=trajectory[-1],
        reason=reason,
        iterations=iterations,
    )


def mine_all(
    u: StandardizedMatrix,
    seeds: Iterable[int] | None = None,
    q: float = 0.05,
    max_iter: int = 100,
    threads: int = 1,
) -> list[CoherentSetResult]:
    """Search from every seed and aggregate the surviving terminal sets.

    Empty and singleton terminals are discarded; identical terminals are
    merged with ``seeds_reaching`` counting how many searches arrived.
    Output order is canonical (most-reached first, then by members), so
    aggregation is independent of scheduling.
    """
    seed_list = sorted(set(seeds)) if seeds is not None else list(range(u.d))
    if not seed_list:
        raise ValueError("need at least one seed")
    cache: dict[IndexSet, IndexSet] = {}

    def run_one(seed: int) -> SearchOutcome:
        return search(u, seed, q=q, max_iter=max_iter, _cache=cache)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_one, seed_list))
    else:
        outcomes = [run_one(s) for s in seed_list]

    reached: dict[IndexSet, int] = {}
    reasons: dict[IndexSet, str] = {}
    for out in outcomes:
        if len(out.terminal) < 2:
            continue
        reached[out.terminal] = reached.get(out.terminal, 0) + 1
        prev = reasons.get(out.terminal)
        if prev is None or _REASON_RANK[out.reason] < _REASON_RANK[prev]:
            reasons[out.terminal] = out.reason

    results = []
    for members, count in reached.items():
        pvals = sweep(u, members)[3]
        results.append(
            CoherentSetResult(
                members=members,
                member_pvalues={int(j): float(pvals[j]) for j in sorted(members)},
                seeds_reaching=count,
                labels=tuple(u.col_labels[j] for j in sorted(members)),
                reason=reasons[members],
            )
        )
    results.sort(key=lambda r: (-r.seeds_reaching, tuple(sorted(r.members))))
    return results


def neighborhood(u: StandardizedMatrix, target: Iterable[int], q: float = 0.05) -> Neighborhood:
    """Single testing sweep against a fixed target set.

    Neighbors are the raw rejection set (the target members are reported
    separately and are not force-included).
    """
    target = frozenset(target)
    if not target:
        raise ValueError("target set must be nonempty")
    rejected, pvals = _reject_sweep(u, target, q)
    keep = sorted(rejected | target)
    return Neighborhood(
        target=target,
        neighbors=rejected,
        pvalues={int(j): float(pvals[j]) for j in keep},
    )


def dedup(results: list[CoherentSetResult], jaccard_threshold: float = 1.0) -> list[CoherentSetResult]:
    """Greedy overlap grouping of mined sets.

    Results are taken most-reached first; each joins the first group
    whose representative overlaps it with Jaccard >= threshold,
    otherwise it founds a new group.  Each group reports its
    representative with the group's total ``seeds_reaching``.  At the
    default threshold 1.0 only identical sets merge.
    """
    if not 0 < jaccard_threshold <= 1:
        raise ValueError("jaccard_threshold must lie in (0, 1]")
    ordered = sorted(results, key=lambda r: (-r.seeds_reaching, tuple(sorted(r.members))))
    reps: list[CoherentSetResult] = []
    totals: list[int] = []
    for res in ordered:
        for g, rep in enumerate(reps):
            inter = len(res.members & rep.members)
            union = len(res.members | rep.members)
            if union and inter / union >= jaccard_threshold:
                totals[g] += res.seeds_reaching
                break
        else:
            reps.append(res)
            totals.append(res.seeds_reaching)
    merged = [
        CoherentSetResult(
            members=rep.members,
            member_pvalues=rep.member_pvalues,
            seeds_reaching=total,
            labels=rep.labels,
            reason=rep.reason,
        )
        for rep, total in zip(reps, totals)
    ]
    merged.sort(key=lambda r: (-r.seeds_reaching, tuple(sorted(r.members))))
    return merged


def _reject_sweep(
    u: StandardizedMatrix, a: IndexSet, q: float
) -> tuple[IndexSet, np.ndarray]:
    pvals = sweep(u, a)[3]
    return by_reject(pvals, q), pvals
