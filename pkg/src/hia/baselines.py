"""Heuristic poisoning baselines sharing the HIA budget contract. None of them touch a surrogate."""

from __future__ import annotations

import enum
import math

import numpy as np

from .attack import (
    MAX_CANDIDATE_PAIRS,
    injection_times,
    perturbation_budget,
    sample_nonexistent_pairs,
)
from .graph_metrics import common_neighbor_counts, pagerank
from .plan import PerturbationPlan
from .rng import stream
from .temporal_graph import TemporalGraph


class BaselineKind(str, enum.Enum):
    RANDOM = "random"
    PREFERENCE = "preference"
    DEGREE = "degree"
    PAGERANK = "pagerank"


def _check_delta(delta: float) -> None:
    if not 0 <= delta <= 1:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")


def _dedupe_pairs(g: TemporalGraph, a: np.ndarray, o: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop repeated undirected pairs, keeping first occurrences in order."""
    if len(a) == 0:
        return a, o
    keys = np.minimum(a, o) * g.key_base + np.maximum(a, o)
    _, first = np.unique(keys, return_index=True)
    first = np.sort(first)
    return a[first], o[first]


def _build_plan(
    method: str,
    g: TemporalGraph,
    budget: int,
    del_pos: np.ndarray,
    del_anchor: np.ndarray,
    inj_a: np.ndarray,
    inj_o: np.ndarray,
    rng,
    meta: dict | None = None,
) -> PerturbationPlan:
    del_pos = np.asarray(del_pos, dtype=np.int64)
    inj_a, inj_o = np.asarray(inj_a, np.int64), np.asarray(inj_o, np.int64)
    t = injection_times(rng, g, inj_a, inj_o) if len(inj_a) else np.empty(0)
    dels = np.column_stack([g.src[del_pos], g.dst[del_pos], g.t[del_pos]]).astype(np.float64)
    adds = np.column_stack([inj_a, inj_o, t]).astype(np.float64)
    plan = PerturbationPlan(
        method,
        budget,
        dels,
        adds,
        [{"rule": f"delete:{method}", "score": None, "anchor": int(x)} for x in del_anchor.tolist()],
        [{"rule": f"inject:{method}", "score": None, "anchor": int(x)} for x in inj_a.tolist()],
        meta=meta or {},
    )
    plan.validate(g)
    return plan


def _split(budget: int, mode: str) -> tuple[int, int]:
    if mode == "deletion_only":
        return budget, 0
    if mode == "injection_only":
        return 0, budget
    if mode != "hybrid":
        raise ValueError(f"unknown mode {mode!r}")
    bd = budget // 2
    return bd, budget - bd


def _random_deletions(rng, g: TemporalGraph, k: int, exclude: np.ndarray | None = None) -> np.ndarray:
    pool = np.arange(len(g))
    if exclude is not None and len(exclude):
        pool = np.setdiff1d(pool, exclude)
    k = min(k, len(pool))
    return np.sort(rng.choice(pool, size=k, replace=False)) if k else np.empty(0, np.int64)


def _event_anchor(g: TemporalGraph, pos: np.ndarray, anchors: np.ndarray | None = None) -> np.ndarray:
    """Anchor of each deleted event: the source, or the first endpoint found in ``anchors``."""
    src, dst = g.src[pos], g.dst[pos]
    if anchors is None:
        return src.copy()
    return np.where(np.isin(src, anchors), src, dst)


def random_attack(train: TemporalGraph, delta: float, seed: int, mode: str = "hybrid") -> PerturbationPlan:
    """Uniform deletions over all events and uniform injections over never-seen pairs, split 50/50."""
    _check_delta(delta)
    budget = perturbation_budget(len(train), delta)
    bd, ba = _split(budget, mode)
    rng = stream(seed, "random-attack")
    a, o = np.empty(0, np.int64), np.empty(0, np.int64)
    if ba and train.num_nodes > 1:
        a, o = sample_nonexistent_pairs(rng, train, max(4 * ba, 1000))
        a, o = _dedupe_pairs(train, a, o)
        a, o = a[:ba], o[:ba]
    if mode != "injection_only":
        bd += ba - len(a)
    pos = _random_deletions(rng, train, bd)
    return _build_plan("random", train, budget, pos, _event_anchor(train, pos), a, o, rng)


def _degrees(train: TemporalGraph) -> np.ndarray:
    return train.degrees_at(train.t_max, "distinct")


def _prefix_covering(order: np.ndarray, counts: np.ndarray, need: int) -> np.ndarray:
    """Shortest prefix of ``order`` whose ``counts`` sum reaches ``need`` (all of it if never)."""
    if need <= 0 or len(order) == 0:
        return order[:0]
    cum = np.cumsum(counts[order])
    k = int(np.searchsorted(cum, need)) + 1
    return order[: min(k, len(order))]


def _greedy_injections(
    train: TemporalGraph,
    anchor_order: np.ndarray,
    partner_order: np.ndarray,
    k: int,
    cap_partners: int = 2000,
) -> tuple[np.ndarray, np.ndarray]:
    """Walk anchors in order, pairing each with its first never-seen partners from ``partner_order``."""
    out_a, out_o = [], []
    got = 0
    seen: set[tuple[int, int]] = set()
    partners = partner_order[:cap_partners]
    for a in anchor_order.tolist():
        if got >= k:
            break
        cand = partners[partners != a]
        cand = cand[~train.pairs_exist(np.full(len(cand), a), cand)]
        for o in cand.tolist():
            key = (min(a, o), max(a, o))
            if key in seen:
                continue
            seen.add(key)
            out_a.append(a)
            out_o.append(o)
            got += 1
            if got >= k:
                break
    return np.array(out_a, dtype=np.int64), np.array(out_o, dtype=np.int64)


def preference_attack(train: TemporalGraph, delta: float, seed: int) -> PerturbationPlan:
    """Target the highest-degree nodes: delete their most repeated interactions, link them to other hubs.

    Anchors are the shortest degree-ranked prefix of nodes whose incident
    events cover the whole budget. Injections pair each anchor, in degree
    order, with the highest-degree nodes it has never met; whatever the
    anchors cannot absorb as injections becomes deletions of their most
    repeated pairs.
    """
    _check_delta(delta)
    budget = perturbation_budget(len(train), delta)
    bd, ba = _split(budget, "hybrid")
    rng = stream(seed, "preference-attack")
    deg = _degrees(train)
    order = np.lexsort((train.nodes, -deg))
    n_events = np.array([len(train.incidence(u)) for u in train.nodes.tolist()])
    anchors = train.nodes[_prefix_covering(order, n_events, budget)]
    a, o = _greedy_injections(train, anchors, train.nodes[order], ba) if ba else (np.empty(0, np.int64),) * 2
    bd += ba - len(a)
    pos = np.unique(np.concatenate([train.incidence(u) for u in anchors.tolist()])) if len(anchors) else np.empty(0, np.int64)
    keys = np.minimum(train.src, train.dst) * train.key_base + np.maximum(train.src, train.dst)
    _, inv, mult = np.unique(keys, return_inverse=True, return_counts=True)
    pos = pos[np.lexsort((pos, -mult[inv[pos]]))][:bd]
    pos = np.sort(pos)
    return _build_plan(
        "preference", train, budget, pos, _event_anchor(train, pos, anchors), a, o, rng,
        meta={"anchors": anchors.tolist()},
    )


def degree_attack(train: TemporalGraph, delta: float, seed: int) -> PerturbationPlan:
    """Inject never-seen pairs with the fewest common neighbours; random deletions only fill a shortfall."""
    _check_delta(delta)
    budget = perturbation_budget(len(train), delta)
    rng = stream(seed, "degree-attack")
    a, o = np.empty(0, np.int64), np.empty(0, np.int64)
    if budget and train.num_nodes > 1:
        a, o = sample_nonexistent_pairs(rng, train, min(MAX_CANDIDATE_PAIRS, max(20 * budget, 1000)))
        a, o = _dedupe_pairs(train, a, o)
        view = train.snapshot()
        cn = common_neighbor_counts(view, np.searchsorted(view.nodes, a), np.searchsorted(view.nodes, o))
        order = np.argsort(cn, kind="stable")[:budget]
        a, o = a[order], o[order]
    pos = _random_deletions(rng, train, budget - len(a))
    return _build_plan("degree", train, budget, pos, _event_anchor(train, pos), a, o, rng)


def pagerank_attack(train: TemporalGraph, delta: float, seed: int) -> PerturbationPlan:
    """Perturb around the lowest-PageRank nodes, where changes draw the least attention.

    Anchors are nodes by ascending PageRank (ties by id). Deletions are
    random among events of the shortest anchor prefix covering the budget;
    injections pair low-PageRank nodes in ascending order of combined score.
    """
    _check_delta(delta)
    budget = perturbation_budget(len(train), delta)
    bd, ba = _split(budget, "hybrid")
    rng = stream(seed, "pagerank-attack")
    view = train.snapshot()
    pr = pagerank(view).align(train.nodes)
    order = np.lexsort((train.nodes, pr))
    a, o = np.empty(0, np.int64), np.empty(0, np.int64)
    if ba and train.num_nodes > 1:
        lim = len(order)
        # enough low-PageRank nodes that their pairs can cover the budget several times over
        need = int(math.ceil((1 + math.sqrt(1 + 32 * ba)) / 2))
        low = order[: min(lim, max(need, 2))]
        while True:
            i, j = np.triu_indices(len(low), 1)
            pa, po = train.nodes[low[i]], train.nodes[low[j]]
            ok = ~train.pairs_exist(pa, po)
            if ok.sum() >= ba or len(low) == lim:
                break
            low = order[: min(lim, 2 * len(low))]
        pa, po = pa[ok], po[ok]
        combined = pr[low[i]][ok] + pr[low[j]][ok]
        pick = np.lexsort((po, pa, combined))[:ba]
        a, o = pa[pick], po[pick]
    bd += ba - len(a)
    n_events = np.array([len(train.incidence(u)) for u in train.nodes.tolist()])
    anchors = train.nodes[_prefix_covering(order, n_events, bd)]
    pool = np.unique(np.concatenate([train.incidence(u) for u in anchors.tolist()])) if len(anchors) else np.empty(0, np.int64)
    k = min(bd, len(pool))
    pos = np.sort(rng.choice(pool, size=k, replace=False)) if k else np.empty(0, np.int64)
    return _build_plan("pagerank", train, budget, pos, _event_anchor(train, pos, anchors), a, o, rng)


ROUTINES = {
    BaselineKind.RANDOM: random_attack,
    BaselineKind.PREFERENCE: preference_attack,
    BaselineKind.DEGREE: degree_attack,
    BaselineKind.PAGERANK: pagerank_attack,
}


def run_baseline(kind: BaselineKind | str, train: TemporalGraph, delta: float, seed: int) -> PerturbationPlan:
    return ROUTINES[BaselineKind(kind)](train, delta, seed)
