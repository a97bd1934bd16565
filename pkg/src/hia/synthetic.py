"""Seeded synthetic interaction streams with communities, node lifecycles and recurring pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .temporal_graph import TemporalGraph


@dataclass
class SyntheticSpec:
    n_nodes: int = 500
    n_events: int = 20000
    n_communities: int = 5
    partners_per_node: int = 3
    p_recurring: float = 0.6
    p_community: float = 0.3
    frac_emerging: float = 0.25
    frac_fading: float = 0.25
    span: float = 1_000_000.0
    seed: int = 0


def _intensity(t: np.ndarray, kind: np.ndarray, start: np.ndarray, stop: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Activity rate of every node at times ``t``; shape (len(t), n)."""
    t = t[:, None]
    alive = (t >= start) & (t <= stop)
    frac = np.clip((t - start) / np.maximum(stop - start, 1.0), 0.0, 1.0)
    shape = np.where(kind == 1, 0.2 + 1.8 * frac, np.where(kind == 2, 1.8 - 1.6 * frac, 1.0))
    return np.where(alive, weight * shape, 0.0)


def synthetic_temporal_graph(spec: SyntheticSpec | None = None, **overrides) -> tuple[TemporalGraph, np.ndarray]:
    """Generate a stream and return it with the planted community label of every node id.

    Nodes are steady (active throughout), emerging (born late, rate rising to
    the end) or fading (rate falling until they go quiet). Each event picks an
    active source by rate, then a destination among the source's recurring
    partners, its community, or anywhere, in that order of preference.
    """
    spec = spec or SyntheticSpec()
    if overrides:
        spec = SyntheticSpec(**{**spec.__dict__, **overrides})
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_nodes, spec.span
    community = rng.permutation(np.arange(n) * spec.n_communities // n)

    kind = np.zeros(n, dtype=np.int64)
    roles = rng.permutation(n)
    n_em, n_fa = int(spec.frac_emerging * n), int(spec.frac_fading * n)
    kind[roles[:n_em]] = 1
    kind[roles[n_em : n_em + n_fa]] = 2
    start = np.where(kind == 1, rng.uniform(0.3 * T, 0.8 * T, n), 0.0)
    stop = np.where(kind == 2, rng.uniform(0.4 * T, 0.8 * T, n), T)
    weight = rng.lognormal(0.0, 0.8, n)

    members = [np.flatnonzero(community == c) for c in range(spec.n_communities)]
    partners: list[list[int]] = [[] for _ in range(n)]
    for v in range(n):
        pool = members[community[v]]
        overlap = np.minimum(stop[pool], stop[v]) - np.maximum(start[pool], start[v])
        cand = pool[(pool != v) & (overlap > 0.1 * T)]
        if len(cand) == 0:
            continue
        take = rng.choice(cand, size=min(spec.partners_per_node, len(cand)), replace=False)
        for w in take.tolist():
            if w not in partners[v]:
                partners[v].append(w)
            if v not in partners[w]:
                partners[w].append(v)

    times = np.sort(rng.integers(0, int(T), size=spec.n_events)).astype(np.float64)
    src = np.empty(spec.n_events, dtype=np.int64)
    dst = np.empty(spec.n_events, dtype=np.int64)
    u_draw, mode_draw, v_draw = rng.random(spec.n_events), rng.random(spec.n_events), rng.random(spec.n_events)
    chunk = 2048
    for a in range(0, spec.n_events, chunk):
        rate = _intensity(times[a : a + chunk], kind, start, stop, weight)
        cum = np.cumsum(rate, axis=1)
        for r in range(rate.shape[0]):
            i = a + r
            row, crow = rate[r], cum[r]
            u = int(np.searchsorted(crow, u_draw[i] * crow[-1], side="right"))
            u = min(u, n - 1)
            mode = mode_draw[i]
            cand = None
            if mode < spec.p_recurring and partners[u]:
                cand = np.array(partners[u])
            elif mode < spec.p_recurring + spec.p_community:
                cand = members[community[u]]
            if cand is not None:
                w = row[cand] * (cand != u)
                if w.sum() <= 0:
                    cand = None
            if cand is None:
                # any node but u: draw against the running total with u's mass cut out
                x = v_draw[i] * (crow[-1] - row[u])
                if u > 0 and x >= crow[u - 1]:
                    x += row[u]
                elif u == 0:
                    x += row[0]
                v = min(int(np.searchsorted(crow, x, side="right")), n - 1)
            else:
                cw = np.cumsum(w)
                v = int(cand[min(int(np.searchsorted(cw, v_draw[i] * cw[-1], side="right")), len(cand) - 1)])
            src[i], dst[i] = u, v
    keep = src != dst
    return TemporalGraph(src[keep], dst[keep], times[keep]), community
