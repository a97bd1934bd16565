"""Structural and temporal node metrics plus the stealth measures KL_d and TimeCross."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .temporal_graph import StaticGraphView, TemporalGraph, _plan_arrays

EXACT_BETWEENNESS_MAX_NODES = 5000
SAMPLED_SOURCES = 1024


@dataclass
class MetricTable:
    """Per-node scores aligned to ``nodes`` (sorted node ids)."""

    name: str
    nodes: np.ndarray
    scores: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.nodes.shape != self.scores.shape:
            raise ValueError("nodes and scores must align")

    def __getitem__(self, u: int) -> float:
        i = np.searchsorted(self.nodes, u)
        if i >= len(self.nodes) or self.nodes[i] != u:
            raise KeyError(u)
        return float(self.scores[i])

    def __contains__(self, u) -> bool:
        i = np.searchsorted(self.nodes, u)
        return bool(i < len(self.nodes) and self.nodes[i] == u)

    def __len__(self) -> int:
        return len(self.nodes)

    def align(self, nodes: np.ndarray) -> np.ndarray:
        """Scores reordered to ``nodes``; raises KeyError when any is missing."""
        nodes = np.asarray(nodes, dtype=np.int64)
        if len(self.nodes) == 0:
            if len(nodes):
                raise KeyError(f"{self.name}: table is empty")
            return np.empty(0)
        pos = np.searchsorted(self.nodes, nodes)
        bad = self.nodes[np.minimum(pos, len(self.nodes) - 1)] != nodes
        if np.any(bad):
            raise KeyError(f"{self.name}: missing entries for nodes {nodes[bad][:5].tolist()}")
        return self.scores[pos]

    def to_dict(self) -> dict:
        return {
            "metric": self.name,
            "params": self.params,
            "scores": {str(int(u)): float(s) for u, s in zip(self.nodes, self.scores)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class StealthReport:
    kl_degree: float
    time_cross_pct: float
    n_injected: int = 0
    n_deleted: int = 0

    def to_dict(self) -> dict:
        return {
            "kl_degree": self.kl_degree,
            "time_cross_pct": self.time_cross_pct,
            "n_injected": self.n_injected,
            "n_deleted": self.n_deleted,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- degree growth ---------------------------------------------------------


def temporal_degree_growth(g: TemporalGraph, u: int, t: float, window: float, mode: str = "distinct") -> float:
    """(d_u(t) - d_u(t - window)) / window."""
    if not window > 0:
        raise ValueError(f"window must be positive, got {window}")
    return (g.degree_at(u, t, mode) - g.degree_at(u, t - window, mode)) / window


def degree_growth_table(g: TemporalGraph, t: float, window: float, mode: str = "distinct") -> MetricTable:
    if not window > 0:
        raise ValueError(f"window must be positive, got {window}")
    growth = (g.degrees_at(t, mode) - g.degrees_at(t - window, mode)) / window
    return MetricTable("degree_growth", g.nodes, growth, {"t": t, "window": window, "mode": mode})


# -- betweenness -----------------------------------------------------------


def _brandes_batch(adj, sources: np.ndarray) -> np.ndarray:
    """Dependency sums of a batch of BFS sources, via level-synchronous sparse products."""
    n = adj.shape[0]
    b = len(sources)
    cols = np.arange(b)
    sigma = np.zeros((n, b))
    depth = np.full((n, b), -1, dtype=np.int32)
    sigma[sources, cols] = 1.0
    depth[sources, cols] = 0
    frontier = sigma.copy()
    level = 0
    while True:
        reach = adj @ frontier
        new = (reach > 0) & (depth < 0)
        if not new.any():
            break
        level += 1
        depth[new] = level
        sigma[new] = reach[new]
        frontier = np.where(new, sigma, 0.0)
    delta = np.zeros((n, b))
    safe_sigma = np.where(sigma > 0, sigma, 1.0)
    for d in range(level, 0, -1):
        y = np.where(depth == d, (1.0 + delta) / safe_sigma, 0.0)
        back = adj @ y
        prev = depth == d - 1
        delta[prev] += sigma[prev] * back[prev]
    delta[sources, cols] = 0.0
    return delta.sum(axis=1)


def betweenness_centrality(
    view: StaticGraphView,
    exact: bool | None = None,
    k: int = SAMPLED_SOURCES,
    seed: int = 0,
    batch: int = 64,
) -> MetricTable:
    """Unweighted betweenness over unordered pairs {s, t}.

    Exact below ``EXACT_BETWEENNESS_MAX_NODES`` nodes (or when ``exact=True``);
    otherwise ``k`` pivot sources are drawn without replacement and the sum is
    rescaled by ``n / k``.
    """
    n = view.n
    if n == 0:
        raise ValueError("betweenness of an empty view")
    if exact is None:
        exact = n <= EXACT_BETWEENNESS_MAX_NODES
    if exact or k >= n:
        sources = np.arange(n)
        scale = 1.0
    else:
        rng = np.random.default_rng(seed)
        sources = np.sort(rng.choice(n, size=k, replace=False))
        scale = n / k
    adj = view.adjacency
    total = np.zeros(n)
    for i in range(0, len(sources), batch):
        total += _brandes_batch(adj, sources[i : i + batch])
    scores = total * scale / 2.0
    return MetricTable(
        "betweenness",
        view.nodes,
        scores,
        {"exact": bool(exact or k >= n), "sources": int(len(sources)), "pairs": "unordered"},
    )


# -- pagerank --------------------------------------------------------------


def pagerank(view: StaticGraphView, damping: float = 0.85, max_iters: int = 200, tol: float = 1e-9) -> MetricTable:
    if not 0 < damping < 1:
        raise ValueError(f"damping must lie in (0, 1), got {damping}")
    n = view.n
    if n == 0:
        return MetricTable("pagerank", view.nodes, np.empty(0))
    deg = view.degree.astype(np.float64)
    dangling = deg == 0
    inv = np.where(dangling, 0.0, 1.0 / np.where(dangling, 1.0, deg))
    adj = view.adjacency
    r = np.full(n, 1.0 / n)
    iters = 0
    for iters in range(1, max_iters + 1):
        nxt = damping * (adj @ (r * inv)) + (damping * r[dangling].sum() + 1.0 - damping) / n
        nxt /= nxt.sum()
        err = np.abs(nxt - r).sum()
        r = nxt
        if err < tol:
            break
    return MetricTable("pagerank", view.nodes, r, {"damping": damping, "tol": tol, "iterations": iters})


# -- common neighbours -----------------------------------------------------


def common_neighbors(view: StaticGraphView, u: int, v: int) -> int:
    a, b = view.neighbors(view.index(u)), view.neighbors(view.index(v))
    return len(np.intersect1d(a, b, assume_unique=True))


def common_neighbor_counts(view: StaticGraphView, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorised |N(u) & N(v)| for compact index arrays ``u`` and ``v``."""
    if len(u) == 0:
        return np.zeros(0, dtype=np.int64)
    adj = view.adjacency
    return np.asarray(adj[u].multiply(adj[v]).sum(axis=1)).ravel().astype(np.int64)


# -- stealth ---------------------------------------------------------------


def _degree_histogram(g: TemporalGraph) -> dict[int, int]:
    vals, counts = np.unique(g.degrees_at(g.t_max), return_counts=True)
    return dict(zip(vals.tolist(), counts.tolist()))


def kl_degree_divergence(clean: TemporalGraph, perturbed: TemporalGraph) -> float:
    """KL(P || Q) between final distinct-neighbour degree distributions.

    Both histograms get eps = 1 / (10 |V_clean|) added to every bin of the
    union support before normalising.
    """
    if len(clean) == 0 or len(perturbed) == 0:
        raise ValueError("both graphs must be nonempty")
    hp, hq = _degree_histogram(clean), _degree_histogram(perturbed)
    support = sorted(set(hp) | set(hq))
    eps = 1.0 / (10 * clean.num_nodes)
    p = np.array([hp.get(k, 0) for k in support], dtype=np.float64)
    q = np.array([hq.get(k, 0) for k in support], dtype=np.float64)
    p = p / p.sum() + eps
    q = q / q.sum() + eps
    p /= p.sum()
    q /= q.sum()
    kl = float(np.sum(p * np.log(p / q)))
    return max(kl, 0.0)


def time_cross(clean: TemporalGraph, plan) -> float:
    """Percentage of injected events timed outside either endpoint's clean activity interval.

    An endpoint absent from the clean graph has no interval, so the event counts as a violation.
    """
    adds = _plan_arrays(plan.injections)
    if len(adds) == 0:
        return 0.0
    first, last = clean.activity_intervals()
    violations = 0
    for s, d, t in adds.tolist():
        for node in (int(s), int(d)):
            if not clean.has_node(node):
                violations += 1
                break
            i = int(clean.node_position(node))
            if not first[i] <= t <= last[i]:
                violations += 1
                break
    return 100.0 * violations / len(adds)


def stealth_metrics(clean: TemporalGraph, plan, perturbed: TemporalGraph) -> StealthReport:
    adds = _plan_arrays(plan.injections)
    dels = _plan_arrays(plan.deletions)
    return StealthReport(
        kl_degree=kl_degree_divergence(clean, perturbed),
        time_cross_pct=time_cross(clean, plan),
        n_injected=len(adds),
        n_deleted=len(dels),
    )

