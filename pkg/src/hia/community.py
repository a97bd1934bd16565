"""Modularity and Louvain community detection with a connectivity refinement pass."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .temporal_graph import StaticGraphView

_GAIN_EPS = 1e-12


@dataclass
class CommunityAssignment:
    """Dense community labels aligned to ``nodes``.

    ``history`` holds the modularity after each aggregation level.
    """

    nodes: np.ndarray
    labels: np.ndarray
    modularity_q: float
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def count(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def __getitem__(self, u: int) -> int:
        i = np.searchsorted(self.nodes, u)
        if i >= len(self.nodes) or self.nodes[i] != u:
            raise KeyError(f"node {u} not assigned")
        return int(self.labels[i])

    def __contains__(self, u) -> bool:
        i = np.searchsorted(self.nodes, u)
        return bool(i < len(self.nodes) and self.nodes[i] == u)

    def align(self, nodes: np.ndarray) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        pos = np.searchsorted(self.nodes, nodes)
        pos = np.minimum(pos, len(self.nodes) - 1)
        bad = self.nodes[pos] != nodes
        if np.any(bad):
            raise KeyError(f"unassigned nodes {nodes[bad][:5].tolist()}")
        return self.labels[pos]

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "modularity": self.modularity_q,
            "assignment": {str(int(u)): int(c) for u, c in zip(self.nodes, self.labels)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "community_id"])
            w.writerows(zip(self.nodes.tolist(), self.labels.tolist()))


def _labels_for(view: StaticGraphView, assignment) -> np.ndarray:
    if isinstance(assignment, CommunityAssignment):
        return assignment.align(view.nodes)
    if isinstance(assignment, dict):
        try:
            return np.array([assignment[int(u)] for u in view.nodes], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"node {exc.args[0]} not covered by assignment") from None
    labels = np.asarray(assignment, dtype=np.int64)
    if labels.shape != (view.n,):
        raise KeyError("assignment does not cover every view node")
    return labels


def modularity(view: StaticGraphView, assignment) -> float:
    """Newman modularity of a partition of an unweighted view.

    ``assignment`` may be a :class:`CommunityAssignment`, a ``{node: label}``
    dict, or a label array aligned to ``view.nodes``.
    """
    if view.m == 0:
        raise ValueError("modularity is undefined for a view without edges")
    labels = _labels_for(view, assignment)
    m = float(view.m)
    lo, hi = view.edges[:, 0], view.edges[:, 1]
    intra = np.count_nonzero(labels[lo] == labels[hi])
    _, inv = np.unique(labels, return_inverse=True)
    tot = np.bincount(inv, weights=view.degree.astype(np.float64))
    return intra / m - float(np.sum((tot / (2.0 * m)) ** 2))


def _weighted_q(adj: sp.csr_matrix, labels: np.ndarray) -> float:
    m2 = adj.sum()
    k = np.asarray(adj.sum(axis=1)).ravel()
    coo = adj.tocoo()
    inside = coo.data[labels[coo.row] == labels[coo.col]].sum()
    tot = np.bincount(labels, weights=k)
    return float(inside / m2 - np.sum((tot / m2) ** 2))


def _local_moving(adj: sp.csr_matrix, labels: np.ndarray, order: np.ndarray) -> bool:
    """Greedy single-node moves until no move improves modularity. Returns whether anything moved."""
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    k = np.asarray(adj.sum(axis=1)).ravel()
    m2 = float(k.sum())
    tot = np.bincount(labels, weights=k, minlength=len(labels)).astype(np.float64)
    moved_any = False
    while True:
        moved = 0
        for i in order.tolist():
            ki = k[i]
            if ki == 0:
                continue
            own = labels[i]
            weights: dict[int, float] = {}
            for j, w in zip(indices[indptr[i] : indptr[i + 1]].tolist(), data[indptr[i] : indptr[i + 1]].tolist()):
                if j != i:
                    c = labels[j]
                    weights[c] = weights.get(c, 0.0) + w
            tot[own] -= ki
            best_c = own
            best_gain = weights.get(own, 0.0) - tot[own] * ki / m2
            for c in sorted(weights):
                if c == own:
                    continue
                gain = weights[c] - tot[c] * ki / m2
                if gain > best_gain + _GAIN_EPS:
                    best_gain, best_c = gain, c
            tot[best_c] += ki
            if best_c != own:
                labels[i] = best_c
                moved += 1
        if moved == 0:
            return moved_any
        moved_any = True


def _split_disconnected(adj: sp.csr_matrix, labels: np.ndarray) -> np.ndarray:
    """Refine labels so each community is internally connected."""
    coo = adj.tocoo()
    keep = labels[coo.row] == labels[coo.col]
    inner = sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=adj.shape)
    _, comp = connected_components(inner, directed=False)
    return _dense(comp)


def _dense(labels: np.ndarray) -> np.ndarray:
    """Relabel to 0..c-1 in order of first appearance."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inv]


def _aggregate(adj: sp.csr_matrix, labels: np.ndarray) -> sp.csr_matrix:
    c = int(labels.max()) + 1
    member = sp.csr_matrix((np.ones(len(labels)), (labels, np.arange(len(labels)))), shape=(c, len(labels)))
    return (member @ adj @ member.T).tocsr()


def detect_communities(view: StaticGraphView, seed: int = 0, max_levels: int = 32) -> CommunityAssignment:
    """Partition ``view`` by modularity ascent.

    Each level runs greedy local moving in a seeded node order (ties go to the
    lowest community id), splits internally disconnected communities, and
    aggregates. A final local-moving sweep on the original graph makes the
    result locally optimal for single-node moves.
    """
    if view.m == 0:
        raise ValueError("community detection needs at least one edge")
    rng = np.random.default_rng(seed)
    base = view.adjacency.astype(np.float64)
    membership = np.arange(view.n)
    adj = base
    history: list[float] = []
    for _ in range(max_levels):
        n = adj.shape[0]
        labels = np.arange(n)
        moved = _local_moving(adj, labels, rng.permutation(n))
        labels = _split_disconnected(adj, labels)
        membership = labels[membership]
        history.append(_weighted_q(base, membership))
        if not moved or labels.max() + 1 == n:
            break
        adj = _aggregate(adj, labels)

    order = rng.permutation(view.n)
    for _ in range(100):
        before = membership.copy()
        _local_moving(base, membership, order)
        membership = _split_disconnected(base, membership)
        if np.array_equal(_dense(before), membership):
            break
    membership = _dense(membership)
    q = modularity(view, membership)
    history.append(q)
    return CommunityAssignment(view.nodes.copy(), membership, q, history)


def intra_community_degree(view: StaticGraphView, assignment: CommunityAssignment, v: int) -> int:
    """Number of neighbours of ``v`` in its own community."""
    if v not in assignment:
        raise KeyError(f"node {v} not assigned")
    i = view.index(v)
    own = assignment[v]
    nbrs = view.nodes[view.neighbors(i)]
    return int(np.count_nonzero(assignment.align(nbrs) == own))


def intra_community_degrees(view: StaticGraphView, assignment: CommunityAssignment) -> np.ndarray:
    """Vectorised intra-community degree of every view node, aligned to ``view.nodes``."""
    labels = assignment.align(view.nodes)
    lo, hi = view.edges[:, 0], view.edges[:, 1]
    same = labels[lo] == labels[hi]
    return np.bincount(np.concatenate([lo[same], hi[same]]), minlength=view.n)
