import json

import numpy as np
import pytest

from conftest import random_edges
from oracles import label_agreement, modularity_double_loop, planted_partition
from hia.community import (
    CommunityAssignment,
    detect_communities,
    intra_community_degree,
    intra_community_degrees,
    modularity,
)
from hia.temporal_graph import StaticGraphView


def cliques(k, size):
    edges = []
    for c in range(k):
        base = c * size
        edges += [(base + i, base + j) for i in range(size) for j in range(i + 1, size)]
    return edges


def test_one_community_has_zero_modularity():
    rng = np.random.default_rng(0)
    view = StaticGraphView.from_edges(random_edges(rng, 25, 0.2))
    assert modularity(view, np.zeros(view.n, dtype=int)) == pytest.approx(0.0, abs=1e-15)


def test_two_disjoint_cliques():
    view = StaticGraphView.from_edges(cliques(2, 5))
    labels = [0] * 5 + [1] * 5
    assert modularity_double_loop(range(10), cliques(2, 5), labels) == pytest.approx(0.5, abs=1e-15)
    assert modularity(view, np.array(labels)) == pytest.approx(0.5, abs=1e-15)


def test_modularity_matches_double_loop():
    rng = np.random.default_rng(1)
    for _ in range(10):
        edges = random_edges(rng, 20, 0.25)
        view = StaticGraphView.from_edges(edges, range(20))
        labels = rng.integers(0, 4, 20)
        want = modularity_double_loop(range(20), edges, labels.tolist())
        assert abs(modularity(view, labels) - want) <= 1e-12


def test_modularity_relabel_invariant():
    rng = np.random.default_rng(2)
    edges = random_edges(rng, 20, 0.3)
    view = StaticGraphView.from_edges(edges, range(20))
    labels = rng.integers(0, 3, 20)
    q = modularity(view, labels)
    assert modularity(view, (labels + 1) % 3) == pytest.approx(q, abs=1e-14)
    perm = rng.permutation(20)
    moved = StaticGraphView.from_edges([(perm[a], perm[b]) for a, b in edges], range(20))
    relabelled = {int(perm[i]): int(labels[i]) for i in range(20)}
    assert modularity(moved, relabelled) == pytest.approx(q, abs=1e-14)


def test_modularity_errors():
    view = StaticGraphView.from_edges([(0, 1), (1, 2)])
    with pytest.raises(KeyError):
        modularity(view, {0: 0, 1: 0})
    with pytest.raises(ValueError):
        modularity(StaticGraphView.from_edges([], [1, 2]), np.zeros(2, int))


def test_two_triangles_split():
    view = StaticGraphView.from_edges([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    ca = detect_communities(view, seed=0)
    assert ca.count == 2
    assert ca.labels[0] == ca.labels[1] == ca.labels[2] != ca.labels[3] == ca.labels[4] == ca.labels[5]


def test_detection_is_deterministic():
    rng = np.random.default_rng(3)
    view = StaticGraphView.from_edges(random_edges(rng, 60, 0.08))
    a, b = detect_communities(view, seed=9), detect_communities(view, seed=9)
    assert np.array_equal(a.labels, b.labels) and a.modularity_q == b.modularity_q


def test_planted_partition_recovered():
    rng = np.random.default_rng(4)
    edges, planted = planted_partition(rng, 4, 25, 0.3, 0.01)
    view = StaticGraphView.from_edges(edges, range(100))
    ca = detect_communities(view, seed=0)
    assert ca.modularity_q >= 0.6
    assert label_agreement(ca.align(np.arange(100)).tolist(), planted) >= 0.9


def _q_after_move(view, labels, i, c):
    moved = labels.copy()
    moved[i] = c
    return modularity(view, moved)


def test_assignment_invariants_and_local_optimality():
    rng = np.random.default_rng(5)
    for seed in range(3):
        view = StaticGraphView.from_edges(random_edges(rng, 40, 0.1))
        ca = detect_communities(view, seed=seed)
        labels = ca.labels
        assert sorted(set(labels.tolist())) == list(range(ca.count))
        assert abs(ca.modularity_q - modularity(view, ca)) <= 1e-9
        q_single = modularity(view, np.arange(view.n))
        q_one = modularity(view, np.zeros(view.n, int))
        assert ca.modularity_q >= max(q_single, q_one) - 1e-12
        for i in range(view.n):
            for c in set(labels[view.neighbors(i)].tolist()) - {labels[i]}:
                assert _q_after_move(view, labels, i, c) <= ca.modularity_q + 1e-12


def test_level_history_is_monotone():
    rng = np.random.default_rng(6)
    edges, _ = planted_partition(rng, 5, 20, 0.25, 0.02)
    ca = detect_communities(StaticGraphView.from_edges(edges, range(100)), seed=1)
    assert all(b >= a - 1e-12 for a, b in zip(ca.history, ca.history[1:]))


def test_intra_degree_examples():
    # 0-1-2 triangle in community 0, node 3 hangs off 2 in community 1
    view = StaticGraphView.from_edges([(0, 1), (1, 2), (0, 2), (2, 3)])
    ca = CommunityAssignment(view.nodes, [0, 0, 0, 1], 0.0)
    assert intra_community_degree(view, ca, 0) == 2
    assert intra_community_degree(view, ca, 3) == 0
    assert intra_community_degree(view, ca, 2) == 2
    with pytest.raises(KeyError):
        intra_community_degree(view, ca, 7)


def test_intra_degrees_match_filter_count():
    rng = np.random.default_rng(7)
    view = StaticGraphView.from_edges(random_edges(rng, 50, 0.1), range(50))
    ca = detect_communities(view, seed=2)
    vec = intra_community_degrees(view, ca)
    for i, u in enumerate(view.nodes.tolist()):
        want = sum(1 for w in view.neighbor_ids(u) if ca[w] == ca[u])
        assert intra_community_degree(view, ca, u) == want == vec[i]
        assert want <= view.degree[i]


def test_assignment_serialisation(tmp_path):
    view = StaticGraphView.from_edges(cliques(2, 4))
    ca = detect_communities(view)
    d = json.loads(ca.to_json())
    assert d["count"] == 2 and len(d["assignment"]) == 8
    ca.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "node_id,community_id" and len(lines) == 9
