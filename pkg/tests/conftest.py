import numpy as np
import pytest

from hia.surrogate import SurrogateConfig, train_surrogate
from hia.synthetic import synthetic_temporal_graph
from hia.temporal_graph import TemporalGraph, chronological_split


def random_events(rng, n_nodes, n_events, t_max=100, integral=True):
    src = rng.integers(0, n_nodes, n_events)
    dst = rng.integers(0, n_nodes, n_events)
    dst = np.where(dst == src, (dst + 1) % n_nodes, dst)
    t = rng.integers(0, t_max, n_events).astype(float) if integral else rng.uniform(0, t_max, n_events)
    return [(int(a), int(b), float(c)) for a, b, c in zip(src, dst, t)]


def random_graph(rng, n_nodes, n_events, **kw) -> TemporalGraph:
    return TemporalGraph.from_events(random_events(rng, n_nodes, n_events, **kw))


def random_edges(rng, n, p):
    return [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


FAST_SURROGATE = {"embedding_dim": 8, "epochs": 2, "batch_size": 50}


@pytest.fixture(scope="session")
def small_stream():
    """A 60-node, 1,500-event synthetic stream and its split."""
    g, labels = synthetic_temporal_graph(n_nodes=60, n_events=1500, n_communities=3, seed=11)
    return g, labels, chronological_split(g)


@pytest.fixture(scope="session")
def small_model(small_stream):
    _, _, split = small_stream
    model, report = train_surrogate(split.train, SurrogateConfig(**FAST_SURROGATE, seed=3))
    return model, report


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
