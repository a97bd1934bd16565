"""Event-based temporal graphs: ingestion, chronological splits, perturbation and time queries."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "TemporalEvent",
    "TemporalGraph",
    "StaticGraphView",
    "ChronoSplit",
    "IngestReport",
    "IngestError",
    "SplitError",
    "PerturbationError",
    "ingest_events",
    "read_events_csv",
    "chronological_split",
    "apply_perturbation",
    "degree_at",
    "snapshot",
]


class IngestError(ValueError):
    """Raised for malformed or empty input records."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SplitError(ValueError):
    pass


class PerturbationError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class TemporalEvent:
    """One timestamped interaction. Ordering is (t, src, dst)."""

    t: float
    src: int
    dst: int

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"self-loop event on node {self.src}")
        if not self.t >= 0:
            raise ValueError(f"negative timestamp {self.t}")

    def as_tuple(self) -> tuple[int, int, float]:
        return (self.src, self.dst, self.t)


@dataclass(frozen=True)
class IngestReport:
    records_read: int
    self_loops_dropped: int
    duplicates_collapsed: int
    events: int
    nodes: int

    def to_dict(self) -> dict:
        return {
            "records_read": self.records_read,
            "self_loops_dropped": self.self_loops_dropped,
            "duplicates_collapsed": self.duplicates_collapsed,
            "events": self.events,
            "nodes": self.nodes,
        }


def _canonical(src: np.ndarray, dst: np.ndarray, t: np.ndarray):
    order = np.lexsort((dst, src, t))
    src, dst, t = src[order], dst[order], t[order]
    if len(t) > 1:
        keep = np.ones(len(t), dtype=bool)
        keep[1:] = (t[1:] != t[:-1]) | (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
        src, dst, t = src[keep], dst[keep], t[keep]
    return src, dst, t


class TemporalGraph:
    """Immutable, deduplicated, time-sorted sequence of interaction events.

    Events are kept in three parallel arrays ``src``, ``dst`` and ``t`` sorted
    by ``(t, src, dst)``. The node registry holds exactly the nodes incident to
    at least one event, and ``incidence(u)`` returns the sorted positions of
    the events touching ``u``.
    """

    def __init__(self, src, dst, t, report: IngestReport | None = None):
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        t = np.asarray(t, dtype=np.float64).ravel()
        if not (len(src) == len(dst) == len(t)):
            raise ValueError("src, dst and t must have equal length")
        if np.any(src == dst):
            raise ValueError("self-loop events are not allowed")
        if np.any(~(t >= 0)):
            raise ValueError("timestamps must be finite and non-negative")
        if np.any(src < 0) or np.any(dst < 0):
            raise ValueError("node ids must be non-negative")
        self.src, self.dst, self.t = _canonical(src, dst, t)
        for arr in (self.src, self.dst, self.t):
            arr.setflags(write=False)
        self.report = report

    @classmethod
    def empty(cls) -> "TemporalGraph":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))

    @classmethod
    def from_events(cls, events: Iterable[TemporalEvent | tuple]) -> "TemporalGraph":
        rows = [e.as_tuple() if isinstance(e, TemporalEvent) else tuple(e) for e in events]
        if not rows:
            return cls.empty()
        arr = np.array(rows, dtype=np.float64)
        return cls(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2])

    def __len__(self) -> int:
        return len(self.t)

    @property
    def num_events(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[TemporalEvent]:
        for s, d, t in zip(self.src.tolist(), self.dst.tolist(), self.t.tolist()):
            yield TemporalEvent(t, s, d)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TemporalGraph):
            return NotImplemented
        return (
            np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.t, other.t)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"TemporalGraph(events={len(self)}, nodes={self.num_nodes})"

    def triplets(self) -> np.ndarray:
        """(n, 3) float array of ``src, dst, t`` rows."""
        return np.column_stack([self.src, self.dst, self.t]) if len(self) else np.empty((0, 3))

    def event_set(self) -> set[tuple[int, int, float]]:
        return set(zip(self.src.tolist(), self.dst.tolist(), self.t.tolist()))

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = np.unique(np.concatenate([self.src, self.dst]))
        nodes.setflags(write=False)
        return nodes

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def t_min(self) -> float:
        return float(self.t[0])

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    def has_node(self, u: int) -> bool:
        i = np.searchsorted(self.nodes, u)
        return bool(i < len(self.nodes) and self.nodes[i] == u)

    def node_position(self, ids) -> np.ndarray:
        """Compact index of each id in ``nodes``; raises KeyError for unknown ids."""
        ids = np.asarray(ids, dtype=np.int64)
        if len(self.nodes) == 0:
            if ids.size:
                raise KeyError("graph has no nodes")
            return ids.copy()
        pos = np.searchsorted(self.nodes, ids)
        bad = self.nodes[np.minimum(pos, len(self.nodes) - 1)] != ids
        if np.any(bad):
            raise KeyError(f"unknown node id(s): {np.atleast_1d(ids)[np.atleast_1d(bad)][:5].tolist()}")
        return pos

    @cached_property
    def _incidence(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self)
        ends = np.concatenate([self.node_position(self.src), self.node_position(self.dst)]) if n else np.empty(0, np.int64)
        pos = np.concatenate([np.arange(n), np.arange(n)])
        order = np.lexsort((pos, ends))
        indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(ends, minlength=self.num_nodes), out=indptr[1:])
        return indptr, pos[order]

    def incidence(self, u: int) -> np.ndarray:
        """Sorted positions of events incident to node ``u``."""
        if not self.has_node(u):
            raise KeyError(f"unknown node {u}")
        indptr, positions = self._incidence
        i = int(self.node_position(u))
        return positions[indptr[i] : indptr[i + 1]]

    def partners(self, u: int, positions: np.ndarray | None = None) -> np.ndarray:
        pos = self.incidence(u) if positions is None else positions
        return np.where(self.src[pos] == u, self.dst[pos], self.src[pos])

    @cached_property
    def _lookup(self) -> dict[tuple[int, int, float], int]:
        return {k: i for i, k in enumerate(zip(self.src.tolist(), self.dst.tolist(), self.t.tolist()))}

    def contains(self, src: int, dst: int, t: float) -> bool:
        return (int(src), int(dst), float(t)) in self._lookup

    def position_of(self, src: int, dst: int, t: float) -> int:
        return self._lookup.get((int(src), int(dst), float(t)), -1)

    @cached_property
    def pair_keys(self) -> np.ndarray:
        """Sorted unique undirected pair keys ``lo * K + hi`` (K = max id + 1)."""
        lo, hi = np.minimum(self.src, self.dst), np.maximum(self.src, self.dst)
        keys = np.unique(lo * self.key_base + hi)
        keys.setflags(write=False)
        return keys

    @property
    def key_base(self) -> int:
        return int(self.nodes[-1]) + 1 if len(self.nodes) else 1

    def pairs_exist(self, u, v) -> np.ndarray:
        """Vectorised test whether an undirected pair ever interacted."""
        u, v = np.asarray(u, np.int64), np.asarray(v, np.int64)
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        base = self.key_base
        inrange = hi < base
        keys = lo * base + np.minimum(hi, base - 1)
        idx = np.searchsorted(self.pair_keys, keys)
        idx = np.minimum(idx, max(len(self.pair_keys) - 1, 0))
        found = (self.pair_keys[idx] == keys) if len(self.pair_keys) else np.zeros(keys.shape, bool)
        return found & inrange

    def window(self, t_start: float, t_end: float) -> "TemporalGraph":
        """Sub-graph of events with ``t_start <= t <= t_end``."""
        a = np.searchsorted(self.t, t_start, side="left")
        b = np.searchsorted(self.t, t_end, side="right")
        return TemporalGraph(self.src[a:b], self.dst[a:b], self.t[a:b])

    def degree_at(self, u: int, t: float, mode: str = "distinct") -> int:
        return degree_at(self, u, t, mode)

    def degrees_at(self, t: float, mode: str = "distinct") -> np.ndarray:
        """Degree of every registry node over events with timestamp <= t, aligned to ``nodes``."""
        b = np.searchsorted(self.t, t, side="right")
        s, d = self.node_position(self.src[:b]), self.node_position(self.dst[:b])
        if mode == "events":
            return np.bincount(np.concatenate([s, d]), minlength=self.num_nodes)
        if mode != "distinct":
            raise ValueError(f"unknown degree mode {mode!r}")
        lo, hi = np.minimum(s, d), np.maximum(s, d)
        keys = np.unique(lo * self.num_nodes + hi)
        lo, hi = keys // self.num_nodes, keys % self.num_nodes
        return np.bincount(np.concatenate([lo, hi]), minlength=self.num_nodes)

    def activity_intervals(self) -> tuple[np.ndarray, np.ndarray]:
        """First and last event time of every registry node, aligned to ``nodes``."""
        ends = np.concatenate([self.node_position(self.src), self.node_position(self.dst)])
        times = np.concatenate([self.t, self.t])
        first = np.full(self.num_nodes, np.inf)
        last = np.full(self.num_nodes, -np.inf)
        np.minimum.at(first, ends, times)
        np.maximum.at(last, ends, times)
        return first, last

    def snapshot(self, t_start: float | None = None, t_end: float | None = None) -> "StaticGraphView":
        return snapshot(self, self.t_min if t_start is None else t_start, self.t_max if t_end is None else t_end)

    def to_csv(self, path: str | Path, origin: Sequence[str] | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src", "dst", "timestamp"] + (["origin"] if origin is not None else []))
            for i, (s, d, t) in enumerate(zip(self.src.tolist(), self.dst.tolist(), self.t.tolist())):
                w.writerow([s, d, _fmt_time(t)] + ([origin[i]] if origin is not None else []))


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


class StaticGraphView:
    """Undirected simple graph over a compact node index.

    ``nodes[i]`` is the original id of compact node ``i``; adjacency is a
    symmetric CSR structure without self-loops or parallel edges.
    """

    def __init__(self, nodes: np.ndarray, lo: np.ndarray, hi: np.ndarray):
        """``lo``/``hi`` are compact endpoint indices of unique undirected edges."""
        self.nodes = np.asarray(nodes, dtype=np.int64)
        n = len(self.nodes)
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        self.edges = np.column_stack([lo, hi]) if len(lo) else np.empty((0, 2), np.int64)
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        order = np.lexsort((cols, rows))
        self.indices = cols[order]
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=self.indptr[1:])

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]], nodes: Iterable[int] | None = None) -> "StaticGraphView":
        pairs = {(min(a, b), max(a, b)) for a, b in edges if a != b}
        ids = set(nodes) if nodes is not None else set()
        for a, b in pairs:
            ids.update((a, b))
        node_arr = np.array(sorted(ids), dtype=np.int64)
        if not pairs:
            return cls(node_arr, np.empty(0, np.int64), np.empty(0, np.int64))
        arr = np.array(sorted(pairs), dtype=np.int64)
        return cls(node_arr, np.searchsorted(node_arr, arr[:, 0]), np.searchsorted(node_arr, arr[:, 1]))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.edges)

    def __len__(self) -> int:
        return self.n

    def __contains__(self, u) -> bool:
        i = np.searchsorted(self.nodes, u)
        return bool(i < self.n and self.nodes[i] == u)

    def index(self, u: int) -> int:
        if u not in self:
            raise KeyError(f"node {u} not in view")
        return int(np.searchsorted(self.nodes, u))

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        """Compact neighbor indices of compact node ``i``."""
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def neighbor_ids(self, u: int) -> set[int]:
        return set(self.nodes[self.neighbors(self.index(u))].tolist())

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def edge_set(self) -> set[tuple[int, int]]:
        ids = self.nodes
        return {(int(ids[a]), int(ids[b])) for a, b in self.edges.tolist()}

    def subgraph_without(self, drop: Iterable[tuple[int, int]]) -> "StaticGraphView":
        drop = {(min(a, b), max(a, b)) for a, b in drop}
        return StaticGraphView.from_edges([e for e in self.edge_set() if e not in drop], self.nodes.tolist())


@dataclass
class ChronoSplit:
    train: TemporalGraph
    val: TemporalGraph
    test: TemporalGraph
    boundaries: tuple[float, float]


def _parse_row(row: Sequence[str], line: int):
    if len(row) < 3:
        raise IngestError(f"expected at least 3 columns, got {len(row)}", line)
    try:
        s = int(row[0])
        d = int(row[1])
        t = float(row[2])
    except ValueError as exc:
        raise IngestError(f"cannot parse record {row[:3]!r}: {exc}", line) from None
    if s < 0 or d < 0:
        raise IngestError("node ids must be non-negative", line)
    if not t >= 0 or t == float("inf"):
        raise IngestError(f"invalid timestamp {row[2]!r}", line)
    return s, d, t


def ingest_events(records: Iterable[Sequence], *, start_line: int = 1) -> TemporalGraph:
    """Build a graph from ``(src, dst, t)`` records.

    Duplicates collapse to one event and self-loops are dropped and counted
    in ``graph.report``. Raises :class:`IngestError` with the offending line
    number for malformed records and when nothing survives.
    """
    src, dst, ts = [], [], []
    n_read = loops = 0
    for k, rec in enumerate(records):
        n_read += 1
        s, d, t = _parse_row([str(x) for x in rec], start_line + k)
        if s == d:
            loops += 1
            continue
        src.append(s)
        dst.append(d)
        ts.append(t)
    if not src:
        raise IngestError(f"no events after ingestion ({n_read} records, {loops} self-loops dropped)")
    g = TemporalGraph(src, dst, ts)
    g.report = IngestReport(n_read, loops, len(src) - len(g), len(g), g.num_nodes)
    return g


def read_events_csv(path: str | Path, fmt: str = "csv") -> TemporalGraph:
    """Read ``src,dst,timestamp[,extra...]`` CSV, or a JODIE file with ``fmt='jodie'``.

    A single header line is skipped when its first field is not an integer.
    JODIE item ids are offset past the largest user id so that both sides
    live in disjoint id ranges.
    """
    if fmt not in ("csv", "jodie"):
        raise ValueError(f"unknown format {fmt!r}")
    parsed: list[tuple[int, int, float]] = []
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if line == 1 and not row[0].strip().lstrip("-").isdigit():
                continue
            parsed.append(_parse_row(row, line))
    if not parsed:
        raise IngestError("no records in input file")
    if fmt == "jodie":
        offset = max(s for s, _, _ in parsed) + 1
        parsed = [(s, d + offset, t) for s, d, t in parsed]
    return ingest_events(parsed)


def chronological_split(g: TemporalGraph, fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)) -> ChronoSplit:
    """Split events by time into train/val/test; events tied at a boundary go to the earlier split."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(g)
    if n < 10:
        raise SplitError(f"need at least 10 events to split, got {n}")
    n_train = max(1, int(round(fractions[0] * n)))
    n_val_end = max(n_train + 1, int(round((fractions[0] + fractions[1]) * n)))
    t_train_end = float(g.t[n_train - 1])
    t_val_end = float(g.t[min(n_val_end, n) - 1])
    a = int(np.searchsorted(g.t, t_train_end, side="right"))
    b = int(np.searchsorted(g.t, t_val_end, side="right"))
    if not (0 < a < b < n):
        raise SplitError(
            f"timestamp ties leave an empty split (train={a}, val={b - a}, test={n - b}); "
            "too few distinct timestamps"
        )
    part = lambda i, j: TemporalGraph(g.src[i:j], g.dst[i:j], g.t[i:j])
    return ChronoSplit(part(0, a), part(a, b), part(b, n), (t_train_end, t_val_end))


def _plan_arrays(events) -> np.ndarray:
    if isinstance(events, TemporalGraph):
        return events.triplets()
    arr = np.asarray(
        [e.as_tuple() if isinstance(e, TemporalEvent) else tuple(e) for e in events] if not isinstance(events, np.ndarray) else events,
        dtype=np.float64,
    )
    return arr.reshape(-1, 3)


def apply_perturbation(g: TemporalGraph, plan) -> TemporalGraph:
    """Return ``(E minus deletions) union injections`` as a new graph.

    ``plan`` is anything exposing ``deletions`` and ``injections`` as
    sequences of events or ``(n, 3)`` arrays of ``src, dst, t``.
    """
    dels = _plan_arrays(plan.deletions)
    adds = _plan_arrays(plan.injections)
    del_keys = {(int(s), int(d), float(t)) for s, d, t in dels.tolist()}
    add_keys = {(int(s), int(d), float(t)) for s, d, t in adds.tolist()}
    if len(del_keys) != len(dels) or len(add_keys) != len(adds):
        raise PerturbationError("plan contains repeated events")
    if del_keys & add_keys:
        raise PerturbationError("injections and deletions overlap")
    keep = np.ones(len(g), dtype=bool)
    for key in del_keys:
        pos = g.position_of(*key)
        if pos < 0:
            raise PerturbationError(f"deletion target {key} not in graph")
        keep[pos] = False
    for key in add_keys:
        if g.contains(*key):
            raise PerturbationError(f"injection {key} duplicates an existing event")
        if key[0] == key[1]:
            raise PerturbationError(f"injection {key} is a self-loop")
    src = np.concatenate([g.src[keep], adds[:, 0].astype(np.int64)])
    dst = np.concatenate([g.dst[keep], adds[:, 1].astype(np.int64)])
    t = np.concatenate([g.t[keep], adds[:, 2]])
    return TemporalGraph(src, dst, t)


def degree_at(g: TemporalGraph, u: int, t: float, mode: str = "distinct") -> int:
    """Degree of ``u`` over events with timestamp <= t.

    ``mode='distinct'`` counts distinct neighbours (default); ``'events'``
    counts incident events.
    """
    pos = g.incidence(u)
    k = int(np.searchsorted(g.t[pos], t, side="right"))
    if mode == "events":
        return k
    if mode != "distinct":
        raise ValueError(f"unknown degree mode {mode!r}")
    return len(np.unique(g.partners(u, pos[:k])))


def snapshot(g: TemporalGraph, t_start: float, t_end: float) -> StaticGraphView:
    """Undirected simple-graph projection of the events in ``[t_start, t_end]``."""
    if t_start > t_end:
        raise ValueError(f"inverted window [{t_start}, {t_end}]")
    a = np.searchsorted(g.t, t_start, side="left")
    b = np.searchsorted(g.t, t_end, side="right")
    s, d = g.src[a:b], g.dst[a:b]
    if len(s) == 0:
        return StaticGraphView(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64))
    nodes = np.unique(np.concatenate([s, d]))
    si, di = np.searchsorted(nodes, s), np.searchsorted(nodes, d)
    lo, hi = np.minimum(si, di), np.maximum(si, di)
    n = len(nodes)
    keys = np.unique(lo * n + hi)
    return StaticGraphView(nodes, keys // n, keys % n)
