"""High Impact Attack: impact-ranked node targeting and surrogate-guided hybrid perturbation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .community import CommunityAssignment, detect_communities, intra_community_degrees
from .graph_metrics import MetricTable, betweenness_centrality, degree_growth_table
from .plan import BudgetViolation, PerturbationPlan
from .rng import derive_seed, stream
from .surrogate import SurrogateConfig, SurrogateModel, percentile_threshold, train_surrogate
from .temporal_graph import TemporalGraph, apply_perturbation

log = logging.getLogger(__name__)

MODES = ("hybrid", "injection_only", "deletion_only")
MAX_CANDIDATE_PAIRS = 200_000


@dataclass
class AttackConfig:
    delta: float = 0.3
    alpha: float = 0.6
    weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    window: float | None = None
    del_percentile: float = 85.0
    inj_percentile: float = 10.0
    inj_candidate_sample: int | None = None
    deletion_fraction: float = 0.5
    seed: int = 0
    use_community: bool = True
    mode: str = "hybrid"
    extend_selection: bool = True
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    def __post_init__(self):
        if isinstance(self.surrogate, dict):
            self.surrogate = SurrogateConfig.from_dict(self.surrogate)
        self.weights = tuple(float(w) for w in self.weights)
        if not 0 <= self.delta <= 1:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if len(self.weights) != 3 or abs(sum(self.weights) - 1.0) > 1e-9 or min(self.weights) < 0:
            raise ValueError(f"weights must be three non-negative numbers summing to 1, got {self.weights}")
        for p in (self.del_percentile, self.inj_percentile):
            if not 0 <= p <= 100:
                raise ValueError(f"percentiles must lie in [0, 100], got {p}")
        if not 0 <= self.deletion_fraction <= 1:
            raise ValueError("deletion_fraction must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.window is not None and not self.window > 0:
            raise ValueError("window must be positive")

    def effective_weights(self) -> tuple[float, float, float]:
        """Weights after dropping the community term when community detection is off."""
        if self.use_community:
            return self.weights
        w1, w2, _ = self.weights
        s = w1 + w2
        return (w1 / s, w2 / s, 0.0) if s > 0 else (0.5, 0.5, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "weights" in known:
            known["weights"] = tuple(known["weights"])
        return cls(**known)


def perturbation_budget(n_events: int, delta: float) -> int:
    return int(math.floor(delta * n_events + 1e-9))


@dataclass
class ImpactTable:
    """Impact(v) and its raw components for every node, aligned to ``nodes``."""

    nodes: np.ndarray
    impact: np.ndarray
    growth: np.ndarray
    betweenness: np.ndarray
    intra_degree: np.ndarray
    community: np.ndarray
    cross_community: np.ndarray
    weights: tuple[float, float, float]

    @staticmethod
    def normalize(x: np.ndarray) -> np.ndarray:
        """Min-max to [0, 1]; a constant component maps to zeros.

        Results are rounded to 12 decimals so that tied raw values stay tied
        after any positive affine rescaling of the component.
        """
        x = np.asarray(x, dtype=np.float64)
        if len(x) == 0:
            return x
        lo, hi = x.min(), x.max()
        if hi - lo <= 0:
            return np.zeros_like(x)
        return np.round((x - lo) / (hi - lo), 12)

    @property
    def growth_norm(self) -> np.ndarray:
        return self.normalize(self.growth)

    @property
    def betweenness_norm(self) -> np.ndarray:
        return self.normalize(self.betweenness)

    @property
    def intra_norm(self) -> np.ndarray:
        return self.normalize(self.intra_degree)

    def ranking(self, mask: np.ndarray | None = None) -> np.ndarray:
        """Node positions by impact descending, ties by node id ascending."""
        idx = np.arange(len(self.nodes)) if mask is None else np.flatnonzero(mask)
        order = np.lexsort((self.nodes[idx], -self.impact[idx]))
        return idx[order]

    def row(self, u: int) -> dict:
        i = int(np.searchsorted(self.nodes, u))
        if i >= len(self.nodes) or self.nodes[i] != u:
            raise KeyError(u)
        return {
            "impact": float(self.impact[i]),
            "growth": float(self.growth[i]),
            "betweenness": float(self.betweenness[i]),
            "intra_degree": int(self.intra_degree[i]),
            "community": int(self.community[i]),
        }


@dataclass
class NodeSelection:
    high_attraction: list[int]
    bridge: list[int]
    tau_node: float

    @property
    def all(self) -> list[int]:
        return self.high_attraction + self.bridge


@dataclass
class PlannedEdges:
    events: np.ndarray
    scores: np.ndarray
    anchors: np.ndarray
    threshold: float
    shortfall: int

    def __len__(self) -> int:
        return len(self.events)


def compute_impact_scores(
    train: TemporalGraph,
    communities: CommunityAssignment | None,
    metrics: tuple[MetricTable, MetricTable],
    config: AttackConfig,
) -> ImpactTable:
    """Impact(v) = w1 * growth + w2 * betweenness + w3 * intra-community degree, each min-max normalised.

    ``metrics`` is the (degree growth, betweenness) pair. With
    ``config.use_community`` off, or ``communities`` None, the community term
    is dropped and every node shares community 0.
    """
    growth_t, between_t = metrics
    nodes = train.nodes
    growth = growth_t.align(nodes)
    between = between_t.align(nodes)
    view = train.snapshot()
    w1, w2, w3 = config.effective_weights()
    if config.use_community and communities is not None:
        comm = communities.align(nodes)
        intra_view = intra_community_degrees(view, communities)
        intra = intra_view[np.searchsorted(view.nodes, nodes)]
        lo, hi = view.edges[:, 0], view.edges[:, 1]
        cl = communities.align(view.nodes)
        crossing = cl[lo] != cl[hi]
        cross_v = np.zeros(view.n, dtype=bool)
        cross_v[lo[crossing]] = True
        cross_v[hi[crossing]] = True
        cross = cross_v[np.searchsorted(view.nodes, nodes)]
    else:
        comm = np.zeros(len(nodes), dtype=np.int64)
        intra = view.degree[np.searchsorted(view.nodes, nodes)]
        cross = np.ones(len(nodes), dtype=bool)
    impact = (
        w1 * ImpactTable.normalize(growth)
        + w2 * ImpactTable.normalize(between)
        + w3 * ImpactTable.normalize(intra)
    )
    return ImpactTable(nodes.copy(), impact, growth, between, intra, comm, cross, (w1, w2, w3))


def select_target_nodes(
    impact: ImpactTable,
    model: SurrogateModel | None,
    config: AttackConfig,
    n_total: int,
    t: float | None = None,
) -> NodeSelection:
    """Split ``n_total`` target slots alpha : (1 - alpha) between high-attraction and bridge nodes.

    A node is a bridge candidate when its normalised betweenness exceeds its
    normalised growth (and, with communities on, it has a neighbour in
    another community); every other node is a high-attraction candidate.
    Within a role nodes are taken by Impact(v); a role short of candidates is
    topped up from the best remaining nodes.
    """
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    n = len(impact.nodes)
    if n_total > n:
        log.warning("n_total=%d exceeds node count %d; clamping", n_total, n)
        n_total = n
    n_high = int(round(config.alpha * n_total))
    n_bridge = n_total - n_high
    is_bridge = bridge_candidates(impact, config)

    taken = np.zeros(n, dtype=bool)

    def fill(pool_mask: np.ndarray, k: int) -> list[int]:
        out = []
        for mask in (pool_mask, np.ones(n, dtype=bool)):
            for i in impact.ranking(mask & ~taken):
                if len(out) >= k:
                    return out
                taken[i] = True
                out.append(int(impact.nodes[i]))
        return out

    high = fill(~is_bridge, n_high)
    bridge = fill(is_bridge, n_bridge)
    return NodeSelection(high, bridge, membership_threshold(model, high + bridge, t))


def bridge_candidates(impact: ImpactTable, config: AttackConfig) -> np.ndarray:
    is_bridge = impact.betweenness_norm > impact.growth_norm
    if config.use_community:
        is_bridge &= impact.cross_community
    return is_bridge


def membership_threshold(model: SurrogateModel | None, selected: list[int], t: float | None) -> float:
    """Minimum surrogate importance over the selected nodes."""
    if model is None or not selected:
        return float("nan")
    tt = np.full(len(selected), float(t) if t is not None else 0.0)
    return float(np.min(model.node_importances(np.array(selected), tt)))


def extend_selection(
    impact: ImpactTable, selection: NodeSelection, k: int, config: AttackConfig
) -> tuple[list[int], list[int]]:
    """The next ``k`` unselected nodes by Impact(v), split into (high-attraction, bridge) by role."""
    chosen = np.isin(impact.nodes, np.array(selection.all, dtype=np.int64))
    nxt = impact.ranking(~chosen)[:k]
    is_bridge = bridge_candidates(impact, config)[nxt]
    ids = impact.nodes[nxt]
    return ids[~is_bridge].tolist(), ids[is_bridge].tolist()


# -- candidate machinery shared with the baselines ---------------------------


def injection_times(rng, g: TemporalGraph, anchor: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Uniform timestamps in the overlap of both endpoints' activity intervals, else the anchor's.

    Draws are integral when every timestamp of ``g`` is.
    """
    first, last = g.activity_intervals()
    ia, io = g.node_position(anchor), g.node_position(other)
    lo = np.maximum(first[ia], first[io])
    hi = np.minimum(last[ia], last[io])
    empty = lo > hi
    lo = np.where(empty, first[ia], lo)
    hi = np.where(empty, last[ia], hi)
    u = rng.random(len(anchor))
    if _integral_times(g):
        return np.floor(lo + u * (hi - lo + 1)).clip(lo, hi)
    return lo + u * (hi - lo)


def _integral_times(g: TemporalGraph) -> bool:
    cached = getattr(g, "_integral", None)
    if cached is None:
        cached = bool(np.all(g.t == np.floor(g.t)))
        g._integral = cached
    return cached


def coexist(g: TemporalGraph, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Whether the activity intervals of ``a`` and ``b`` overlap."""
    first, last = g.activity_intervals()
    ia, ib = g.node_position(a), g.node_position(b)
    return np.maximum(first[ia], first[ib]) <= np.minimum(last[ia], last[ib])


def sample_partner_candidates(
    rng,
    g: TemporalGraph,
    anchors: np.ndarray,
    per_anchor: int,
    exclude_pairs: set | None = None,
    coexisting: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Distinct ``(anchor, other)`` pairs that never interacted, ``per_anchor`` draws per anchor.

    With ``coexisting`` set, pairs whose activity intervals do not overlap
    are discarded, so every candidate can be timed plausibly for both ends.
    """
    n = g.num_nodes
    if n < 2 or len(anchors) == 0 or per_anchor <= 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    a = np.repeat(np.asarray(anchors, np.int64), per_anchor)
    o = g.nodes[rng.integers(0, n, size=len(a))]
    ok = (a != o) & ~g.pairs_exist(a, o)
    if coexisting:
        ok &= coexist(g, a, o)
    a, o = a[ok], o[ok]
    lo, hi = np.minimum(a, o), np.maximum(a, o)
    _, first = np.unique(lo * g.key_base + hi, return_index=True)
    first = np.sort(first)
    a, o = a[first], o[first]
    if exclude_pairs:
        keep = np.array([(min(x, y), max(x, y)) not in exclude_pairs for x, y in zip(a.tolist(), o.tolist())], dtype=bool)
        a, o = a[keep], o[keep]
    return a, o


def sample_nonexistent_pairs(rng, g: TemporalGraph, size: int) -> tuple[np.ndarray, np.ndarray]:
    n = g.num_nodes
    a = g.nodes[rng.integers(0, n, size=size)]
    o = g.nodes[rng.integers(0, n, size=size)]
    ok = (a != o) & ~g.pairs_exist(a, o)
    return a[ok], o[ok]


# -- planning ------------------------------------------------------------------


class _Context:
    """Per-run caches: surrogate scores of every training event and the two thresholds."""

    def __init__(self, train: TemporalGraph, model: SurrogateModel, config: AttackConfig):
        self.train = train
        self.model = model
        self.config = config
        self.event_scores = model.edge_likelihoods(train.src, train.dst, train.t)
        self.tau_del = percentile_threshold(self.event_scores, config.del_percentile) if len(train) else math.inf
        rng = stream(config.seed, "tau-threshold")
        size = min(MAX_CANDIDATE_PAIRS, max(20 * len(train), 1000))
        a, o = sample_nonexistent_pairs(rng, train, size)
        if len(a):
            t = injection_times(rng, train, a, o)
            self.tau_inj = percentile_threshold(model.edge_likelihoods(a, o, t), config.inj_percentile)
        else:
            self.tau_inj = -math.inf
        self.deleted: set[int] = set()
        self.injected_pairs: set[tuple[int, int]] = set()


def _ctx(train, model, config, ctx):
    return ctx if ctx is not None else _Context(train, model, config)


def plan_deletions(
    train: TemporalGraph,
    selection: NodeSelection | list[int],
    model: SurrogateModel,
    budget_d: int,
    config: AttackConfig,
    ctx: _Context | None = None,
) -> PlannedEdges:
    """Highest-likelihood events anchored at selected nodes, above the deletion percentile.

    Candidates are the events incident to a selected node; the threshold is
    ``del_percentile`` of the surrogate likelihood over every training event.
    Survivors are sorted by likelihood (descending, ties by event order) and
    truncated to ``budget_d``. Events already claimed in ``ctx`` are skipped.
    """
    if budget_d < 0:
        raise ValueError("budget_d must be >= 0")
    ctx = _ctx(train, model, config, ctx)
    nodes = selection.all if isinstance(selection, NodeSelection) else list(selection)
    empty = PlannedEdges(np.empty((0, 3)), np.empty(0), np.empty(0, np.int64), ctx.tau_del, budget_d)
    if budget_d == 0 or not nodes or len(train) == 0:
        return empty
    pos_list, anchor_list = [], []
    for u in nodes:
        if not train.has_node(u):
            continue
        p = train.incidence(u)
        pos_list.append(p)
        anchor_list.append(np.full(len(p), u, dtype=np.int64))
    if not pos_list:
        return empty
    pos = np.concatenate(pos_list)
    anchors = np.concatenate(anchor_list)
    # first anchor in selection order wins for events touching two selected nodes
    pos, first = np.unique(pos, return_index=True)
    anchors = anchors[first]
    if ctx.deleted:
        keep = ~np.isin(pos, np.fromiter(ctx.deleted, dtype=np.int64))
        pos, anchors = pos[keep], anchors[keep]
    scores = ctx.event_scores[pos]
    hot = scores > ctx.tau_del
    pos, anchors, scores = pos[hot], anchors[hot], scores[hot]
    order = np.lexsort((pos, -scores))[:budget_d]
    pos, anchors, scores = pos[order], anchors[order], scores[order]
    ctx.deleted.update(pos.tolist())
    events = np.column_stack([train.src[pos], train.dst[pos], train.t[pos]]).astype(np.float64)
    return PlannedEdges(events.reshape(-1, 3), scores, anchors, ctx.tau_del, budget_d - len(pos))


def plan_injections(
    train: TemporalGraph,
    selection: NodeSelection | list[int],
    model: SurrogateModel,
    budget_a: int,
    config: AttackConfig,
    ctx: _Context | None = None,
    label: str = "inject",
) -> PlannedEdges:
    """Lowest-likelihood never-seen pairs anchored at selected nodes, below the injection percentile.

    The threshold is ``inj_percentile`` of the surrogate likelihood over a
    seeded sample of non-existent pairs. Candidates pair each selected node
    with sampled non-partners, timestamped inside the endpoints' shared
    activity window; those under the threshold are kept lowest first.
    """
    if budget_a < 0:
        raise ValueError("budget_a must be >= 0")
    ctx = _ctx(train, model, config, ctx)
    nodes = selection.all if isinstance(selection, NodeSelection) else list(selection)
    nodes = [u for u in nodes if train.has_node(u)]
    empty = PlannedEdges(np.empty((0, 3)), np.empty(0), np.empty(0, np.int64), ctx.tau_inj, budget_a)
    if budget_a == 0 or not nodes:
        return empty
    rng = stream(config.seed, "injection-candidates", label, *nodes[:4], len(nodes))
    if config.inj_candidate_sample is not None:
        pool = config.inj_candidate_sample
    else:
        incident = sum(len(train.incidence(u)) for u in nodes)
        pool = min(MAX_CANDIDATE_PAIRS, max(20 * incident, 20 * budget_a))
    per_anchor = max(1, math.ceil(pool / len(nodes)))
    a, o = sample_partner_candidates(rng, train, np.array(nodes), per_anchor, ctx.injected_pairs, coexisting=True)
    if len(a) == 0:
        return empty
    t = injection_times(rng, train, a, o)
    scores = model.edge_likelihoods(a, o, t)
    cold = scores < ctx.tau_inj
    a, o, t, scores = a[cold], o[cold], t[cold], scores[cold]
    order = np.lexsort((o, a, scores))[:budget_a]
    a, o, t, scores = a[order], o[order], t[order], scores[order]
    ctx.injected_pairs.update((min(x, y), max(x, y)) for x, y in zip(a.tolist(), o.tolist()))
    events = np.column_stack([a, o, t]).astype(np.float64).reshape(-1, 3)
    return PlannedEdges(events, scores, a.copy(), ctx.tau_inj, budget_a - len(a))


def n_targets(train: TemporalGraph, budget: int) -> int:
    """ceil(budget / average degree), clamped to [10, 5% of nodes]; the lower bound wins on small graphs."""
    view = train.snapshot()
    avg_deg = 2.0 * view.m / max(view.n, 1)
    raw = math.ceil(budget / avg_deg) if avg_deg > 0 else 1
    lower = min(10, train.num_nodes)
    upper = max(lower, math.ceil(0.05 * train.num_nodes))
    return int(min(max(raw, lower), upper))


def _role_budgets(budget: int, alpha: float) -> tuple[int, int]:
    high = min(budget, int(math.ceil(alpha * budget - 1e-9)))
    return high, budget - high


def run_hia(
    train: TemporalGraph,
    config: AttackConfig | None = None,
    model: SurrogateModel | None = None,
) -> tuple[PerturbationPlan, TemporalGraph]:
    """Full pipeline: surrogate, metrics, communities, impact, selection, hybrid planning, application."""
    config = config or AttackConfig()
    if len(train) == 0:
        raise ValueError("cannot attack an empty graph")
    timings: dict[str, float] = {}
    budget = perturbation_budget(len(train), config.delta)
    if budget == 0:
        plan = PerturbationPlan("hia", 0, meta={"config": config.to_dict()})
        return plan, apply_perturbation(train, plan)

    clock = time.perf_counter()
    if model is None:
        scfg = SurrogateConfig.from_dict(config.surrogate.to_dict())
        scfg.seed = derive_seed(config.seed, "surrogate")
        scfg.batch_size = min(scfg.batch_size, len(train))
        model, _ = train_surrogate(train, scfg)
    timings["surrogate"] = time.perf_counter() - clock

    clock = time.perf_counter()
    t_end = train.t_max
    span = train.t_max - train.t_min
    window = config.window if config.window is not None else max(0.1 * span, 1.0)
    view = train.snapshot()
    growth = degree_growth_table(train, t_end, window)
    between = betweenness_centrality(view, seed=derive_seed(config.seed, "betweenness"))
    communities = None
    if config.use_community and view.m > 0:
        communities = detect_communities(view, seed=derive_seed(config.seed, "communities") % (2**32))
    impact = compute_impact_scores(train, communities, (growth, between), config)
    n_total = n_targets(train, budget)
    selection = select_target_nodes(impact, model, config, n_total, t=t_end)
    timings["selection"] = time.perf_counter() - clock

    clock = time.perf_counter()
    ctx = _Context(train, model, config)
    b_high, b_bridge = _role_budgets(budget, config.alpha)
    dels: list[PlannedEdges] = []
    adds: list[PlannedEdges] = []
    rules_d: list[str] = []
    rules_a: list[str] = []
    shortfall: dict[str, int] = {}

    def run_role(role: str, nodes: list[int], sub: int) -> None:
        if sub <= 0 or not nodes:
            shortfall[role] = sub
            return
        if config.mode == "injection_only":
            bd = 0
        elif config.mode == "deletion_only":
            bd = sub
        else:
            bd = int(math.floor(config.deletion_fraction * sub))
        d = plan_deletions(train, nodes, model, bd, config, ctx)
        ba = sub - bd
        if config.mode != "deletion_only":
            ba += d.shortfall
        a = plan_injections(train, nodes, model, ba, config, ctx, label=role) if config.mode != "deletion_only" else None
        used = len(d) + (len(a) if a is not None else 0)
        extra = None
        if config.mode != "injection_only" and used < sub:
            extra = plan_deletions(train, nodes, model, sub - used, config, ctx)
            used += len(extra)
        for part, rule in ((d, f"delete:{role}"), (extra, f"delete:{role}:realloc")):
            if part is not None and len(part):
                dels.append(part)
                rules_d.extend([rule] * len(part))
        if a is not None and len(a):
            adds.append(a)
            rules_a.extend([f"inject:{role}"] * len(a))
        shortfall[role] = sub - used

    run_role("high_attraction", selection.high_attraction, b_high)
    run_role("bridge", selection.bridge, b_bridge)
    leftover = shortfall.get("high_attraction", 0) + shortfall.get("bridge", 0)
    if leftover > 0:
        run_role("pooled", selection.all, leftover)
        leftover = shortfall["pooled"]
    # the core selection could not absorb the budget: walk further down the impact ranking
    rounds = 0
    while config.extend_selection and leftover > 0 and len(selection.all) < len(impact.nodes):
        rounds += 1
        high, bridge = extend_selection(impact, selection, n_total, config)
        selection.high_attraction.extend(high)
        selection.bridge.extend(bridge)
        run_role(f"extended{rounds}", high + bridge, leftover)
        leftover = shortfall[f"extended{rounds}"]
    if rounds:
        selection.tau_node = membership_threshold(model, selection.all, t_end)
    timings["planning"] = time.perf_counter() - clock

    def stack(parts: list[PlannedEdges]):
        if not parts:
            return np.empty((0, 3)), np.empty(0), np.empty(0, np.int64)
        return (
            np.concatenate([p.events for p in parts]),
            np.concatenate([p.scores for p in parts]),
            np.concatenate([p.anchors for p in parts]),
        )

    d_ev, d_sc, d_an = stack(dels)
    a_ev, a_sc, a_an = stack(adds)
    plan = PerturbationPlan(
        "hia",
        budget,
        d_ev,
        a_ev,
        [{"rule": r, "score": float(s), "anchor": int(x)} for r, s, x in zip(rules_d, d_sc, d_an)],
        [{"rule": r, "score": float(s), "anchor": int(x)} for r, s, x in zip(rules_a, a_sc, a_an)],
        meta={
            "config": config.to_dict(),
            "n_total": n_total,
            "n_selected": len(selection.all),
            "high_attraction": selection.high_attraction,
            "bridge": selection.bridge,
            "tau_node": selection.tau_node,
            "tau_del": ctx.tau_del,
            "tau_threshold": ctx.tau_inj,
            "role_budgets": {"high_attraction": b_high, "bridge": b_bridge},
            "shortfall": shortfall,
            "communities": communities.count if communities is not None else 0,
            "timings": timings,
        },
    )
    try:
        plan.validate(train)
    except BudgetViolation as exc:
        raise RuntimeError(f"internal error: HIA produced an invalid plan: {exc}") from exc
    return plan, apply_perturbation(train, plan)
