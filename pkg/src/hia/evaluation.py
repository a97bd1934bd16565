"""Victim training, link-prediction ranking metrics, degradation aggregation and stealth reports."""

from __future__ import annotations

import csv
import io
import json
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .graph_metrics import StealthReport, stealth_metrics
from .plan import PerturbationPlan
from .rng import derive_seed, stream
from .surrogate import SurrogateConfig, SurrogateModel, heldout_auc, train_surrogate
from .temporal_graph import TemporalGraph, apply_perturbation

VICTIM_DEFAULTS = {"embedding_dim": 32, "epochs": 15}
STREAM_BATCH = 200


class EvaluationError(ValueError):
    pass


def victim_config(seed: int, **overrides) -> SurrogateConfig:
    """Victim settings: surrogate architecture, smaller memory, more epochs, its own seed stream."""
    base = {**VICTIM_DEFAULTS, **overrides}
    base["seed"] = derive_seed(seed, "victim")
    return SurrogateConfig.from_dict(base)


def train_victim(train: TemporalGraph, seed: int, config: SurrogateConfig | None = None) -> SurrogateModel:
    if len(train) == 0:
        raise EvaluationError("cannot train a victim on an empty graph")
    cfg = config or victim_config(seed)
    if cfg.batch_size > len(train):
        cfg = SurrogateConfig.from_dict({**cfg.to_dict(), "batch_size": len(train)})
    model, _ = train_surrogate(train, cfg)
    return model


@dataclass(frozen=True)
class RankingCase:
    u: int
    v: int
    t: float
    negatives: tuple[int, ...]
    rank: int


def pessimistic_rank(pos_score: float, neg_scores) -> int:
    """1 + number of negatives scoring at least as high as the positive."""
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    return 1 + int(np.count_nonzero(neg_scores >= pos_score))


def metrics_from_ranks(ranks) -> tuple[float, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise EvaluationError("no ranking cases")
    return float(np.mean(1.0 / ranks)), float(np.mean(ranks <= 10))


def _draw_negatives(rng, pool: np.ndarray, dst: np.ndarray, k: int) -> np.ndarray:
    neg = np.empty((len(dst), k), dtype=np.int64)
    vpos = np.searchsorted(pool, dst)
    for i in range(len(dst)):
        draw = rng.choice(len(pool) - 1, size=k, replace=False)
        draw[draw >= vpos[i]] += 1
        neg[i] = pool[draw]
    return neg


def evaluate_ranking(
    model: SurrogateModel,
    test: TemporalGraph,
    negatives: int = 100,
    seed: int = 0,
    context: TemporalGraph | None = None,
    streaming: bool = True,
    batch_size: int = STREAM_BATCH,
) -> tuple[float, float, list[RankingCase]]:
    """Rank each test destination against ``negatives`` corrupted destinations at the event time.

    Negatives are drawn without replacement from the known node population
    (model nodes plus test nodes) minus the true destination. Ties count
    against the positive. With ``streaming`` on, ``context`` events (e.g.
    the validation split) are absorbed into memory first, then each test
    batch is scored before it is absorbed, so predictions never see their
    own batch.
    """
    if len(test) == 0:
        raise EvaluationError("empty test graph")
    pool = np.union1d(model.nodes, test.nodes)
    if len(pool) - 1 < negatives:
        raise EvaluationError(f"node population {len(pool)} too small for {negatives} negatives")
    neg = _draw_negatives(stream(seed, "ranking-negatives"), pool, test.dst, negatives)
    cand = np.concatenate([test.dst[:, None], neg], axis=1)
    uu = np.broadcast_to(test.src[:, None], cand.shape)
    tt = np.broadcast_to(test.t[:, None], cand.shape)
    if not streaming:
        scores = model.edge_logits(uu, cand, tt)
    else:
        if context is not None:
            for a in range(0, len(context), batch_size):
                sl = slice(a, a + batch_size)
                model = model.observe(context.src[sl], context.dst[sl], context.t[sl])
        scores = np.empty(cand.shape)
        for a in range(0, len(test), batch_size):
            sl = slice(a, a + batch_size)
            scores[sl] = model.edge_logits(uu[sl], cand[sl], tt[sl])
            model = model.observe(test.src[sl], test.dst[sl], test.t[sl])
    ranks = 1 + np.count_nonzero(scores[:, 1:] >= scores[:, :1], axis=1)
    cases = [
        RankingCase(int(u), int(v), float(t), tuple(row), int(r))
        for u, v, t, row, r in zip(test.src.tolist(), test.dst.tolist(), test.t.tolist(), neg.tolist(), ranks.tolist())
    ]
    mrr, hit10 = metrics_from_ranks(ranks)
    return mrr, hit10, cases


@dataclass
class EvalReport:
    condition: str
    mrr: float
    hit10: float
    per_seed_mrr: list[float] = field(default_factory=list)
    per_seed_hit10: list[float] = field(default_factory=list)
    stealth: StealthReport | None = None
    attack_wall_time: float = 0.0
    dataset: str = "default"
    auc: float | None = None

    @classmethod
    def from_seeds(cls, condition: str, mrrs: Sequence[float], hits: Sequence[float], **kw) -> "EvalReport":
        return cls(condition, float(np.mean(mrrs)), float(np.mean(hits)), list(map(float, mrrs)), list(map(float, hits)), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stealth"] = self.stealth.to_dict() if self.stealth is not None else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        if d.get("stealth") is not None:
            d["stealth"] = StealthReport(**d["stealth"])
        return cls(**d)


def evaluate_condition(
    condition: str,
    train: TemporalGraph,
    test: TemporalGraph,
    seeds: Sequence[int],
    negatives: int = 100,
    config_overrides: dict | None = None,
    heldout: TemporalGraph | None = None,
    dataset: str = "default",
    streaming: bool = True,
) -> EvalReport:
    """Train one victim per seed on ``train`` and average its test ranking metrics.

    ``heldout`` (normally the validation split) is streamed into memory
    before the test split and also used for the held-out AUC.
    """
    mrrs, hits, aucs = [], [], []
    for seed in seeds:
        model = train_victim(train, seed, victim_config(seed, **(config_overrides or {})))
        mrr, hit, _ = evaluate_ranking(
            model, test, negatives, seed=derive_seed(seed, "eval"), context=heldout, streaming=streaming
        )
        mrrs.append(mrr)
        hits.append(hit)
        if heldout is not None:
            aucs.append(heldout_auc(model, heldout, derive_seed(seed, "auc")))
    auc = float(np.mean(aucs)) if aucs else None
    return EvalReport.from_seeds(condition, mrrs, hits, dataset=dataset, auc=auc)


def average_performance_degradation(
    clean: EvalReport | dict[str, EvalReport], attacked: Sequence[EvalReport]
) -> dict[str, float]:
    """Per attack, mean over datasets of (attacked - clean) / clean * 100; negative means degradation."""
    if isinstance(clean, EvalReport):
        clean = {clean.dataset: clean}
    cells: dict[str, list[float]] = defaultdict(list)
    for rep in attacked:
        if rep.dataset not in clean:
            raise EvaluationError(f"no clean report for dataset {rep.dataset!r}")
        base = clean[rep.dataset].mrr
        if base == 0:
            raise EvaluationError(f"clean MRR is zero for dataset {rep.dataset!r}")
        cells[rep.condition].append((rep.mrr - base) / base * 100.0)
    return {name: float(np.mean(v)) for name, v in cells.items()}


def stealth_report(clean: TemporalGraph, plan: PerturbationPlan, perturbed: TemporalGraph) -> StealthReport:
    if apply_perturbation(clean, plan) != perturbed:
        raise EvaluationError("perturbed graph does not match the plan applied to the clean graph")
    return stealth_metrics(clean, plan, perturbed)


def _table_rows(clean: dict[str, EvalReport], attacked: Sequence[EvalReport]) -> tuple[list[str], list[list[str]]]:
    attacks = list(dict.fromkeys(r.condition for r in attacked))
    by = {(r.dataset, r.condition): r for r in attacked}
    header = ["dataset", "clean"] + attacks
    rows = []
    for ds, rep in clean.items():
        row = [ds, f"{100 * rep.mrr:.2f}"]
        for a in attacks:
            r = by.get((ds, a))
            row.append(f"{100 * r.mrr:.2f}" if r is not None else "")
        rows.append(row)
    apd = average_performance_degradation(clean, attacked)
    rows.append(["A.P.D. (%)", ""] + [f"{apd[a]:.2f}" for a in attacks])
    return header, rows


def comparison_table(clean: EvalReport | dict[str, EvalReport], attacked: Sequence[EvalReport], fmt: str = "markdown") -> str:
    """MRR (x100) per dataset under each attack, plus an A.P.D. row."""
    if isinstance(clean, EvalReport):
        clean = {clean.dataset: clean}
    header, rows = _table_rows(clean, attacked)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown table format {fmt!r}")
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
