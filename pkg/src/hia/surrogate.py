"""Lightweight temporal link-likelihood model with decayed node memory.

Every node carries a memory vector and the time it was last touched. A
memory read at time ``t`` is scaled by ``exp(-lambda * (t - last_update))``.
Edge likelihood is a sigmoid over an affine map of the symmetric pair
features ``[h_u * h_v, |h_u - h_v|]``; node importance is an affine map of
``|h_v|``. Training replays the event stream chronologically in batches,
mixing partner memories and taking BCE gradient steps.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from .rng import stream
from .temporal_graph import TemporalGraph

CHECKPOINT_MAGIC = b"HIAMODL1"


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch, self.batch, self.loss = epoch, batch, loss
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


class NegativeSamplingError(ValueError):
    pass


@dataclass
class SurrogateConfig:
    embedding_dim: int = 64
    learning_rate: float = 1e-2
    batch_size: int = 600
    epochs: int = 10
    negatives_per_positive: int = 1
    # 0 keeps memories undecayed; None derives ln 2 / median per-node gap from the data
    time_decay: float | None = 0.0
    seed: int = 0
    dropout_rate: float = 0.1
    mixing_rate: float = 0.1

    def __post_init__(self):
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.time_decay is not None and self.time_decay < 0:
            raise ValueError("time_decay must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class TrainReport:
    epoch_loss: list[float]
    auc: float | None
    wall_time: float
    time_decay: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def default_time_decay(g: TemporalGraph) -> float:
    """ln 2 over the median gap between a node's consecutive events."""
    if len(g) < 2:
        return 0.0
    ends = np.concatenate([g.node_position(g.src), g.node_position(g.dst)])
    times = np.concatenate([g.t, g.t])
    order = np.lexsort((times, ends))
    ends, times = ends[order], times[order]
    same = ends[1:] == ends[:-1]
    gaps = np.diff(times)[same]
    gaps = gaps[gaps > 0]
    if len(gaps) == 0:
        return 0.0
    return math.log(2.0) / float(np.median(gaps))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


def pair_features(h_u: np.ndarray, h_v: np.ndarray) -> np.ndarray:
    return np.concatenate([h_u * h_v, np.abs(h_u - h_v)], axis=-1)


def bce_loss(
    w_prod: np.ndarray,
    w_abs: np.ndarray,
    bias: float,
    h_u: np.ndarray,
    h_v: np.ndarray,
    h_neg: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed BCE over positives ``(h_u[i], h_v[i])`` and negatives ``(h_u[i], h_neg[i, j])``.

    Returns the loss and its gradient with respect to the scorer parameters
    (``w_prod``, ``w_abs``, ``bias``) and the positive-pair embeddings
    (``h_u``, ``h_v``).
    """
    hu_n = h_u[:, None, :]
    dp = h_u - h_v
    dn = hu_n - h_neg
    z_pos = (h_u * h_v) @ w_prod + np.abs(dp) @ w_abs + bias
    z_neg = (hu_n * h_neg) @ w_prod + np.abs(dn) @ w_abs + bias
    loss = float(_softplus(-z_pos).sum() + _softplus(z_neg).sum())
    g_pos = _sigmoid(z_pos) - 1.0
    g_neg = _sigmoid(z_neg)
    grads = {
        "w_prod": g_pos @ (h_u * h_v) + np.einsum("bk,bkd->d", g_neg, hu_n * h_neg),
        "w_abs": g_pos @ np.abs(dp) + np.einsum("bk,bkd->d", g_neg, np.abs(dn)),
        "bias": np.array(g_pos.sum() + g_neg.sum()),
        "h_u": g_pos[:, None] * (w_prod * h_v + w_abs * np.sign(dp))
        + np.einsum("bk,bkd->bd", g_neg, w_prod * h_neg + w_abs * np.sign(dn)),
        "h_v": g_pos[:, None] * (w_prod * h_u - w_abs * np.sign(dp)),
    }
    return loss, grads


class SurrogateModel:
    """Trained memory table plus scorer and importance heads. Treat as immutable."""

    def __init__(
        self,
        nodes: np.ndarray,
        memory: np.ndarray,
        last_update: np.ndarray,
        w_prod: np.ndarray,
        w_abs: np.ndarray,
        bias: float,
        imp_w: np.ndarray,
        imp_b: float,
        time_decay: float,
        config: SurrogateConfig,
    ):
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.memory = np.asarray(memory, dtype=np.float64)
        self.last_update = np.asarray(last_update, dtype=np.float64)
        self.w_prod = np.asarray(w_prod, dtype=np.float64)
        self.w_abs = np.asarray(w_abs, dtype=np.float64)
        self.bias = float(bias)
        self.imp_w = np.asarray(imp_w, dtype=np.float64)
        self.imp_b = float(imp_b)
        self.time_decay = float(time_decay)
        self.config = config

    @property
    def dim(self) -> int:
        return self.memory.shape[1]

    def _lookup(self, ids) -> tuple[np.ndarray, np.ndarray]:
        ids = np.asarray(ids, dtype=np.int64)
        if len(self.nodes) == 0:
            return np.zeros(ids.shape, np.int64), np.zeros(ids.shape, bool)
        pos = np.minimum(np.searchsorted(self.nodes, ids), len(self.nodes) - 1)
        return pos, self.nodes[pos] == ids

    def embed(self, ids, t) -> np.ndarray:
        """Decayed memories ``h_v(t)``; unseen nodes read as zero vectors."""
        ids = np.asarray(ids, dtype=np.int64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), ids.shape)
        pos, seen = self._lookup(ids)
        out = self.memory[pos] * _decay(self.time_decay, t, self.last_update[pos])[..., None]
        out[~seen] = 0.0
        return out

    def edge_logits(self, u, v, t) -> np.ndarray:
        u, v = np.asarray(u, np.int64), np.asarray(v, np.int64)
        t = np.broadcast_to(np.asarray(t, np.float64), np.broadcast_shapes(u.shape, v.shape))
        hu, hv = self.embed(np.broadcast_to(u, t.shape), t), self.embed(np.broadcast_to(v, t.shape), t)
        return (hu * hv) @ self.w_prod + np.abs(hu - hv) @ self.w_abs + self.bias

    def edge_likelihoods(self, u, v, t) -> np.ndarray:
        return _sigmoid(self.edge_logits(u, v, t))

    def edge_likelihood(self, u: int, v: int, t: float) -> float:
        return float(self.edge_likelihoods(np.array([u]), np.array([v]), np.array([t]))[0])

    def node_importances(self, ids, t) -> np.ndarray:
        return np.abs(self.embed(ids, t)) @ self.imp_w + self.imp_b

    def node_importance(self, v: int, t: float) -> float:
        return float(self.node_importances(np.array([v]), np.array([t]))[0])

    def observe(self, src, dst, t) -> "SurrogateModel":
        """A copy whose memory has absorbed one batch of observed events (label-free mixing only).

        Reads happen at batch start and the last occurrence of a node wins,
        as in training. Events touching unknown nodes are ignored.
        """
        src, dst = np.asarray(src, np.int64), np.asarray(dst, np.int64)
        t = np.asarray(t, np.float64)
        ps, ks = self._lookup(src)
        po, ko = self._lookup(dst)
        ok = ks & ko
        ps, po, t = ps[ok], po[ok], t[ok]
        memory, last = self.memory.copy(), self.last_update.copy()
        if len(t):
            eta = self.config.mixing_rate
            hs = memory[ps] * _decay(self.time_decay, t, last[ps])[:, None]
            ho = memory[po] * _decay(self.time_decay, t, last[po])[:, None]
            who = np.column_stack([ps, po]).ravel()
            vals = np.stack([(1 - eta) * hs + eta * ho, (1 - eta) * ho + eta * hs], axis=1).reshape(-1, self.dim)
            when = np.repeat(t, 2)
            keep = _last_occurrence(who)
            memory[who[keep]] = vals[keep]
            last[who[keep]] = when[keep]
        return SurrogateModel(
            self.nodes, memory, last, self.w_prod, self.w_abs, self.bias,
            self.imp_w, self.imp_b, self.time_decay, self.config,
        )

    # -- checkpoints -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        header = json.dumps(
            {
                "version": 1,
                "config": self.config.to_dict(),
                "n": int(len(self.nodes)),
                "dim": int(self.dim),
                "bias": self.bias,
                "imp_b": self.imp_b,
                "time_decay": self.time_decay,
            },
            sort_keys=True,
        ).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for arr, dtype in (
                (self.nodes, "<i8"),
                (self.memory, "<f8"),
                (self.last_update, "<f8"),
                (self.w_prod, "<f8"),
                (self.w_abs, "<f8"),
                (self.imp_w, "<f8"),
            ):
                fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateModel":
        with open(path, "rb") as fh:
            if fh.read(8) != CHECKPOINT_MAGIC:
                raise ValueError(f"{path} is not a model checkpoint")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen))
            n, d = header["n"], header["dim"]

            def take(count, dtype):
                return np.frombuffer(fh.read(count * 8), dtype=dtype).copy()

            nodes = take(n, "<i8")
            memory = take(n * d, "<f8").reshape(n, d)
            last = take(n, "<f8")
            w_prod, w_abs, imp_w = take(d, "<f8"), take(d, "<f8"), take(d, "<f8")
        return cls(
            nodes, memory, last, w_prod, w_abs, header["bias"], imp_w, header["imp_b"],
            header["time_decay"], SurrogateConfig.from_dict(header["config"]),
        )


def _decay(lam: float, t, last) -> np.ndarray:
    if lam == 0:
        return np.ones(np.broadcast_shapes(np.shape(t), np.shape(last)))
    dt = np.maximum(np.asarray(t) - np.asarray(last), 0.0)
    with np.errstate(invalid="ignore"):
        out = np.exp(-lam * dt)
    return np.where(np.isfinite(last), out, 0.0)


def edge_likelihood(model: SurrogateModel, u: int, v: int, t: float) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    return model.edge_likelihood(u, v, t)


def node_importance(model: SurrogateModel, v: int, t: float) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    return model.node_importance(v, t)


# -- negatives -------------------------------------------------------------


def sample_negatives(g: TemporalGraph, u: int, t: float, k: int, seed: int) -> np.ndarray:
    """``k`` distinct nodes that have no event with ``u`` at or before ``t``."""
    if g.num_nodes <= k:
        raise NegativeSamplingError(f"graph has {g.num_nodes} nodes, need more than {k}")
    pos = g.incidence(u) if g.has_node(u) else np.empty(0, np.int64)
    upto = pos[g.t[pos] <= t]
    banned = np.union1d(g.partners(u, upto), [u]) if g.has_node(u) else np.array([u])
    eligible = np.setdiff1d(g.nodes, banned, assume_unique=False)
    if len(eligible) < k:
        raise NegativeSamplingError(f"only {len(eligible)} eligible negatives for node {u}, need {k}")
    rng = np.random.default_rng(seed)
    return rng.choice(eligible, size=k, replace=False)


class _PairHistory:
    """First interaction time of every undirected pair, for vectorised negative checks."""

    def __init__(self, g: TemporalGraph):
        n = g.num_nodes
        s, d = g.node_position(g.src), g.node_position(g.dst)
        keys = np.minimum(s, d) * n + np.maximum(s, d)
        uniq, first = np.unique(keys, return_index=True)
        self.n = n
        self.keys = uniq
        self.first_t = g.t[first]

    def interacted(self, a: np.ndarray, b: np.ndarray, t: np.ndarray) -> np.ndarray:
        keys = np.minimum(a, b) * self.n + np.maximum(a, b)
        idx = np.minimum(np.searchsorted(self.keys, keys), len(self.keys) - 1)
        return (self.keys[idx] == keys) & (self.first_t[idx] <= t)


def _batch_negatives(rng, history: _PairHistory, u: np.ndarray, t: np.ndarray, k: int, n: int) -> np.ndarray:
    """Uniform negatives by rejection; a few stubborn slots may stay as past partners of dense nodes."""
    neg = rng.integers(0, n, size=(len(u), k))
    uu, tt = np.repeat(u[:, None], k, 1), np.repeat(t[:, None], k, 1)
    for _ in range(8):
        bad = (neg == uu) | history.interacted(uu, neg, tt)
        if not bad.any():
            break
        neg[bad] = rng.integers(0, n, size=int(bad.sum()))
    return neg


# -- thresholds ------------------------------------------------------------


def percentile_threshold(scores, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (1-based, clamped)."""
    arr = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    if arr.size == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0 <= p <= 100:
        raise ValueError(f"percentile must lie in [0, 100], got {p}")
    rank = min(max(math.ceil(p / 100.0 * arr.size), 1), arr.size)
    return float(arr[rank - 1])


# -- training --------------------------------------------------------------


class _Adam:
    def __init__(self, size: int, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.k = 0
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.k += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.k)
        vhat = self.v / (1 - self.b2**self.k)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _last_occurrence(idx: np.ndarray) -> np.ndarray:
    """Positions of the last occurrence of each distinct value in ``idx``."""
    rev = idx[::-1]
    _, first_rev = np.unique(rev, return_index=True)
    return len(idx) - 1 - first_rev


def _replay(
    g: TemporalGraph,
    params: np.ndarray,
    memory: np.ndarray,
    last: np.ndarray,
    cfg: SurrogateConfig,
    lam: float,
    rng_neg,
    rng_drop,
    history: _PairHistory,
    opt: _Adam | None,
    epoch: int,
) -> float:
    """One chronological pass; updates ``memory``/``last`` in place and ``params`` when ``opt`` is given."""
    d = memory.shape[1]
    n = memory.shape[0]
    eta = cfg.mixing_rate
    src = g.node_position(g.src)
    dst = g.node_position(g.dst)
    total, count = 0.0, 0
    for b, start in enumerate(range(0, len(g), cfg.batch_size)):
        sl = slice(start, start + cfg.batch_size)
        s, o, t = src[sl], dst[sl], g.t[sl]
        hs = memory[s] * _decay(lam, t, last[s])[:, None]
        ho = memory[o] * _decay(lam, t, last[o])[:, None]
        neg = _batch_negatives(rng_neg, history, s, t, cfg.negatives_per_positive, n)
        hn = memory[neg] * _decay(lam, t[:, None], last[neg])[..., None]
        w_prod, w_abs, bias = params[:d], params[d : 2 * d], params[2 * d]
        loss, grads = bce_loss(w_prod, w_abs, bias, hs, ho, hn)
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch, b, loss)
        total += loss
        count += len(t)
        if opt is not None:
            grad = np.concatenate([grads["w_prod"], grads["w_abs"], np.atleast_1d(grads["bias"])]) / len(t)
            opt.step(params, grad)

        new_s = (1 - eta) * hs + eta * ho - cfg.learning_rate * grads["h_u"]
        new_o = (1 - eta) * ho + eta * hs - cfg.learning_rate * grads["h_v"]
        old = np.concatenate([hs, ho])
        upd = np.concatenate([new_s, new_o]) - old
        if cfg.dropout_rate > 0:
            upd *= rng_drop.random(upd.shape) >= cfg.dropout_rate
        # interleave so that the later event wins for nodes touched twice in a batch
        who = np.column_stack([s, o]).ravel()
        vals = (old + upd).reshape(2, len(t), d).transpose(1, 0, 2).reshape(-1, d)
        when = np.repeat(t, 2)
        keep = _last_occurrence(who)
        memory[who[keep]] = vals[keep]
        last[who[keep]] = when[keep]
    return total / max(count, 1)


def _initial_memory(g: TemporalGraph, cfg: SurrogateConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = stream(cfg.seed, "surrogate-init")
    memory = rng.uniform(-0.1, 0.1, size=(g.num_nodes, cfg.embedding_dim))
    first, _ = g.activity_intervals()
    return memory, first.copy()


def _fit_importance(model: SurrogateModel, g: TemporalGraph) -> None:
    """Fit the importance head to each node's recent activity (non-negative least squares)."""
    t_end = g.t_max
    window = max((g.t_max - g.t_min) * 0.1, 1e-12)
    recent = g.window(t_end - window, t_end)
    counts = np.zeros(g.num_nodes)
    if len(recent):
        ends = np.concatenate([g.node_position(recent.src), g.node_position(recent.dst)])
        counts = np.bincount(ends, minlength=g.num_nodes).astype(np.float64)
    feats = np.abs(model.embed(g.nodes, np.full(g.num_nodes, t_end)))
    design = np.column_stack([feats, np.ones(g.num_nodes)])
    coef, _ = nnls(design, np.log1p(counts))
    model.imp_w = coef[:-1]
    model.imp_b = float(coef[-1])


def rank_auc(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    from scipy.stats import rankdata

    pos_scores, neg_scores = np.asarray(pos_scores), np.asarray(neg_scores)
    ranks = rankdata(np.concatenate([pos_scores, neg_scores]))
    n_p, n_n = len(pos_scores), len(neg_scores)
    return float((ranks[:n_p].sum() - n_p * (n_p + 1) / 2) / (n_p * n_n))


def heldout_auc(model: SurrogateModel, heldout: TemporalGraph, seed: int) -> float:
    rng = stream(seed, "heldout-auc")
    pool = np.union1d(model.nodes, heldout.nodes)
    neg = pool[rng.integers(0, len(pool), size=len(heldout))]
    clash = neg == heldout.dst
    neg[clash] = pool[(np.searchsorted(pool, neg[clash]) + 1) % len(pool)]
    pos_s = model.edge_likelihoods(heldout.src, heldout.dst, heldout.t)
    neg_s = model.edge_likelihoods(heldout.src, neg, heldout.t)
    return rank_auc(pos_s, neg_s)


def train_surrogate(
    train: TemporalGraph,
    config: SurrogateConfig | None = None,
    heldout: TemporalGraph | None = None,
) -> tuple[SurrogateModel, TrainReport]:
    """Train on ``train`` by chronological batched replay; memory restarts from its seeded init every epoch."""
    cfg = config or SurrogateConfig()
    if len(train) < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} events, got {len(train)}")
    t0 = time.perf_counter()
    lam = default_time_decay(train) if cfg.time_decay is None else cfg.time_decay
    d = cfg.embedding_dim
    params = np.zeros(2 * d + 1)
    opt = _Adam(len(params), cfg.learning_rate)
    history = _PairHistory(train)
    mem0, last0 = _initial_memory(train, cfg)
    losses = []
    memory, last = mem0, last0
    for epoch in range(cfg.epochs):
        memory, last = mem0.copy(), last0.copy()
        loss = _replay(
            train, params, memory, last, cfg, lam,
            stream(cfg.seed, "negatives", epoch), stream(cfg.seed, "dropout", epoch),
            history, opt, epoch,
        )
        losses.append(loss)
    model = SurrogateModel(
        train.nodes.copy(), memory, last, params[:d].copy(), params[d : 2 * d].copy(), params[2 * d],
        np.full(d, 1.0 / d), 0.0, lam, cfg,
    )
    _fit_importance(model, train)
    auc = heldout_auc(model, heldout, cfg.seed) if heldout is not None and len(heldout) else None
    return model, TrainReport(losses, auc, time.perf_counter() - t0, lam)
