"""Perturbation plans: the edge deletions and injections an attack proposes, with provenance."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .temporal_graph import TemporalGraph, _fmt_time


class BudgetViolation(AssertionError):
    """A plan broke the |E_A| + |E_D| <= budget contract or a disjointness invariant."""


def _rows(arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    return arr.reshape(-1, 3)


@dataclass
class PerturbationPlan:
    """Deletions and injections as ``(n, 3)`` arrays of ``src, dst, t`` plus per-edge provenance.

    Provenance lists align with the rows: each entry records the rule that
    fired, the surrogate score (``None`` for surrogate-free baselines) and
    the anchor node.
    """

    method: str
    budget: int
    deletions: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    injections: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    deletion_provenance: list[dict] = field(default_factory=list)
    injection_provenance: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.deletions = _rows(self.deletions)
        self.injections = _rows(self.injections)

    @property
    def size(self) -> int:
        return len(self.deletions) + len(self.injections)

    def validate(self, g: TemporalGraph) -> None:
        """Raise :class:`BudgetViolation` unless every plan invariant holds against ``g``."""
        if self.size > self.budget:
            raise BudgetViolation(f"{self.method}: {self.size} perturbations exceed budget {self.budget}")
        dels = {(int(s), int(d), float(t)) for s, d, t in self.deletions.tolist()}
        adds = {(int(s), int(d), float(t)) for s, d, t in self.injections.tolist()}
        if len(dels) != len(self.deletions) or len(adds) != len(self.injections):
            raise BudgetViolation(f"{self.method}: repeated events in plan")
        if dels & adds:
            raise BudgetViolation(f"{self.method}: injections overlap deletions")
        for key in dels:
            if not g.contains(*key):
                raise BudgetViolation(f"{self.method}: deletion {key} not in graph")
        for key in adds:
            if g.contains(*key):
                raise BudgetViolation(f"{self.method}: injection {key} already in graph")
            if key[0] == key[1]:
                raise BudgetViolation(f"{self.method}: injection {key} is a self-loop")

    def inverse(self) -> "PerturbationPlan":
        return PerturbationPlan(
            self.method + "^-1", self.budget, self.injections.copy(), self.deletions.copy(),
            list(self.injection_provenance), list(self.deletion_provenance), dict(self.meta),
        )

    def to_dict(self) -> dict:
        def events(arr, prov):
            out = []
            for i, (s, d, t) in enumerate(arr.tolist()):
                row = {"src": int(s), "dst": int(d), "t": t}
                if i < len(prov):
                    row.update(prov[i])
                out.append(row)
            return out

        return {
            "method": self.method,
            "budget": self.budget,
            "n_deleted": len(self.deletions),
            "n_injected": len(self.injections),
            "deletions": events(self.deletions, self.deletion_provenance),
            "injections": events(self.injections, self.injection_provenance),
            "meta": self.meta,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationPlan":
        def split(rows):
            arr = np.array([[r["src"], r["dst"], r["t"]] for r in rows], dtype=np.float64).reshape(-1, 3)
            prov = [{k: v for k, v in r.items() if k not in ("src", "dst", "t")} for r in rows]
            return arr, prov

        dels, dprov = split(d["deletions"])
        adds, aprov = split(d["injections"])
        return cls(d["method"], int(d["budget"]), dels, adds, dprov, aprov, d.get("meta", {}))

    @classmethod
    def load(cls, path: str | Path) -> "PerturbationPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(indent=1))

    def digest(self) -> str:
        """sha256 of the canonical JSON, ignoring wall-clock timings in ``meta``."""
        d = self.to_dict()
        d["meta"] = {k: v for k, v in d["meta"].items() if k != "timings"}
        return hashlib.sha256(json.dumps(_jsonable(d), sort_keys=True).encode()).hexdigest()

    def write_csvs(self, injections_path: str | Path, deletions_path: str | Path) -> None:
        for path, arr, prov in (
            (injections_path, self.injections, self.injection_provenance),
            (deletions_path, self.deletions, self.deletion_provenance),
        ):
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["src", "dst", "timestamp", "rule", "score", "anchor"])
                for i, (s, d, t) in enumerate(arr.tolist()):
                    p = prov[i] if i < len(prov) else {}
                    w.writerow([int(s), int(d), _fmt_time(t), p.get("rule", ""), p.get("score", ""), p.get("anchor", "")])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_perturbed_csv(path: str | Path, perturbed: TemporalGraph, plan: PerturbationPlan) -> None:
    """Perturbed edge list with an ``origin`` column (``original`` or ``injected``)."""
    injected = {(int(s), int(d), float(t)) for s, d, t in plan.injections.tolist()}
    origin = [
        "injected" if key in injected else "original"
        for key in zip(perturbed.src.tolist(), perturbed.dst.tolist(), perturbed.t.tolist())
    ]
    perturbed.to_csv(path, origin=origin)
