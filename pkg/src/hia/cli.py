"""Command-line entry point: ingest datasets, run attacks, evaluate victims, replay runs."""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .archive import ArchiveError, file_digest, load_archive, read_header, save_archive
from .attack import AttackConfig, run_hia
from .baselines import BaselineKind, random_attack, run_baseline
from .evaluation import (
    EvalReport,
    average_performance_degradation,
    comparison_table,
    evaluate_condition,
    stealth_report,
)
from .plan import PerturbationPlan
from .surrogate import SurrogateConfig, SurrogateModel, train_surrogate
from .rng import derive_seed
from .temporal_graph import apply_perturbation, chronological_split, read_events_csv

DATA_DIR_ENV = "HIA_DATA_DIR"
ATTACKS = ("hia",) + tuple(k.value for k in BaselineKind)


class UsageError(Exception):
    """A problem with the invocation or its inputs rather than with the tool."""


@dataclass
class RunManifest:
    command: str
    params: dict
    inputs: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    stage_seconds: dict = field(default_factory=dict)
    tool_version: str = __version__
    python: str = platform.python_version()
    numpy: str = np.__version__

    def add_artifact(self, name: str, path: Path) -> None:
        self.artifacts[name] = {"path": path.name, "sha256": file_digest(path)}

    def digests(self) -> dict[str, str]:
        return {k: v["sha256"] for k, v in self.artifacts.items()}

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


# -- helpers -------------------------------------------------------------------


def resolve_input(path: str) -> Path:
    """``path`` as given, else relative to the data directory from the environment."""
    p = Path(path)
    if p.exists():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    if base and not p.is_absolute() and (Path(base) / p).exists():
        return Path(base) / p
    raise UsageError(f"no such file: {path}" + (f" (also looked in {base})" if base else ""))


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = resolve_input(path)
    text = p.read_text()
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    if p.suffix == ".json":
        return json.loads(text)
    raise UsageError(f"config file must be .json or .toml, got {p.name}")


def prepare_out_dir(out: str, force: bool, names: list[str]) -> Path:
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    clash = [n for n in names if (d / n).exists()]
    if clash and not force:
        raise UsageError(f"refusing to overwrite {', '.join(clash)} in {d}; pass --force")
    return d


@contextlib.contextmanager
def run_lock(directory: Path):
    """Exclusive lock file so two processes never write the same run directory."""
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{directory} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class _Stages:
    def __init__(self):
        self.seconds: dict[str, float] = {}

    @contextlib.contextmanager
    def __call__(self, name: str):
        t0 = time.perf_counter()
        yield
        self.seconds[name] = round(time.perf_counter() - t0, 4)


def _segments(path: str) -> dict:
    segs, _ = load_archive(resolve_input(path))
    missing = [k for k in ("train", "val", "test") if k not in segs]
    if missing:
        raise ArchiveError(f"{path}: archive lacks segments {missing}")
    return segs


# -- commands ------------------------------------------------------------------


def cmd_ingest(path: str, fmt: str, out: str, force: bool = False) -> RunManifest:
    src = resolve_input(path)
    out_dir = prepare_out_dir(out, force, ["graph.hiag", "stats.json", "manifest.json"])
    stages = _Stages()
    with run_lock(out_dir):
        with stages("parse"):
            g = read_events_csv(src, fmt)
        with stages("split"):
            split = chronological_split(g)
        segments = {"train": split.train, "val": split.val, "test": split.test}
        with stages("write"):
            save_archive(out_dir / "graph.hiag", segments, {"format": fmt, "source": src.name})
        stats = {
            "nodes": g.num_nodes,
            "events": len(g),
            "t_min": g.t_min,
            "t_max": g.t_max,
            "split": {k: len(v) for k, v in segments.items()},
            "split_boundaries": list(split.boundaries),
            "ingest": g.report.to_dict(),
        }
        (out_dir / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True))
        m = RunManifest("ingest", {"path": str(path), "format": fmt}, inputs={"dataset": file_digest(src)})
        m.add_artifact("graph", out_dir / "graph.hiag")
        m.add_artifact("stats", out_dir / "stats.json")
        m.stage_seconds = stages.seconds
        m.save(out_dir / "manifest.json")
    return m


def attack_config_from(params: dict) -> AttackConfig:
    mode = "hybrid"
    if params.get("injection_only"):
        mode = "injection_only"
    if params.get("deletion_only"):
        mode = "deletion_only"
    known = {k: v for k, v in params.items() if k in AttackConfig.__dataclass_fields__ and v is not None}
    known.setdefault("mode", mode)
    if params.get("no_community"):
        known["use_community"] = False
    if isinstance(known.get("surrogate"), dict):
        known["surrogate"] = SurrogateConfig.from_dict(known["surrogate"])
    return AttackConfig.from_dict(known) if "weights" in known else AttackConfig(**known)


def attack_label(attack: str, cfg: AttackConfig) -> str:
    if attack != "hia":
        return attack
    label = "hia"
    if cfg.mode != "hybrid":
        label += "-" + cfg.mode.replace("_", "-")
    if not cfg.use_community:
        label += "-no-community"
    return label


def cmd_attack(archive: str, attack: str, out: str, params: dict, force: bool = False, checkpoint: str | None = None) -> RunManifest:
    """Plan and apply one attack against the train segment of ``archive``."""
    if attack not in ATTACKS:
        raise UsageError(f"unknown attack {attack!r}; choose from {ATTACKS}")
    if params.get("injection_only") and params.get("deletion_only"):
        raise UsageError("--injection-only and --deletion-only are mutually exclusive")
    arch_path = resolve_input(archive)
    names = ["plan.json", "injections.csv", "deletions.csv", "perturbed.hiag", "manifest.json"]
    out_dir = prepare_out_dir(out, force, names)
    segs = _segments(archive)
    train = segs["train"]
    cfg = attack_config_from(params)
    stages = _Stages()
    with run_lock(out_dir):
        model = None
        if attack == "hia" and cfg.delta > 0:
            with stages("surrogate"):
                if checkpoint:
                    model = SurrogateModel.load(resolve_input(checkpoint))
                else:
                    scfg = SurrogateConfig.from_dict(cfg.surrogate.to_dict())
                    scfg.seed = derive_seed(cfg.seed, "surrogate")
                    scfg.batch_size = min(scfg.batch_size, len(train))
                    model, _ = train_surrogate(train, scfg)
                    model.save(out_dir / "surrogate.ckpt")
        with stages("plan"):
            if attack == "hia":
                plan, perturbed = run_hia(train, cfg, model=model)
                plan.meta.pop("timings", None)
            else:
                if attack == "random" and cfg.mode != "hybrid":
                    plan = random_attack(train, cfg.delta, cfg.seed, mode=cfg.mode)
                else:
                    plan = run_baseline(attack, train, cfg.delta, cfg.seed)
                perturbed = apply_perturbation(train, plan)
        label = attack_label(attack, cfg)
        plan.meta["label"] = label
        with stages("write"):
            plan.save(out_dir / "plan.json")
            plan.write_csvs(out_dir / "injections.csv", out_dir / "deletions.csv")
            save_archive(
                out_dir / "perturbed.hiag",
                {"train": perturbed, "val": segs["val"], "test": segs["test"]},
                {"label": label, "source_sha256": read_header(arch_path)["sha256"]},
            )
        m = RunManifest(
            "attack",
            {"archive": str(archive), "attack": attack, "label": label, "config": cfg.to_dict(),
             "checkpoint": str(checkpoint) if checkpoint else None},
            inputs={"archive": file_digest(arch_path)},
            seeds=[cfg.seed],
        )
        for name in ("plan.json", "injections.csv", "deletions.csv", "perturbed.hiag", "surrogate.ckpt"):
            if (out_dir / name).exists() and not (name == "surrogate.ckpt" and checkpoint):
                m.add_artifact(name, out_dir / name)
        m.params["plan_digest"] = plan.digest()
        m.params["plan_size"] = {"deleted": len(plan.deletions), "injected": len(plan.injections), "budget": plan.budget}
        m.stage_seconds = stages.seconds
        m.save(out_dir / "manifest.json")
    return m


def cmd_evaluate(
    clean: str, perturbed: list[str], out: str, seeds: int = 5, force: bool = False, victim: dict | None = None, negatives: int = 100
) -> RunManifest:
    """Train victims on clean and perturbed train segments; report MRR, Hit@10, A.P.D. and stealth."""
    if seeds < 1:
        raise UsageError("--seeds must be >= 1")
    names = ["reports.json", "comparison.md", "comparison.csv", "manifest.json"]
    out_dir = prepare_out_dir(out, force, names)
    clean_path = resolve_input(clean)
    segs = _segments(clean)
    seed_list = list(range(seeds))
    stages = _Stages()
    inputs = {"clean": file_digest(clean_path)}
    with run_lock(out_dir):
        with stages("clean"):
            base = evaluate_condition("clean", segs["train"], segs["test"], seed_list, negatives, victim, heldout=segs["val"])
        reports = []
        for i, p in enumerate(perturbed):
            ppath = resolve_input(p)
            inputs[f"perturbed[{i}]"] = file_digest(ppath)
            psegs = _segments(p)
            label = read_header(ppath)["meta"].get("label", ppath.parent.name)
            plan_file = ppath.parent / "plan.json"
            stealth = wall = None
            if plan_file.exists():
                plan = PerturbationPlan.load(plan_file)
                stealth = stealth_report(segs["train"], plan, psegs["train"])
                man = ppath.parent / "manifest.json"
                if man.exists():
                    wall = RunManifest.load(man).stage_seconds.get("plan")
            with stages(f"victims[{label}]"):
                rep = evaluate_condition(label, psegs["train"], segs["test"], seed_list, negatives, victim, heldout=segs["val"])
            rep.stealth = stealth
            rep.attack_wall_time = float(wall or 0.0)
            reports.append(rep)
        apd = average_performance_degradation(base, reports) if reports else {}
        # wall-clock times stay in the manifest so reports.json is reproducible bit for bit
        attacked = [{k: v for k, v in r.to_dict().items() if k != "attack_wall_time"} for r in reports]
        (out_dir / "reports.json").write_text(
            json.dumps({"clean": base.to_dict(), "attacked": attacked, "apd": apd}, indent=1, sort_keys=True)
        )
        (out_dir / "comparison.md").write_text(comparison_table(base, reports, "markdown") if reports else "")
        (out_dir / "comparison.csv").write_text(comparison_table(base, reports, "csv") if reports else "")
        m = RunManifest(
            "evaluate",
            {"clean": str(clean), "perturbed": [str(p) for p in perturbed], "victim": victim or {}, "negatives": negatives},
            inputs=inputs,
            seeds=seed_list,
        )
        for name in names[:-1]:
            m.add_artifact(name, out_dir / name)
        m.stage_seconds = stages.seconds
        m.stage_seconds["attack_plans"] = {r.condition: r.attack_wall_time for r in reports}
        m.save(out_dir / "manifest.json")
    return m


def cmd_replay(manifest: str, out: str, force: bool = False) -> tuple[RunManifest, dict[str, bool]]:
    """Re-run the command recorded in ``manifest`` into ``out`` and compare artifact digests."""
    old = RunManifest.load(resolve_input(manifest))
    p = old.params
    if old.command == "ingest":
        new = cmd_ingest(p["path"], p["format"], out, force)
    elif old.command == "attack":
        cfg = dict(p["config"])
        new = cmd_attack(p["archive"], p["attack"], out, cfg, force, p.get("checkpoint"))
    elif old.command == "evaluate":
        new = cmd_evaluate(p["clean"], p["perturbed"], out, len(old.seeds), force, p.get("victim") or None, p["negatives"])
    else:
        raise UsageError(f"cannot replay command {old.command!r}")
    a, b = old.digests(), new.digests()
    return new, {k: a[k] == b.get(k) for k in a}


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hia", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an event file into a split graph archive")
    p.add_argument("path")
    p.add_argument("--format", choices=("csv", "jodie"), default="csv")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("attack", help="plan and apply a poisoning attack")
    p.add_argument("archive")
    p.add_argument("--attack", choices=ATTACKS, default="hia")
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--deletion-fraction", type=float)
    p.add_argument("--injection-only", action="store_true", default=None)
    p.add_argument("--deletion-only", action="store_true", default=None)
    p.add_argument("--no-community", action="store_true", default=None)
    p.add_argument("--config", help="JSON or TOML file with attack settings; flags win")
    p.add_argument("--checkpoint", help="reuse a saved surrogate instead of training one")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("evaluate", help="train victims and compare clean vs perturbed")
    p.add_argument("clean")
    p.add_argument("perturbed", nargs="*")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--negatives", type=int, default=100)
    p.add_argument("--config", help="JSON or TOML file; its [victim] table overrides victim settings")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("replay", help="re-run a manifest and check its artifact digests")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    return ap


def _attack_params(args) -> dict:
    cfg = load_config_file(args.config)
    params = dict(cfg.get("attack", cfg))
    flags = {
        "delta": args.delta,
        "alpha": args.alpha,
        "seed": args.seed,
        "deletion_fraction": args.deletion_fraction,
        "injection_only": args.injection_only,
        "deletion_only": args.deletion_only,
        "no_community": args.no_community,
    }
    params.update({k: v for k, v in flags.items() if v is not None})
    if "surrogate" in cfg and "surrogate" not in params:
        params["surrogate"] = cfg["surrogate"]
    return params


def _fail(command: str | None, exc: BaseException, code: int) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "command": command}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            m = cmd_ingest(args.path, args.format, args.out, args.force)
        elif args.command == "attack":
            m = cmd_attack(args.archive, args.attack, args.out, _attack_params(args), args.force, args.checkpoint)
        elif args.command == "evaluate":
            victim = load_config_file(args.config).get("victim") if args.config else None
            m = cmd_evaluate(args.clean, args.perturbed, args.out, args.seeds, args.force, victim, args.negatives)
        else:
            m, same = cmd_replay(args.manifest, args.out, args.force)
            print(json.dumps({"replayed": m.command, "identical": same}, sort_keys=True))
            return 0 if all(same.values()) else 3
    except (UsageError, ArchiveError, FileNotFoundError, ValueError) as exc:
        return _fail(args.command, exc, 2)
    except Exception as exc:  # noqa: BLE001 - last-resort error report
        return _fail(args.command, exc, 1)
    print(json.dumps({"command": m.command, "artifacts": m.digests()}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
