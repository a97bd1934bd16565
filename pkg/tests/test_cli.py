import json

import pytest

from hia.cli import RunManifest, main
from hia.plan import PerturbationPlan
from hia.synthetic import synthetic_temporal_graph

FAST_TOML = """
[attack]
seed = 7

[surrogate]
embedding_dim = 8
epochs = 2
batch_size = 50

[victim]
embedding_dim = 8
epochs = 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    g, _ = synthetic_temporal_graph(n_nodes=50, n_events=1200, n_communities=3, seed=5)
    g.to_csv(root / "events.csv")
    (root / "fast.toml").write_text(FAST_TOML)
    assert main(["ingest", str(root / "events.csv"), "--out", str(root / "ds")]) == 0
    return root


def attack(ws, out, *extra):
    return main(["attack", str(ws / "ds" / "graph.hiag"), "--config", str(ws / "fast.toml"), "--out", str(ws / out), *extra])


def test_ingest_writes_stats_and_is_reproducible(workspace, tmp_path):
    stats = json.loads((workspace / "ds" / "stats.json").read_text())
    assert sum(stats["split"].values()) == stats["events"]
    assert main(["ingest", str(workspace / "events.csv"), "--out", str(tmp_path)]) == 0
    a = RunManifest.load(workspace / "ds" / "manifest.json").digests()
    b = RunManifest.load(tmp_path / "manifest.json").digests()
    assert a == b


def test_ingest_refuses_overwrite_without_force(workspace, capsys):
    code = main(["ingest", str(workspace / "events.csv"), "--out", str(workspace / "ds")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "UsageError" and "--force" in err["message"]


def test_malformed_row_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("src,dst,timestamp\n1,2,3\n4,oops,5\n")
    assert main(["ingest", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "3" in json.loads(capsys.readouterr().err)["message"]


def test_missing_archive_is_a_user_error(tmp_path, capsys):
    assert main(["attack", str(tmp_path / "nope.hiag"), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["command"] == "attack" and "nope.hiag" in err["message"]


def test_conflicting_mode_flags(workspace):
    assert attack(workspace, "conflict", "--injection-only", "--deletion-only") == 2


def test_zero_delta_gives_empty_plan(workspace):
    assert attack(workspace, "zero", "--delta", "0") == 0
    plan = PerturbationPlan.load(workspace / "zero" / "plan.json")
    assert plan.budget == 0 and len(plan.deletions) == 0 and len(plan.injections) == 0


def test_attack_is_deterministic_and_respects_budget(workspace):
    assert attack(workspace, "a1") == 0
    assert attack(workspace, "a2") == 0
    m1 = RunManifest.load(workspace / "a1" / "manifest.json")
    m2 = RunManifest.load(workspace / "a2" / "manifest.json")
    assert m1.params["plan_digest"] == m2.params["plan_digest"]
    assert m1.digests() == m2.digests()
    size = m1.params["plan_size"]
    assert size["deleted"] + size["injected"] <= size["budget"]
    # the config file set the seed and the surrogate size
    assert m1.seeds == [7]
    assert m1.params["config"]["surrogate"]["embedding_dim"] == 8


def test_flags_override_config_file(workspace):
    assert attack(workspace, "flags", "--seed", "3", "--attack", "random", "--delta", "0.1") == 0
    m = RunManifest.load(workspace / "flags" / "manifest.json")
    assert m.seeds == [3] and m.params["label"] == "random"
    assert m.params["config"]["delta"] == 0.1


def test_ablation_label(workspace):
    assert attack(workspace, "abl", "--injection-only", "--no-community") == 0
    plan = PerturbationPlan.load(workspace / "abl" / "plan.json")
    assert plan.meta["label"] == "hia-injection-only-no-community"
    assert len(plan.deletions) == 0


def test_evaluate_and_replay(workspace, capsys):
    if not (workspace / "a1").exists():
        assert attack(workspace, "a1") == 0
    args = ["evaluate", str(workspace / "ds" / "graph.hiag"), str(workspace / "ds" / "graph.hiag"),
            str(workspace / "a1" / "perturbed.hiag"), "--seeds", "2", "--negatives", "20", "--config", str(workspace / "fast.toml")]
    assert main(args + ["--out", str(workspace / "ev")]) == 0
    reports = json.loads((workspace / "ev" / "reports.json").read_text())
    # the clean archive evaluated as a "perturbed" condition degrades nothing
    first = reports["attacked"][0]
    assert first["mrr"] == reports["clean"]["mrr"]
    assert reports["apd"][first["condition"]] == 0.0
    assert reports["attacked"][1]["stealth"]["time_cross_pct"] == 0.0
    assert "| " in (workspace / "ev" / "comparison.md").read_text()
    capsys.readouterr()
    code = main(["replay", str(workspace / "ev" / "manifest.json"), "--out", str(workspace / "ev2")])
    out = json.loads(capsys.readouterr().out)
    assert code == 0 and all(out["identical"].values())


def test_replay_detects_tampering(workspace, capsys):
    assert attack(workspace, "t1", "--attack", "degree") == 0
    man = workspace / "t1" / "manifest.json"
    d = json.loads(man.read_text())
    d["artifacts"]["plan.json"]["sha256"] = "0" * 64
    man.write_text(json.dumps(d))
    assert main(["replay", str(man), "--out", str(workspace / "t2")]) == 3


def test_data_dir_environment(workspace, monkeypatch, tmp_path):
    monkeypatch.setenv("HIA_DATA_DIR", str(workspace))
    assert main(["ingest", "events.csv", "--out", str(tmp_path)]) == 0
