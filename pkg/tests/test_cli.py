import json

import pandas as pd
import pytest
import torch

import takeover.cli
from takeover.cli import main
from takeover.core.settings import get_settings
from takeover.rl.networks import Actor, PolicyFunction, save_checkpoint

LOG_FILES = {"pipeline_log.jsonl", "report_pipeline_log.jsonl"}


def _outputs(directory):
    return {
        p.relative_to(directory).as_posix(): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name not in LOG_FILES
    }


def _ok(capsys):
    payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert payload["ok"] is True
    return payload


def test_missing_seed_is_a_config_error(out_dir, capsys):
    assert main(["simulate", "--out", str(out_dir)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["ok"] is False
    assert err["error"]["type"] == "ConfigError" and err["error"]["key_path"] == "seed"


def test_missing_leader_file_exits_2(out_dir, tmp_path):
    code = main(["simulate", "--seed", "1", "--leader", str(tmp_path / "nope.csv"), "--out", str(out_dir)])
    assert code == 2


def test_unknown_config_key_exits_2(out_dir):
    assert main(["simulate", "--seed", "1", "--set", "platoon.wheels=4", "--out", str(out_dir)]) == 2


def test_calibrate_without_bundle_exits_2(out_dir):
    assert main(["calibrate", "--seed", "1", "--out", str(out_dir)]) == 2


def test_bad_leader_profile_fails_the_pipeline(out_dir, tmp_path, capsys):
    bad = tmp_path / "leader.csv"
    bad.write_text("t,x,v,a\n0,0,26.2,0\n0.1,2.62,-3,0\n", encoding="utf-8")
    code = main(["simulate", "--seed", "1", "--leader", str(bad), "--out", str(out_dir)])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["type"] == "ProfileLoadError" and err["error"]["row"] == 1
    assert err["pipeline"]["failure_step"] == "rollouts"
    assert (out_dir / "pipeline_log.jsonl").exists()


def test_simulate_writes_outputs_and_reruns_identically(out_dir, capsys):
    argv = ["simulate", "--seed", "11", "--runs", "2", "--horizon", "5", "--out", str(out_dir)]
    assert main(argv) == 0
    payload = _ok(capsys)
    assert len(payload["run_id"]) == 12

    for name in ("rollout_index.json", "metrics.jsonl", "aggregate.csv", "takeover_cdf.csv",
                 "evidence_curve.csv", "manifest.json", "pipeline_log.jsonl",
                 "rollouts/run_00000.csv", "rollouts/run_00001.csv"):
        assert (out_dir / name).exists(), name

    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 11 and manifest["run_id"] == payload["run_id"]
    assert "rollouts/run_00001.csv" in manifest["files"]

    rollout = pd.read_csv(out_dir / "rollouts" / "run_00000.csv")
    # leader, AV, one follower over 51 ticks
    assert len(rollout) == 3 * 51
    assert set(rollout["role"]) == {"leader", "av", "hdv_follower"}

    first = _outputs(out_dir)
    assert main(argv) == 0
    assert _ok(capsys)["run_id"] == payload["run_id"]
    assert _outputs(out_dir) == first


def test_thread_count_does_not_change_outputs(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["simulate", "--seed", "4", "--runs", "3", "--horizon", "5"]
    assert main(base + ["--out", str(a)]) == 0
    assert main(base + ["--threads", "3", "--out", str(b)]) == 0
    for name in ("metrics.jsonl", "aggregate.csv", "rollouts/run_00002.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_evaluate_and_report(out_dir, capsys):
    argv = ["evaluate", "--seed", "3", "--runs", "2", "--horizon", "5", "--controllers", "hl,idm-pid",
            "--out", str(out_dir)]
    assert main(argv) == 0
    _ok(capsys)
    rates = pd.read_csv(out_dir / "rates.csv")
    assert list(rates["controller"]) == ["hl", "idm-pid"]
    comparisons = pd.read_csv(out_dir / "comparisons.csv")
    assert len(comparisons) == 1 and comparisons.loc[0, "candidate"] == "idm-pid"

    assert main(["report", "--seed", "3", "--out", str(out_dir)]) == 0
    _ok(capsys)
    text = (out_dir / "report.md").read_text(encoding="utf-8")
    assert "## Controller evaluation" in text and "idm-pid" in text
    assert (out_dir / "report_manifest.json").exists()
    assert (out_dir / "manifest.json").exists()


def test_report_needs_a_workflow_output(out_dir):
    assert main(["report", "--seed", "1", "--out", str(out_dir)]) == 2


@pytest.mark.integration
def test_calibrate_synthetic_end_to_end(out_dir, capsys):
    argv = ["calibrate", "--seed", "5", "--synthetic", "2", "--particles", "30", "--generations", "3",
            "--set", "abc.replicates=2", "--set", "abc.synthetic_horizon=60", "--out", str(out_dir)]
    assert main(argv) == 0
    _ok(capsys)
    for name in ("posterior.csv", "generation_log.csv", "marginals.csv", "correlation.csv", "bundle/manifest.csv"):
        assert (out_dir / name).exists(), name
    posterior = pd.read_csv(out_dir / "posterior.csv")
    assert set(posterior["instance_id"]) == {"syn000", "syn001"}


@pytest.mark.integration
def test_smoke_train_then_evaluate_policy(tmp_path, capsys):
    train_dir, eval_dir = tmp_path / "train", tmp_path / "eval"
    argv = ["train", "--seed", "2", "--smoke", "--episodes", "2", "--horizon", "5",
            "--set", "sac.batch_size=16", "--set", "sac.warmup_steps=20", "--set", "sac.hidden_size=8",
            "--out", str(train_dir)]
    assert main(argv) == 0
    _ok(capsys)
    assert (train_dir / "policy.bin").exists() and (train_dir / "learning_curve.csv").exists()

    argv = ["evaluate", "--seed", "2", "--smoke", "--runs", "2", "--horizon", "5", "--controllers", "policy,hl",
            "--set", "sac.hidden_size=8", "--checkpoint", str(train_dir / "policy.bin"),
            "--out", str(eval_dir)]
    assert main(argv) == 0
    _ok(capsys)
    assert list(pd.read_csv(eval_dir / "rates.csv")["controller"]) == ["policy", "hl"]


def test_policy_checkpoint_must_match_the_configured_network(out_dir, tmp_path, capsys):
    torch.manual_seed(0)
    ckpt = save_checkpoint(PolicyFunction(Actor(hidden=(8, 8))), tmp_path / "policy.bin")
    base = ["evaluate", "--seed", "3", "--runs", "2", "--horizon", "5", "--controllers", "policy",
            "--checkpoint", str(ckpt)]

    assert main(base + ["--out", str(out_dir)]) == 4
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["type"] == "CheckpointError"
    assert "layer sizes" in err["error"]["message"]

    assert main(base + ["--set", "sac.hidden_size=8", "--out", str(tmp_path / "ok")]) == 0
    _ok(capsys)


def test_threads_flag_sets_torch_threads(out_dir, monkeypatch, capsys):
    calls = []
    monkeypatch.setattr(takeover.cli.torch, "set_num_threads", calls.append)
    monkeypatch.delenv("TAKEOVER_TORCH_NUM_THREADS", raising=False)
    get_settings.cache_clear()
    try:
        assert main(["simulate", "--seed", "1", "--runs", "1", "--horizon", "5", "--threads", "3",
                     "--out", str(out_dir)]) == 0
        assert calls[0] == 3

        monkeypatch.setenv("TAKEOVER_TORCH_NUM_THREADS", "2")
        get_settings.cache_clear()
        assert main(["simulate", "--seed", "1", "--runs", "1", "--horizon", "5", "--threads", "3",
                     "--out", str(out_dir)]) == 0
        assert calls[-1] == 2
    finally:
        get_settings.cache_clear()
    _ok(capsys)
