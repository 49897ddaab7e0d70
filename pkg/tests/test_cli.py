from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from editgrpo import cli, corpuscheck, policy as pol, textedit
from editgrpo.rewards import RewardEnv

SMALL = {
    "seed": 3,
    "pretrain": {"steps": 5, "learning_rate": 0.01, "batch_size": 8},
    "grpo": {"steps": 4, "batch_prompts": 2, "learning_rate": 0.003},
    "reward": {"lambda_schedule": [[0, 0.9, 0.1], [2, 0.8, 0.2]]},
    "corpus": {"heldout": 10},
}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg = root / "small.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    c = str(cfg)
    assert cli.main(["gen-corpus", "--n", "40", "--seed", "1", "--out", str(root / "corpus"), "--config", c]) == 0
    assert cli.main(["pretrain", "--corpus", str(root / "corpus"), "--out", str(root / "ref"), "--config", c]) == 0
    assert cli.main([
        "train", "--prompts", str(root / "corpus" / "prompts_train.jsonl"),
        "--ref", str(root / "ref" / "checkpoints" / "reference.ckpt"), "--out", str(root / "grpo"), "--config", c,
    ]) == 0
    assert cli.main([
        "eval", "--checkpoint", str(root / "grpo" / "checkpoints" / "policy.ckpt"),
        "--prompts", str(root / "corpus" / "prompts_heldout.jsonl"), "--out", str(root / "eval"), "--config", c,
    ]) == 0
    return root, c


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_run_layout_and_manifests(run):
    root, _ = run
    for d in ("corpus", "ref", "grpo", "eval"):
        m = manifest(root / d)
        assert m["status"] == "complete" and m["started_at"] and m["finished_at"]
        assert m["config"]["seed"] == 3
        for rel, digest in m["outputs"].items():
            assert cli.file_hash(root / d / rel) == digest
    assert (root / "grpo" / "metrics.csv").exists() and (root / "grpo" / "checkpoints").is_dir()
    assert (root / "eval" / "reports" / "eval.json").exists()
    m = manifest(root / "grpo")
    assert m["config"]["reward"]["lambda_schedule"] == [[0, 0.9, 0.1], [2, 0.8, 0.2]]
    assert set(m["inputs"]) == {"prompts", "ref"} and m["seeds"]["grpo"] == 3


def test_gen_corpus_outputs(run, tmp_path):
    root, c = run
    prompts = textedit.read_prompts(root / "corpus" / "prompts_train.jsonl")
    held = textedit.read_prompts(root / "corpus" / "prompts_heldout.jsonl")
    assert len(prompts) == 30 and len(held) == 10
    meta = json.loads((root / "corpus" / "corpus_meta.json").read_text())
    assert meta["split"] == {"train": [0, 30], "heldout": [30, 40]}
    assert cli.main(["gen-corpus", "--n", "40", "--seed", "1", "--out", str(tmp_path / "again"), "--config", c]) == 0
    assert manifest(tmp_path / "again")["outputs"] == manifest(root / "corpus")["outputs"]


def test_train_metrics_rows_and_schedule(run):
    root, _ = run
    lines = (root / "grpo" / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(("step", "mean_reward", "mean_wer", "mean_mcd", "mean_sim",
                                 "mean_kl", "clip_frac", "lambda_c", "lambda_s"))
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 4
    assert [(r[7], r[8]) for r in rows] == [("0.9", "0.1")] * 2 + [("0.8", "0.2")] * 2


def test_replay_is_bit_identical(run, tmp_path):
    root, _ = run
    for d in ("corpus", "grpo", "eval"):
        assert cli.main(["replay", str(root / d / "manifest.json"), "--out", str(tmp_path / d)]) == 0
        assert manifest(tmp_path / d)["outputs"] == manifest(root / d)["outputs"]


def test_eval_twice_identical(run, tmp_path):
    root, c = run
    args = ["eval", "--checkpoint", str(root / "ref" / "checkpoints" / "reference.ckpt"),
            "--prompts", str(root / "corpus" / "prompts_heldout.jsonl"), "--config", c]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(["--threads", "2"] + args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/reports/eval.json").read_bytes() == (tmp_path / "b/reports/eval.json").read_bytes()


def test_pretrain_zero_steps_is_initialization(run, tmp_path):
    root, c = run
    out = tmp_path / "p0"
    assert cli.main(["pretrain", "--corpus", str(root / "corpus"), "--out", str(out), "--config", c,
                     "--steps", "0"]) == 0
    params, meta = pol.load_checkpoint(out / "checkpoints" / "reference.ckpt")
    from editgrpo import config

    init = pol.PolicyParams.init(config.load(c).policy)
    assert np.array_equal(params.flat(), init.flat()) and meta["steps_run"] == 0


def test_pretraining_beats_untrained_policy(run, tmp_path):
    root, c = run
    out = tmp_path / "p40"
    assert cli.main(["pretrain", "--corpus", str(root / "corpus"), "--out", str(out), "--config", c,
                     "--steps", "40"]) == 0
    trained, _ = pol.load_checkpoint(out / "checkpoints" / "reference.ckpt")
    from editgrpo import config

    cfg = config.load(c)
    untrained = pol.PolicyParams.init(cfg.policy)
    prompts = textedit.read_prompts(root / "corpus" / "prompts_train.jsonl")
    env = RewardEnv(cfg.env)
    assert corpuscheck.evaluate(trained, prompts, env).mean_wer < corpuscheck.evaluate(untrained, prompts, env).mean_wer


def test_missing_checkpoint_exit_code_names_path(run, tmp_path, capsys):
    root, c = run
    missing = tmp_path / "nope.ckpt"
    code = cli.main(["eval", "--checkpoint", str(missing), "--prompts",
                     str(root / "corpus" / "prompts_heldout.jsonl"), "--out", str(tmp_path / "e")])
    assert code == 2 and str(missing) in capsys.readouterr().err
    assert not (tmp_path / "e").exists()


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["eval", "--bogus"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["gen-corpus", "--n", "many", "--seed", "1", "--out", str(tmp_path)])
    assert e.value.code == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("grpo: {groupsize: 3}\n")
    assert cli.main(["gen-corpus", "--n", "5", "--seed", "1", "--out", str(tmp_path / "x"), "--config", str(bad)]) == 1
    assert cli.main(["gen-corpus", "--n", "5", "--seed", "1", "--out", str(tmp_path / "y")]) == 1  # heldout >= n
    assert cli.main(["--threads", "0", "gen-corpus", "--n", "80", "--seed", "1", "--out", str(tmp_path / "z")]) == 1


def test_manifest_written_before_computation(tmp_path):
    broken = tmp_path / "broken.jsonl"
    broken.write_text("{not json\n")
    out = tmp_path / "p"
    assert cli.main(["pretrain", "--corpus", str(broken), "--out", str(out)]) == 2
    m = manifest(out)
    assert m["status"] == "running" and m["inputs"]["corpus"]["sha256"] == cli.file_hash(broken)


def test_replay_refuses_changed_inputs(run, tmp_path):
    root, c = run
    src = tmp_path / "prompts.jsonl"
    src.write_bytes((root / "corpus" / "prompts_heldout.jsonl").read_bytes())
    out = tmp_path / "e"
    assert cli.main(["eval", "--checkpoint", str(root / "ref" / "checkpoints" / "reference.ckpt"),
                     "--prompts", str(src), "--out", str(out), "--config", c]) == 0
    src.write_text(src.read_text().splitlines()[0] + "\n")
    assert cli.main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "r")]) == 2


def test_console_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "editgrpo", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen-corpus" in r.stdout
    r = subprocess.run([sys.executable, "-m", "editgrpo", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 1
