import json
from pathlib import Path

import pytest

from aimlab import cli
from aimlab.config import DEFAULT_CONFIG, parse_config
from aimlab.errors import ConfigError, TrainingError
from aimlab.runlog import load_runlog

SMALL = """
[vqvae]
K = 16
D = 4
L = 2
epochs = 3

[train]
episodes = 96
batch = 16

[dataset]
kind = "synthetic"
count = 100
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_default_config_parses():
    cfg = parse_config(DEFAULT_CONFIG)
    assert (cfg.vqvae.K, cfg.vqvae.D, cfg.vqvae.L, cfg.train.episodes, cfg.train.batch_size) == (64, 8, 2, 2000, 16)
    assert cfg.train.strategy == "both" and cfg.train.b_value_head and not cfg.train.opponent_aim_loss


@pytest.mark.parametrize("text,field", [
    ("[train]\nepisode = 5", "train.episode"),
    ("[vqvae]\nK = 'many'", "vqvae.K"),
    ("[bogus]\nx = 1", "bogus"),
    ("[train]\nstrategy = 'greedy'", "strategy"),
    ("[dataset]\nkind = 'idx'", "dataset.images"),
    ("[train]\nb_value_head = 1", "train.b_value_head"),
])
def test_config_errors_name_field(text, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(text)


def test_idx_paths_must_exist(tmp_path):
    with pytest.raises(ConfigError, match="dataset.labels"):
        (tmp_path / "i.idx").write_bytes(b"")
        parse_config("[dataset]\nkind = 'idx'\nimages = 'i.idx'\nlabels = 'nope.idx'", tmp_path)


def test_geometry_propagates_to_train():
    cfg = parse_config("[vqvae]\nK = 32\nD = 4\nL = 3")
    assert (cfg.train.K, cfg.train.D, cfg.train.L) == (32, 4, 3)


def test_full_pipeline_and_determinism(tmp_path, config, capsys):
    out = tmp_path / "out"
    assert run("pretrain", "--config", config, "--out", out) == 0
    first = (out / "vqvae.ckpt").read_bytes()
    assert run("pretrain", "--config", config, "--out", out) == 0
    assert (out / "vqvae.ckpt").read_bytes() == first
    assert json.loads((out / "standards.json").read_text())["overall"] in ("pass", "warn", "fail")

    assert run("train", "--config", config, "--out", out, "--seed", 4) == 0
    run_dir = out / "runs" / "aim-seed4"
    log_bytes, ck_bytes = (run_dir / "runlog.jsonl").read_bytes(), (run_dir / "agents.ckpt").read_bytes()
    assert run("train", "--config", config, "--out", out, "--seed", 4) == 0
    assert (run_dir / "runlog.jsonl").read_bytes() == log_bytes
    assert (run_dir / "agents.ckpt").read_bytes() == ck_bytes
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert all(Path(p).exists() for p in manifest["artifacts"].values())
    assert len(manifest["input_hash"]) == 64 and manifest["config"]["train"]["seed"] == 4

    assert run("train", "--config", config, "--out", out, "--seed", 4, "--baseline") == 0
    base = load_runlog(out / "runs" / "baseline-seed4" / "runlog.jsonl")
    assert base.kind == "baseline" and len(base) == 96

    assert run("analyze", run_dir / "runlog.jsonl") == 0
    assert (run_dir / "report" / "topology.csv").exists()
    assert (run_dir / "report" / "reward_curve.svg").exists()

    capsys.readouterr()
    logs = [run_dir / "runlog.jsonl", out / "runs" / "baseline-seed4" / "runlog.jsonl"]
    assert run("compare", *logs, "--out", out) == 0
    table = capsys.readouterr().out
    assert "aim-seed4" in table and "baseline-seed4" in table
    assert (out / "compare.csv").read_text().startswith("rank,run,kind")


def test_env_output_root(tmp_path, config, monkeypatch):
    monkeypatch.setenv("AIMLAB_OUT", str(tmp_path / "env"))
    assert run("pretrain", "--config", config) == 0
    assert (tmp_path / "env" / "vqvae.ckpt").exists()


def test_usage_errors(tmp_path, config, capsys):
    assert run("train", "--config", config, "--out", tmp_path / "empty") == 2
    assert "vqvae.ckpt" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("[dataset]\nkind = 'idx'\nimages = 'missing.idx'\nlabels = 'missing.idx'")
    assert run("pretrain", "--config", bad, "--out", tmp_path) == 2
    assert "dataset.images" in capsys.readouterr().err
    assert run("pretrain", "--config", tmp_path / "nope.toml") == 2
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 2


def test_analyze_empty_log(tmp_path):
    from aimlab.runlog import RunLog, write_runlog
    write_runlog(tmp_path / "r.jsonl", RunLog({"K": 64, "L": 2}))
    assert run("analyze", tmp_path / "r.jsonl") == 2


def test_compare_needs_two_and_same_geometry(tmp_path):
    from aimlab.runlog import RunLog, write_runlog
    write_runlog(tmp_path / "a.jsonl", RunLog({"K": 64, "L": 2}))
    write_runlog(tmp_path / "b.jsonl", RunLog({"K": 16, "L": 2}))
    assert run("compare", tmp_path / "a.jsonl") == 2
    assert run("compare", tmp_path / "a.jsonl", tmp_path / "b.jsonl", "--out", tmp_path) == 2


def test_strict_fails_on_bad_standards(tmp_path):
    path = tmp_path / "weak.toml"
    path.write_text("[vqvae]\nK = 16\nD = 4\nepochs = 1\nlr = 1e-7\n[dataset]\ncount = 50\n")
    assert run("pretrain", "--config", path, "--out", tmp_path) == 0
    assert run("pretrain", "--config", path, "--out", tmp_path, "--strict") == 3


def test_training_failure_exit_code(tmp_path, config, monkeypatch):
    assert run("pretrain", "--config", config, "--out", tmp_path) == 0

    def boom(*a, **k):
        raise TrainingError("non-finite training loss", 32)

    monkeypatch.setattr(cli, "train", boom)
    assert run("train", "--config", config, "--out", tmp_path) == 3
    assert not (tmp_path / "runs" / "aim-seed0" / "manifest.json").exists()
