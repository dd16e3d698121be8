import json

import numpy as np
import pytest

from morec.cli import main
from tests.conftest import planted_log


@pytest.fixture()
def data_file(tmp_path):
    rng = np.random.default_rng(23)
    log = planted_log(rng, num_users=25, num_items=40,
                      interactions_per_user=16)
    lines = [f"{x.user_id}\t{x.item_id}\t{x.timestamp}" for x in log.interactions]
    path = tmp_path / "interactions.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture()
def tiny_config(tmp_path):
    doc = {
        "embed_dim": 4, "gru_hidden": 3, "gru_layers": 1, "slate_size": 4,
        "actor_hidden": [8], "critic_hidden": [8],
        "mf_epochs": 2, "episodes": 4, "max_steps": 3,
        "batch_size": 4, "warmup_transitions": 4, "pref_samples": 2,
        "eval_ks": [2, 4], "seed": 11,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def run(*argv):
    return main(list(argv))


def test_ingest_writes_artifacts(tmp_path, data_file, capsys):
    out = tmp_path / "run"
    code = run("ingest", "--data", str(data_file), "--out", str(out))
    assert code == 0
    captured = capsys.readouterr().out
    assert "users=25 items=40" in captured
    for name in ("split.json", "grouping.csv", "stats.json",
                 "resolved_config.json"):
        assert (out / name).exists(), name
    stats = json.loads((out / "stats.json").read_text())
    assert stats["users"] == 25 and stats["items"] == 40
    assert stats["actions"] == 25 * 16


def test_ingest_missing_file(tmp_path, capsys):
    code = run("ingest", "--data", str(tmp_path / "absent.tsv"),
               "--out", str(tmp_path / "run"))
    assert code == 2
    assert "absent.tsv" in capsys.readouterr().err


def test_ingest_rerun_is_byte_identical(tmp_path, data_file):
    out = tmp_path / "run"
    assert run("ingest", "--data", str(data_file), "--out", str(out)) == 0
    names = ("split.json", "grouping.csv", "stats.json", "resolved_config.json")
    snapshot = {n: (out / n).read_bytes() for n in names}
    assert run("ingest", "--data", str(data_file), "--out", str(out)) == 0
    for n in names:
        assert (out / n).read_bytes() == snapshot[n], n


def test_unknown_command_is_usage_error():
    assert run("bogus") == 2


def test_eval_requires_checkpoint(tmp_path, data_file, tiny_config, capsys):
    out = tmp_path / "run"
    assert run("ingest", "--config", str(tiny_config), "--data",
               str(data_file), "--out", str(out)) == 0
    code = run("eval", "--config", str(tiny_config), "--out", str(out),
               "--omega", "0.5")
    assert code == 2
    assert "missing prerequisite" in capsys.readouterr().err


def test_full_pipeline(tmp_path, data_file, tiny_config, capsys):
    out = tmp_path / "run"
    cfg = str(tiny_config)
    assert run("ingest", "--config", cfg, "--data", str(data_file),
               "--out", str(out)) == 0
    assert run("pretrain", "--config", cfg, "--out", str(out)) == 0
    assert (out / "embeddings.ckpt").exists()
    assert run("train", "--config", cfg, "--out", str(out)) == 0
    assert (out / "policy.ckpt").exists()
    assert (out / "training_log.csv").exists()
    log_lines = (out / "training_log.csv").read_text().splitlines()
    assert log_lines[0] == "episode,omega_u,scalarized_return,critic_loss,actor_objective"
    assert len(log_lines) == 1 + 4  # header + episodes

    assert run("eval", "--config", cfg, "--out", str(out), "--omega", "1.0") == 0
    captured = capsys.readouterr().out
    assert "evaluated omega=(1, 0)" in captured
    eval_csv = (out / "eval_omega_1.csv").read_text().splitlines()
    assert eval_csv[0] == "omega_u,K,recall,f1,ndcg,kl,pop_rate"
    assert len(eval_csv) == 3  # header + K=2 + K=4
    report = json.loads((out / "eval_omega_1.json").read_text())
    assert report["omega_u"] == 1.0

    assert run("frontier", "--config", cfg, "--out", str(out), "--grid", "3") == 0
    frontier_lines = (out / "frontier.csv").read_text().splitlines()
    assert frontier_lines[0] == \
        "omega_utility,omega_fairness,ndcg20,longtail_rate20,pareto"
    assert len(frontier_lines) == 4
    assert frontier_lines[1].startswith("0.000000,1.000000,")
    assert frontier_lines[3].startswith("1.000000,0.000000,")


def test_eval_rejects_bad_omega(tmp_path, data_file, tiny_config, capsys):
    out = tmp_path / "run"
    cfg = str(tiny_config)
    assert run("ingest", "--config", cfg, "--data", str(data_file),
               "--out", str(out)) == 0
    code = run("eval", "--config", cfg, "--out", str(out), "--omega", "1.5")
    assert code == 2
    assert "omega" in capsys.readouterr().err.lower()


def test_frontier_grid_two_gives_endpoints(tmp_path, data_file, tiny_config):
    out = tmp_path / "run"
    cfg = str(tiny_config)
    assert run("ingest", "--config", cfg, "--data", str(data_file),
               "--out", str(out)) == 0
    assert run("pretrain", "--config", cfg, "--out", str(out)) == 0
    assert run("train", "--config", cfg, "--out", str(out)) == 0
    assert run("frontier", "--config", cfg, "--out", str(out), "--grid", "2") == 0
    lines = (out / "frontier.csv").read_text().splitlines()[1:]
    omegas = [line.split(",")[0] for line in lines]
    assert omegas == ["0.000000", "1.000000"]
    assert run("frontier", "--config", cfg, "--out", str(out), "--grid", "0") == 2


def test_train_rerun_is_byte_identical(tmp_path, data_file, tiny_config):
    out = tmp_path / "run"
    cfg = str(tiny_config)
    assert run("ingest", "--config", cfg, "--data", str(data_file),
               "--out", str(out)) == 0
    assert run("pretrain", "--config", cfg, "--out", str(out)) == 0
    assert run("train", "--config", cfg, "--out", str(out)) == 0
    ckpt = (out / "policy.ckpt").read_bytes()
    log = (out / "training_log.csv").read_bytes()
    emb = (out / "embeddings.ckpt").read_bytes()
    assert run("pretrain", "--config", cfg, "--out", str(out)) == 0
    assert run("train", "--config", cfg, "--out", str(out)) == 0
    assert (out / "embeddings.ckpt").read_bytes() == emb
    assert (out / "policy.ckpt").read_bytes() == ckpt
    assert (out / "training_log.csv").read_bytes() == log


def test_config_flag_overrides_seed(tmp_path, data_file, tiny_config):
    out = tmp_path / "run"
    cfg = str(tiny_config)
    assert run("ingest", "--config", cfg, "--data", str(data_file),
               "--out", str(out), "--seed", "77") == 0
    doc = json.loads((out / "resolved_config.json").read_text())
    assert doc["seed"] == 77
