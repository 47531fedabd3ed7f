import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from semsup.cli import EXIT_INVALID, EXIT_LEAKAGE, EXIT_NUMERICAL, EXIT_OK, apply_override, config_hash, load_config

from cli_support import cli, plant_s1_overlap, plant_s2_overlap, tiny_config, tiny_dataset, write_config


def only_run(out, prefix):
    dirs = sorted(out.glob(f"{prefix}-*"))
    assert len(dirs) == 1, dirs
    return dirs[0]


def test_override_parsing():
    cfg = {"train": {"lr": 0.1}}
    apply_override(cfg, "train.lr=0.5")
    apply_override(cfg, "model.kind=sup")
    apply_override(cfg, "ablation.n=[1,2]")
    assert cfg == {"train": {"lr": 0.5}, "model": {"kind": "sup"}, "ablation": {"n": [1, 2]}}


def test_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": {"c": 2, "d": 3}}) == config_hash({"b": {"d": 3, "c": 2}, "a": 1})


def test_relative_paths_resolve_against_config(tmp_path):
    (tmp_path / "sub").mkdir()
    p = write_config(tmp_path / "sub" / "c.json", data={"manifest": "m.json"})
    assert load_config(p)["data"]["manifest"] == str(tmp_path / "sub" / "m.json")


@pytest.mark.parametrize("sections", [{"bogus": {}}, {"train": {"lr": -1.0}}, {"model": {"kind": "nope"}},
                                      {"train": {"n_descriptions": 2, "concat_k": 2}}])
def test_schema_violations_exit_2(tmp_path, capsys, sections):
    cfg = write_config(tmp_path / "c.json", **sections)
    assert cli("train", "--config", cfg, "--out", tmp_path / "runs") == EXIT_INVALID
    assert "invalid input" in capsys.readouterr().err


def test_bad_override_exit_2(tmp_path):
    cfg = write_config(tmp_path / "c.json", seed=0)
    assert cli("train", "--config", cfg, "--set", "novalue", "--out", tmp_path / "r") == EXIT_INVALID


def test_missing_manifest_exit_2(tmp_path):
    cfg = write_config(tmp_path / "c.json", data={"manifest": "absent.json"})
    assert cli("train", "--config", cfg, "--out", tmp_path / "r") == EXIT_INVALID


def test_gen_synthetic_run_directory(tmp_path):
    cfg = write_config(tmp_path / "c.json", seed=3, synthetic={"n_classes": 4, "n_superclasses": 2, "vocab_size": 100,
                                                               "signature_size": 10, "docs_per_class": 5})
    assert cli("gen-synthetic", "--config", cfg, "--out", tmp_path / "runs") == EXIT_OK
    rd = only_run(tmp_path / "runs", "gen-synthetic")
    assert rd.name.endswith("-s3")
    meta = json.loads((rd / "run.json").read_text())
    assert meta["seed"] == 3 and len(meta["config_hash"]) == 64 and rd.name.split("-")[2] == meta["config_hash"][:12]
    assert json.loads((rd / "config.json").read_text())["seed"] == 3
    assert (rd / "data" / "manifest.json").exists()
    assert not (rd / ".lock").exists()


def test_locked_run_directory(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", synthetic={"n_classes": 4, "n_superclasses": 2, "vocab_size": 100,
                                                       "signature_size": 10, "docs_per_class": 5})
    assert cli("gen-synthetic", "--config", cfg, "--out", tmp_path / "runs") == EXIT_OK
    rd = only_run(tmp_path / "runs", "gen-synthetic")
    (rd / ".lock").write_text("12345")
    assert cli("gen-synthetic", "--config", cfg, "--out", tmp_path / "runs") == EXIT_INVALID
    assert "locked" in capsys.readouterr().err
    assert (rd / ".lock").read_text() == "12345"


def test_train_then_evaluate_is_reproducible(tmp_path):
    manifest = tiny_dataset(tmp_path / "data")
    cfg = tiny_config(tmp_path, manifest)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli("train", "--config", cfg, "--out", out) == EXIT_OK
        rd = only_run(out, "train")
        assert (rd / "model.ckpt").exists()
        rows = list(csv.DictReader(open(rd / "history.csv")))
        assert [r["epoch"] for r in rows] == ["1", "2"]
        assert cli("evaluate", "--config", cfg, "--out", out) == EXIT_OK
        ev = only_run(out, "evaluate")
        reports = {p.name: json.loads(p.read_text()) for p in sorted(ev.glob("eval_*.json"))}
        assert sorted(reports) == ["eval_S0.json", "eval_S1.json", "eval_S2.json", "eval_S3.json"]
        outs.append(((rd / "history.csv").read_bytes(), (rd / "model.ckpt").read_bytes(), reports))
    assert outs[0] == outs[1]


def test_evaluate_without_checkpoint(tmp_path, capsys):
    cfg = tiny_config(tmp_path, tiny_dataset(tmp_path / "data"))
    assert cli("evaluate", "--config", cfg, "--out", tmp_path / "r") == EXIT_INVALID
    assert "run train first" in capsys.readouterr().err


@pytest.mark.parametrize("plant,needle", [(plant_s2_overlap, "c00"), (plant_s1_overlap, "S1")])
def test_planted_leakage_exit_4(tmp_path, capsys, plant, needle):
    manifest = tiny_dataset(tmp_path / "data")
    cfg = tiny_config(tmp_path, manifest, train={"lr": 0.01, "max_epochs": 1})
    assert cli("train", "--config", cfg, "--out", tmp_path / "r") == EXIT_OK
    plant(manifest)
    assert cli("evaluate", "--config", cfg, "--out", tmp_path / "r") == EXIT_LEAKAGE
    err = capsys.readouterr().err
    assert "leakage guard" in err and needle in err


def test_divergent_training_exit_3(tmp_path, capsys):
    cfg = tiny_config(tmp_path, tiny_dataset(tmp_path / "data"))
    # the first update moves every weight by about lr, so the next forward pass overflows
    assert cli("train", "--config", cfg, "--set", "train.lr=1e300", "--out", tmp_path / "r") == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_export_embeddings(tmp_path):
    cfg = tiny_config(tmp_path, tiny_dataset(tmp_path / "data"))
    assert cli("train", "--config", cfg, "--out", tmp_path / "r") == EXIT_OK
    assert cli("export-embeddings", "--config", cfg, "--out", tmp_path / "r") == EXIT_OK
    path = only_run(tmp_path / "r", "export-embeddings") / "embeddings_S2.csv"
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# seed=0 config_hash=")
    assert lines[1].startswith("kind,class,d0")


def test_builder_commands(tmp_path):
    configs = Path(__file__).resolve().parents[1] / "configs"
    assert cli("make-json-descriptions", "--config", configs / "json_descriptions.json", "--out", tmp_path) == EXIT_OK
    out = only_run(tmp_path, "make-json-descriptions") / "json_descriptions.jsonl"
    assert len(out.read_text().splitlines()) == 15
    assert cli("filter-annotations", "--config", configs / "filter_annotations.json", "--out", tmp_path) == EXIT_OK


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path / "c.json", bogus={})
    proc = subprocess.run([sys.executable, "-m", "semsup.cli", "train", "--config", str(cfg), "--out",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
