"""Helpers for driving the command line against small generated datasets."""
import json
from pathlib import Path

from semsup.cli import run
from semsup.synthetic import SyntheticTaskSpec, generate

TINY_SPEC = dict(n_classes=6, n_superclasses=3, n_unseen=2, vocab_size=150, docs_per_class=10,
                 tokens_per_doc=12, descriptions_per_class=5, desc_tokens=6, signature_size=10)
TINY_MODEL = {"kind": "semsup_hybrid", "d_emb": 8, "d_model": 8, "d_tok": 4}
TINY_TRAIN = {"lr": 0.01, "batch_size": 8, "max_epochs": 2, "patience": 2}


def write_config(path: Path, **sections) -> Path:
    path.write_text(json.dumps(sections, indent=2))
    return path


def tiny_dataset(root: Path, **overrides) -> Path:
    return generate(SyntheticTaskSpec(**{**TINY_SPEC, **overrides}), root)


def tiny_config(tmp: Path, manifest: Path, name="cfg.json", **extra) -> Path:
    sections = {"seed": 0, "data": {"manifest": str(manifest)}, "model": dict(TINY_MODEL),
                "train": dict(TINY_TRAIN)}
    sections.update(extra)
    return write_config(tmp / name, **sections)


def cli(*args) -> int:
    return run([str(a) for a in args])


def plant_s2_overlap(manifest: Path, cls="c00") -> None:
    """Add a training class to the unseen-class scenario."""
    path = manifest.parent / "scenarios.json"
    obj = json.loads(path.read_text())
    for s in obj["scenarios"]:
        if s["id"] == "S2":
            s["classes"].append(cls)
    path.write_text(json.dumps(obj, indent=2))


def plant_s1_overlap(manifest: Path) -> None:
    """Copy one training description into the held-out test split."""
    path = manifest.parent / "description_splits.json"
    obj = json.loads(path.read_text())
    obj["test"].append(obj["train"][0])
    path.write_text(json.dumps(obj, indent=2))
