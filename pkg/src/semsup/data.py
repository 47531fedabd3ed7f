"""Dataset manifests: instance files, description catalogs and scenario definitions."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .descstore import DescriptionCatalog, apply_split_manifest, split_descriptions
from .evaluation import ScenarioSpec
from .models import Instance
from .textproc import Lexicon, Vocabulary


class ManifestError(ValueError):
    pass


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_instances(path) -> list[Instance]:
    return [Instance.from_record(r) for r in read_jsonl(path)]


@dataclass
class Dataset:
    root: Path
    task: str
    modality: str
    feature_dim: int
    instances: dict[str, list[Instance]]
    catalogs: dict[str, DescriptionCatalog]
    scenarios: dict[str, ScenarioSpec]
    classes: list[str]
    train_classes: list[str]
    class_names: dict[str, str] = field(default_factory=dict)
    superclass_map: dict[str, str] = field(default_factory=dict)
    lexicon: Lexicon | None = None

    def build_vocab(self) -> Vocabulary:
        """Vocabulary over training instances and training descriptions only."""
        texts = [i.text for i in self.instances.get("train", []) if i.text]
        texts += [" ".join(i.annotations) for i in self.instances.get("train", []) if i.annotations]
        texts += [d.text for d in self.catalogs["train"]]
        texts.append("this photo contains :")
        texts += [f"the class is {self.class_names.get(c, c)}" for c in self.train_classes]
        return Vocabulary.build(texts)


def load_manifest(path) -> Dataset:
    path = Path(path)
    root = path.parent
    with open(path, encoding="utf-8") as fh:
        m = json.load(fh)
    for key in ("task", "instances", "descriptions", "classes"):
        if key not in m:
            raise ManifestError(f"{path}: missing field {key!r}")
    instances = {name: load_instances(root / p) for name, p in m["instances"].items()}
    catalog = DescriptionCatalog.load(root / m["descriptions"])
    if m.get("description_splits"):
        catalogs = apply_split_manifest(catalog, root / m["description_splits"])
    else:
        train, val, test = split_descriptions(catalog)
        catalogs = {"train": train, "val": val, "test": test}
    classes = list(m["classes"])
    train_classes = list(m.get("train_classes", classes))
    superclass_map = dict(m.get("superclass_map", {}))
    scenarios = {}
    if m.get("scenarios"):
        scenarios = load_scenarios(root / m["scenarios"])
        train_classes = next(iter(scenarios.values())).train_classes if scenarios else train_classes
    lexicon = Lexicon.load(root / m["lexicon"]) if m.get("lexicon") else None
    ds = Dataset(root, m["task"], m.get("modality", "text"), int(m.get("feature_dim", 0)), instances,
                 catalogs, scenarios, classes, train_classes, dict(m.get("class_names", {})),
                 superclass_map, lexicon)
    validate_dataset(ds)
    return ds


def load_scenarios(path) -> dict[str, ScenarioSpec]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    train = obj["train_classes"]
    out = {}
    for s in obj["scenarios"]:
        out[s["id"]] = ScenarioSpec(s["id"], s["classes"], train, s.get("description_split", "train"),
                                    dict(s.get("superclass_map", {})))
    return out


def validate_dataset(ds: Dataset) -> None:
    known = set(ds.classes)
    for split, insts in ds.instances.items():
        for inst in insts:
            unknown = [c for c in inst.labels if c not in known]
            if unknown:
                raise ManifestError(f"{split} instance {inst.id} uses unknown classes {unknown}")
            if ds.task == "multiclass" and len(inst.labels) != 1:
                raise ManifestError(f"{split} instance {inst.id}: multiclass needs exactly one label")
            if not inst.labels:
                raise ManifestError(f"{split} instance {inst.id} has no labels")
    for split in ("train", "val"):
        for inst in ds.instances.get(split, []):
            outside = [c for c in inst.labels if c not in ds.train_classes]
            if outside:
                raise ManifestError(f"{split} instance {inst.id} is labeled with non-training classes {outside}")
    lacking = [c for c in ds.train_classes if c not in ds.catalogs["train"]]
    if lacking:
        raise ManifestError(f"training classes without training descriptions: {lacking}")
    for sc in ds.scenarios.values():
        cat = ds.catalogs.get(sc.description_split)
        if cat is None:
            raise ManifestError(f"scenario {sc.id} uses unknown description split {sc.description_split!r}")
        missing = [c for c in sc.classes if c not in cat]
        if missing:
            raise ManifestError(f"scenario {sc.id}: classes {missing} lack {sc.description_split} descriptions")
