"""Seeded synthetic classification tasks with planted lexical cues.

Every class owns a disjoint set of signature words and every superclass a
smaller set shared by its children.  Documents mix signature words with
background words drawn uniformly from the whole vocabulary; descriptions fill
each slot with a signature word with probability ``cue_strength`` and with a
background word otherwise.  Classes past ``n_classes - n_unseen`` never
contribute training instances and exist for the unseen-class scenario.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .descstore import Description, DescriptionCatalog, split_descriptions, write_split_manifest

INSTANCE_SPLITS = (0.6, 0.2, 0.2)


@dataclass
class SyntheticTaskSpec:
    n_classes: int = 8
    n_superclasses: int = 4
    n_unseen: int = 0
    vocab_size: int = 200
    docs_per_class: int = 50
    tokens_per_doc: int = 30
    descriptions_per_class: int = 20
    desc_tokens: int = 6
    signature_size: int = 20
    super_signature_size: int = 4
    doc_signature_rate: float = 0.5
    doc_super_rate: float = 0.1
    cue_strength: float = 0.8
    task: str = "multiclass"
    modality: str = "text"
    feature_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.n_superclasses < 1 or self.n_classes % self.n_superclasses:
            raise ValueError("n_classes must be divisible by n_superclasses")
        if not 0 <= self.cue_strength <= 1:
            raise ValueError("cue_strength must be a probability")
        if not 0 <= self.n_unseen < self.n_classes:
            raise ValueError("n_unseen must leave at least one training class")
        if self.doc_signature_rate + self.doc_super_rate > 1:
            raise ValueError("doc_signature_rate + doc_super_rate must not exceed 1")
        needed = self.n_classes * self.signature_size + self.n_superclasses * self.super_signature_size
        if needed > self.vocab_size:
            raise ValueError(f"vocab_size {self.vocab_size} too small for disjoint signatures ({needed} words needed)")
        if self.descriptions_per_class < 3:
            raise ValueError("descriptions_per_class must be >= 3 to fill every split")
        if self.task not in ("multiclass", "multilabel") or self.modality not in ("text", "features"):
            raise ValueError("bad task or modality")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTaskSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec keys {sorted(unknown)}")
        return cls(**d)


def word(i: int) -> str:
    return f"w{i:03d}"


class SyntheticTask:
    """Signature layout of a spec; deterministic function of the spec alone."""

    def __init__(self, spec: SyntheticTaskSpec):
        self.spec = spec
        s = spec
        self.classes = [f"c{j:02d}" for j in range(s.n_classes)]
        self.superclasses = [f"s{k}" for k in range(s.n_superclasses)]
        per_super = s.n_classes // s.n_superclasses
        self.superclass_map = {c: self.superclasses[j // per_super] for j, c in enumerate(self.classes)}
        words = np.random.default_rng([s.seed, 101]).permutation(s.vocab_size)
        pos = 0
        self.signatures: dict[str, list[str]] = {}
        for c in self.classes:
            self.signatures[c] = [word(i) for i in words[pos:pos + s.signature_size]]
            pos += s.signature_size
        self.super_signatures: dict[str, list[str]] = {}
        for sc in self.superclasses:
            self.super_signatures[sc] = [word(i) for i in words[pos:pos + s.super_signature_size]]
            pos += s.super_signature_size
        self.vocab = [word(i) for i in range(s.vocab_size)]
        self.train_classes = self.classes[: s.n_classes - s.n_unseen]
        self.unseen_classes = self.classes[s.n_classes - s.n_unseen:]
        # a class is named by its first signature word
        self.class_names = {c: sig[0] for c, sig in self.signatures.items()}
        self.class_names.update({sc: sig[0] for sc, sig in self.super_signatures.items()})

    def cue_words(self, cls: str) -> list[str]:
        if cls in self.super_signatures:
            kids = [c for c, s in self.superclass_map.items() if s == cls]
            return self.super_signatures[cls] + [w for c in kids for w in self.signatures[c]]
        return self.signatures[cls] + self.super_signatures[self.superclass_map[cls]]

    def background_rate(self, cls: str) -> float:
        """Probability that a background draw lands in the cue words of ``cls``."""
        return len(set(self.cue_words(cls))) / self.spec.vocab_size

    # --- sampling ---------------------------------------------------------
    def document(self, labels: list[str], rng: np.random.Generator) -> list[str]:
        s = self.spec
        out = []
        for _ in range(s.tokens_per_doc):
            lab = labels[int(rng.integers(len(labels)))] if len(labels) > 1 else labels[0]
            r = rng.random()
            if r < s.doc_signature_rate:
                pool = self.signatures[lab]
            elif r < s.doc_signature_rate + s.doc_super_rate:
                pool = self.super_signatures[self.superclass_map[lab]]
            else:
                pool = self.vocab
            out.append(pool[int(rng.integers(len(pool)))])
        return out

    def description(self, cls: str, rng: np.random.Generator) -> list[str]:
        cues = self.cue_words(cls)
        out = []
        for _ in range(self.spec.desc_tokens):
            pool = cues if rng.random() < self.spec.cue_strength else self.vocab
            out.append(pool[int(rng.integers(len(pool)))])
        return out

    def features(self, labels: list[str], rng: np.random.Generator) -> list[float]:
        s = self.spec
        centers = np.random.default_rng([s.seed, 202]).normal(size=(s.n_classes, s.feature_dim))
        idx = [self.classes.index(c) for c in labels]
        v = centers[idx].mean(axis=0) + 0.5 * rng.normal(size=s.feature_dim)
        return [round(float(x), 6) for x in v]

    def detections(self, labels: list[str], rng: np.random.Generator) -> list[str]:
        lab = labels[0]
        sig = self.signatures[lab]
        picks = [sig[int(i)] for i in rng.integers(1, len(sig), size=3)]
        picks.append(self.class_names[lab])  # would leak the label unless filtered
        picks.append(self.vocab[int(rng.integers(len(self.vocab)))])
        return [picks[i] for i in rng.permutation(len(picks))]

    def labels_for(self, cls: str, rng: np.random.Generator, pool: list[str]) -> list[str]:
        if self.spec.task == "multiclass":
            return [cls]
        extra = [c for c in pool if c != cls]
        k = int(rng.integers(0, 3))
        chosen = [cls] + [extra[int(i)] for i in rng.choice(len(extra), size=min(k, len(extra)), replace=False)]
        return sorted(chosen)


def generate(spec: SyntheticTaskSpec, out_dir) -> Path:
    """Write a complete dataset under ``out_dir`` and return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task = SyntheticTask(spec)
    rng = np.random.default_rng([spec.seed, 303])

    splits = {"train": [], "val": [], "test": []}
    for c in task.classes:
        pool = task.train_classes if c in task.train_classes else task.unseen_classes
        records = []
        for i in range(spec.docs_per_class):
            labels = task.labels_for(c, rng, pool)
            rec = {"id": f"{c}-{i:04d}"}
            if spec.modality == "text":
                rec["text"] = " ".join(task.document(labels, rng))
            else:
                rec["features"] = task.features(labels, rng)
                rec["annotations"] = task.detections(labels, rng)
            rec["labels"] = labels
            records.append(rec)
        n_train = int(round(INSTANCE_SPLITS[0] * len(records)))
        n_val = int(round(INSTANCE_SPLITS[1] * len(records)))
        if c in task.train_classes:
            splits["train"] += records[:n_train]
            splits["val"] += records[n_train:n_train + n_val]
            splits["test"] += records[n_train + n_val:]
        else:
            splits["test"] += records[n_train + n_val:]
    paths = {}
    for name, recs in splits.items():
        paths[name] = f"instances_{name}.jsonl"
        with open(out / paths[name], "w", encoding="utf-8") as fh:
            for rec in recs:
                fh.write(json.dumps(rec) + "\n")

    descs = []
    for c in task.classes + task.superclasses:
        seen = set()
        while len([d for d in descs if d.class_id == c]) < spec.descriptions_per_class:
            text = " ".join(task.description(c, rng))
            if text not in seen:
                seen.add(text)
                descs.append(Description(c, "nl", text))
    catalog = DescriptionCatalog(descs)
    catalog.save(out / "descriptions.jsonl")
    train_d, val_d, test_d = split_descriptions(catalog, (0.6, 0.2, 0.2), np.random.default_rng([spec.seed, 404]))
    write_split_manifest(out / "description_splits.json", {"train": train_d, "val": val_d, "test": test_d})

    lexicon = {}
    for c in task.classes:
        sc = task.superclass_map[c]
        lexicon[c] = {
            "synonyms": [task.class_names[c]],
            "hyponyms": [],
            "hypernyms": [task.class_names[sc]],
            "definition": " ".join(task.signatures[c][:5]),
        }
    with open(out / "lexicon.json", "w", encoding="utf-8") as fh:
        json.dump(lexicon, fh, indent=2)
    with open(out / "related_terms.json", "w", encoding="utf-8") as fh:
        json.dump({c: task.signatures[c][1:] for c in task.classes}, fh, indent=2)

    scenarios = [
        {"id": "S0", "classes": task.train_classes, "description_split": "train"},
        {"id": "S1", "classes": task.train_classes, "description_split": "test"},
    ]
    if task.unseen_classes:
        scenarios.append({"id": "S2", "classes": task.unseen_classes, "description_split": "test"})
    children = {}
    for c in task.train_classes:
        children.setdefault(task.superclass_map[c], []).append(c)
    s3_map = {c: s for s, cs in children.items() if len(cs) > 1 for c in cs}
    if s3_map:
        scenarios.append({"id": "S3", "classes": sorted(set(s3_map.values())), "description_split": "test",
                          "superclass_map": s3_map})
    with open(out / "scenarios.json", "w", encoding="utf-8") as fh:
        json.dump({"train_classes": task.train_classes, "scenarios": scenarios}, fh, indent=2)

    manifest = {
        "task": spec.task,
        "modality": spec.modality,
        "feature_dim": spec.feature_dim if spec.modality == "features" else 0,
        "instances": paths,
        "descriptions": "descriptions.jsonl",
        "description_splits": "description_splits.json",
        "lexicon": "lexicon.json",
        "scenarios": "scenarios.json",
        "classes": task.classes + task.superclasses,
        "train_classes": task.train_classes,
        "class_names": task.class_names,
        "superclass_map": task.superclass_map,
        "synthetic_spec": asdict(spec),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return out / "manifest.json"
