"""Scenarios S0-S3, prediction, accuracy/LRAP and embedding export."""
from __future__ import annotations

import csv
import json
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .descstore import DescriptionCatalog
from .models import Instance, SemSupModel
from .scoring import OutputMatrixBatch, encode_descriptions
from .tensorcore import Graph

SCENARIOS = ("S0", "S1", "S2", "S3")


class LeakageError(ValueError):
    """A scenario's classes or descriptions overlap what training saw."""


@dataclass
class ScenarioSpec:
    id: str
    classes: list[str]
    train_classes: list[str]
    description_split: str = "train"
    superclass_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ValueError(f"scenario id must be one of {SCENARIOS}, got {self.id!r}")
        self.classes = sorted(self.classes)
        self.train_classes = sorted(self.train_classes)

    def label_of(self, label: str) -> str:
        return self.superclass_map[label] if self.id == "S3" else label

    def map_labels(self, inst: Instance) -> list[str]:
        out = []
        for lab in inst.labels:
            if self.id == "S3" and lab not in self.superclass_map:
                raise KeyError(f"instance {inst.id}: class {lab!r} has no superclass")
            mapped = self.label_of(lab)
            if mapped not in self.classes:
                raise KeyError(f"instance {inst.id}: label {mapped!r} is not a class of scenario {self.id}")
            if mapped not in out:
                out.append(mapped)
        return out


def superclass_scenario(superclass_map: dict[str, str], train_classes, split="test") -> ScenarioSpec:
    """S3 over every superclass with at least two child classes."""
    children: dict[str, list[str]] = {}
    for c, s in superclass_map.items():
        children.setdefault(s, []).append(c)
    keep = {s for s, cs in children.items() if len(cs) > 1}
    mapping = {c: s for c, s in superclass_map.items() if s in keep}
    return ScenarioSpec("S3", sorted(keep), list(train_classes), split, mapping)


def check_scenario(spec: ScenarioSpec, catalogs: dict[str, DescriptionCatalog]) -> None:
    """Leakage guard; raises LeakageError on any violation."""
    train = set(spec.train_classes)
    active = set(spec.classes)
    if not active:
        raise LeakageError(f"{spec.id}: scenario has no classes")
    if spec.id in ("S0", "S1") and not active <= train:
        raise LeakageError(f"{spec.id}: classes {sorted(active - train)} were not training classes")
    if spec.id == "S0" and spec.description_split != "train":
        raise LeakageError("S0 must use the training description split")
    if spec.id == "S1":
        if spec.description_split == "train":
            raise LeakageError("S1 must use a held-out description split")
        seen = catalogs["train"].subset(c for c in spec.classes if c in catalogs["train"]).hashes()
        held = catalogs[spec.description_split].subset(spec.classes).hashes()
        overlap = seen & held
        if overlap:
            raise LeakageError(f"S1: {len(overlap)} evaluation descriptions also appear in the training split")
    if spec.id == "S2":
        overlap = active & train
        if overlap:
            raise LeakageError(f"S2: unseen-class set overlaps training classes {sorted(overlap)}")
    if spec.id == "S3":
        if not spec.superclass_map:
            raise LeakageError("S3 needs a superclass map")
        overlap = active & train
        if overlap:
            raise LeakageError(f"S3: superclasses {sorted(overlap)} are also training classes")
    if spec.description_split not in catalogs:
        raise KeyError(f"no description split {spec.description_split!r}")


def predict(logits) -> int:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("cannot predict from empty logits")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    return int(np.argmax(z))  # first maximum wins ties


def lrap(scores: Sequence, truth: Sequence) -> float:
    """Label ranking average precision with the >= rule on both counts.

    Every ratio is a quotient of counts, so the mean is accumulated exactly
    as a fraction and rounded once at the end.
    """
    if len(scores) != len(truth):
        raise ValueError("scores and truth differ in length")
    if not len(scores):
        raise ValueError("lrap of zero instances")
    total = Fraction(0)
    for s, labels in zip(scores, truth):
        s = np.asarray(s, dtype=np.float64)
        labels = sorted(set(int(y) for y in labels))
        if not labels:
            raise ValueError("every instance needs at least one true label")
        true_scores = s[labels]
        acc = Fraction(0)
        for y in labels:
            acc += Fraction(int((true_scores >= s[y]).sum()), int((s >= s[y]).sum()))
        total += acc / len(labels)
    return float(total / len(scores))


@dataclass
class EvalReport:
    scenario: str
    metric: str
    value: float
    n_instances: int
    seed: int
    per_class: dict[str, float] = field(default_factory=dict)
    eval_samples: int = 1
    config_hash: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False)


def batches(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def score_instances(model: SemSupModel, instances: Sequence[Instance], catalog: DescriptionCatalog | None,
                    classes: Sequence[str], seed: int, batch_size: int = 32,
                    eval_samples: int = 1) -> np.ndarray:
    """Logits for every instance; one seeded class head per batch, averaged over ``eval_samples`` draws."""
    if eval_samples < 1:
        raise ValueError("eval_samples must be >= 1")
    rng = np.random.default_rng(seed)
    out = np.zeros((len(instances), len(classes)))
    row = 0
    for batch in batches(list(instances), batch_size):
        acc = np.zeros((len(batch), len(classes)))
        for _ in range(eval_samples):
            graph = Graph()
            head = model.class_head(graph, catalog, classes, rng)
            for i, inst in enumerate(batch):
                acc[i] += graph.value(model.logits(graph, inst, head))
        out[row:row + len(batch)] = acc / eval_samples
        row += len(batch)
    return out


def metric_from_scores(scores: np.ndarray, truth: list[list[int]], task: str) -> tuple[str, float]:
    if task == "multilabel":
        return "lrap", lrap(scores, truth)
    if any(len(t) != 1 for t in truth):
        raise ValueError("multiclass evaluation needs exactly one label per instance")
    hits = [predict(s) == t[0] for s, t in zip(scores, truth)]
    return "accuracy", float(np.mean(hits)) if hits else 0.0


def evaluate_scenario(model: SemSupModel, scenario: ScenarioSpec, instances: Sequence[Instance],
                      catalogs: dict[str, DescriptionCatalog], seed: int, task: str = "multiclass",
                      batch_size: int = 32, eval_samples: int = 1) -> EvalReport:
    check_scenario(scenario, catalogs)
    if model.config.kind == "sup" and scenario.id not in ("S0", "S1"):
        raise ValueError(f"the supervised model cannot score unseen classes ({scenario.id})")
    classes = scenario.classes
    index = {c: i for i, c in enumerate(classes)}
    truth = [[index[c] for c in scenario.map_labels(inst)] for inst in instances]
    catalog = catalogs[scenario.description_split]
    scores = score_instances(model, instances, catalog, classes, seed, batch_size, eval_samples)
    metric, value = metric_from_scores(scores, truth, task) if instances else ("accuracy", 0.0)
    per_class: dict[str, float] = {}
    if task == "multiclass" and instances:
        preds = [predict(s) for s in scores]
        for c, i in index.items():
            rows = [p == i for p, t in zip(preds, truth) if t[0] == i]
            if rows:
                per_class[c] = float(np.mean(rows))
    return EvalReport(scenario.id, metric, value, len(instances), seed, per_class, eval_samples)


def standardize_and_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return x
    centered = x - x.mean(axis=0)
    std = centered.std(axis=0)
    z = np.divide(centered, std, out=np.zeros_like(centered), where=std > 0)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return np.divide(z, norms, out=np.zeros_like(z), where=norms > 0)


def export_embeddings(model: SemSupModel, instances: Sequence[Instance], catalog: DescriptionCatalog,
                      scenario: ScenarioSpec, path, seed: int = 0, config_hash: str = "") -> int:
    """Write standardized, L2-normalized input and description embeddings as CSV.

    Returns the number of data rows written.
    """
    kinds, labels, rows = [], [], []
    if instances:
        graph = Graph()
        for inst in instances:
            kinds.append("input")
            labels.append(scenario.map_labels(inst)[0])
            rows.append(model.input_embedding(graph, inst))
        if model.g is not None:
            descs = [d for c in scenario.classes for d in catalog[c]]
            graph = Graph()
            omb: OutputMatrixBatch = encode_descriptions(graph, descs, model.g)
            for d, vec in zip(descs, model.head_embeddings(graph, omb)):
                kinds.append("description")
                labels.append(d.class_id)
                rows.append(vec)
    dim = model.config.d_model
    data = standardize_and_normalize(np.array(rows).reshape(len(rows), dim))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={seed} config_hash={config_hash} scenario={scenario.id}\n")
        w = csv.writer(fh)
        w.writerow(["kind", "class"] + [f"d{i}" for i in range(dim)])
        for k, lab, vec in zip(kinds, labels, data):
            w.writerow([k, lab] + [repr(float(v)) for v in vec])
    return len(rows)
