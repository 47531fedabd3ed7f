"""Glue for fitting, evaluating and ablating models on a loaded dataset."""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import Sequence

import numpy as np

from .data import Dataset
from .evaluation import EvalReport, evaluate_scenario
from .models import Instance, ModelConfig, SemSupModel
from .scoring import WordVectors
from .training import TrainConfig, TrainHistory, train

log = logging.getLogger(__name__)


def build_model(ds: Dataset, model_cfg: ModelConfig, seed: int) -> SemSupModel:
    if ds.modality != model_cfg.modality:
        model_cfg = replace(model_cfg, modality=ds.modality, feature_dim=ds.feature_dim or model_cfg.feature_dim)
    wv = WordVectors.load(model_cfg.word_vectors) if model_cfg.word_vectors else None
    return SemSupModel(model_cfg, ds.build_vocab(), ds.train_classes, ds.class_names, seed=seed, word_vectors=wv)


def fit(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
        desc_seed: int | None = None) -> tuple[SemSupModel, TrainHistory]:
    model = build_model(ds, model_cfg, train_cfg.seed)
    _, history = train(model, train_cfg, ds.instances["train"], ds.instances.get("val", []),
                       ds.catalogs["train"], desc_seed=desc_seed)
    return model, history


def scenario_instances(ds: Dataset, scenario_id: str, split: str = "test") -> list[Instance]:
    """Evaluation instances whose labels all resolve inside the scenario."""
    sc = ds.scenarios[scenario_id]
    out = []
    for inst in ds.instances.get(split, []):
        if sc.id == "S3":
            ok = all(c in sc.superclass_map for c in inst.labels)
        elif sc.id == "S2":
            ok = all(c in sc.classes for c in inst.labels)
        else:
            ok = all(c in sc.train_classes for c in inst.labels)
        if ok:
            out.append(inst)
    return out


def evaluate(ds: Dataset, model: SemSupModel, scenario_id: str, seed: int, batch_size: int = 32,
             eval_samples: int = 1) -> EvalReport:
    if scenario_id not in ds.scenarios:
        raise KeyError(f"dataset defines no scenario {scenario_id!r}")
    return evaluate_scenario(model, ds.scenarios[scenario_id], scenario_instances(ds, scenario_id),
                             ds.catalogs, seed, ds.task, batch_size, eval_samples)


def ablation_arms(ns: Sequence[int] = (1, 5, 10), concat: Sequence[int] = (10,)) -> list[tuple[str, dict]]:
    arms = [(f"Concat-{k}", {"concat_k": k, "n_descriptions": None}) for k in concat]
    arms += [(f"n = {n}", {"n_descriptions": n, "concat_k": None}) for n in ns]
    return arms


def ablate_descriptions(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                        ns: Sequence[int] = (1, 5, 10), concat: Sequence[int] = (10,),
                        seeds: Sequence[int] = (0, 1, 2), scenarios: Sequence[str] | None = None) -> list[dict]:
    """Train one model per (arm, seed) and average each scenario's metric over seeds.

    Instance order, initialization and evaluation seeds depend on the seed
    only, so arms differ just in the description budget and sampling stream.
    """
    scenarios = [s for s in (scenarios or ["S0", "S1", "S2", "S3"]) if s in ds.scenarios]
    rows = []
    for arm_index, (name, overrides) in enumerate(ablation_arms(ns, concat)):
        per_scenario: dict[str, list[float]] = {s: [] for s in scenarios}
        for seed in seeds:
            cfg = replace(train_cfg, seed=seed, **overrides)
            model, _ = fit(ds, model_cfg, cfg, desc_seed=1000 * seed + arm_index)
            for s in scenarios:
                per_scenario[s].append(evaluate(ds, model, s, seed, cfg.batch_size, cfg.eval_samples).value)
            log.info("arm %s seed %d: %s", name, seed, {s: v[-1] for s, v in per_scenario.items()})
        row = {"arm": name}
        row.update({s: float(np.mean(v)) for s, v in per_scenario.items()})
        row["mean"] = float(np.mean([row[s] for s in scenarios])) if scenarios else float("nan")
        rows.append(row)
    return rows
