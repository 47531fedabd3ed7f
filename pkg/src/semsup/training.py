"""Minibatch training with a per-batch sampled output matrix, AdamW and early stopping."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .descstore import DescriptionCatalog
from .evaluation import batches, metric_from_scores, score_instances
from .models import Instance, SemSupModel
from .tensorcore import Graph, NonFiniteError, Tensor

log = logging.getLogger(__name__)

DEFAULT_LR = {"text": 2e-5, "features": 1e-4}


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    task: str = "multiclass"
    n_descriptions: int | None = None
    concat_k: int | None = None
    lr: float | None = None
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    eval_samples: int = 1

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.task not in ("multiclass", "multilabel"):
            raise ValueError(f"task must be multiclass or multilabel, got {self.task!r}")
        if self.n_descriptions is not None and self.concat_k is not None:
            raise ValueError("set at most one of n_descriptions and concat_k")
        if self.lr is not None and self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0 or self.eval_samples < 1:
            raise ValueError("batch_size, eval_samples >= 1 and max_epochs, patience >= 0 required")

    def resolved_lr(self, modality: str) -> float:
        return DEFAULT_LR[modality] if self.lr is None else self.lr

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out


# --- optimizer --------------------------------------------------------------

@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState,
               lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One AdamW update in place; decay is applied to the weights, not folded into the gradient."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimizer moments differ in count")
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch for {p.name}: param {p.shape}, grad {g.shape}, moment {m.shape}")
        p.data -= lr * weight_decay * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# --- early stopping ---------------------------------------------------------

class EarlyStopper:
    def __init__(self, patience: int):
        self.patience = patience
        self.best_metric = -math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad_epochs = 0
        self.best_state: dict | None = None

    def update(self, metric: float, state: dict | None = None) -> str:
        if not math.isfinite(metric):
            raise ValueError("validation metric must be finite")
        self.epoch += 1
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            self.best_state = state
            return "continue"
        self.bad_epochs += 1
        return "stop" if self.bad_epochs >= self.patience else "continue"


def early_stop_update(tracker: EarlyStopper, metric: float, state: dict | None = None) -> str:
    return tracker.update(metric, state)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    is_best: bool = False


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def best_epoch(self) -> int | None:
        best = [r.epoch for r in self.records if r.is_best]
        return best[0] if best else None

    def losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_metric", "is_best"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_metric), int(r.is_best)])


# --- training loop ----------------------------------------------------------

def training_catalog(catalog: DescriptionCatalog | None, classes: Sequence[str],
                     config: TrainConfig) -> DescriptionCatalog | None:
    if catalog is None:
        return None
    sub = catalog.subset(classes)
    if config.concat_k is not None:
        return sub.concatenated(config.concat_k)
    if config.n_descriptions is not None:
        return sub.truncated(config.n_descriptions)
    return sub


def label_targets(inst: Instance, index: dict[str, int], task: str):
    try:
        ids = [index[c] for c in inst.labels]
    except KeyError as exc:
        raise KeyError(f"instance {inst.id}: label {exc.args[0]!r} is not a training class") from None
    if task == "multiclass":
        if len(ids) != 1:
            raise ValueError(f"instance {inst.id}: multiclass needs exactly one label, got {len(ids)}")
        return ids[0]
    hot = np.zeros(len(index))
    hot[ids] = 1.0
    return hot


def batch_loss(model: SemSupModel, graph: Graph, batch: Sequence[Instance], head,
               index: dict[str, int], task: str) -> int:
    losses = []
    for inst in batch:
        logits = model.logits(graph, inst, head)
        target = label_targets(inst, index, task)
        if task == "multiclass":
            losses.append(graph.softmax_cross_entropy(logits, target))
        else:
            losses.append(graph.bce_with_logits(logits, target))
    return graph.mean_pool(graph.stack(losses))


def train(model: SemSupModel, config: TrainConfig, train_data: Sequence[Instance],
          val_data: Sequence[Instance], catalog: DescriptionCatalog | None = None,
          val_catalog: DescriptionCatalog | None = None, order_seed: int | None = None,
          desc_seed: int | None = None):
    """Fit ``model`` in place and return (best parameter state, TrainHistory).

    Instance order and description sampling use independent streams derived
    from ``config.seed`` unless overridden, so arms of an ablation can vary
    one while holding the other fixed.  The model ends holding the best state.
    """
    if not train_data:
        raise ValueError("no training instances")
    classes = model.classes
    index = {c: i for i, c in enumerate(classes)}
    train_cat = training_catalog(catalog, classes, config) if model.uses_descriptions else None
    if model.uses_descriptions and train_cat is None:
        raise ValueError(f"model kind {model.config.kind} needs a description catalog")
    val_cat = train_cat if val_catalog is None else training_catalog(val_catalog, classes, config)

    order_rng = np.random.default_rng([config.seed if order_seed is None else order_seed, 0])
    desc_rng = np.random.default_rng([config.seed if desc_seed is None else desc_seed, 1])
    lr = config.resolved_lr(model.config.modality)
    params = model.tensors()
    opt = OptimizerState.zeros_like(params)
    stopper = EarlyStopper(config.patience)
    history = TrainHistory()
    best_state = model.state()
    data = list(train_data)

    for epoch in range(1, config.max_epochs + 1):
        order = order_rng.permutation(len(data))
        total, count = 0.0, 0
        for batch in batches([data[i] for i in order], config.batch_size):
            graph = Graph()
            model.zero_grad()
            try:
                head = model.class_head(graph, train_cat, classes, desc_rng)
                loss = batch_loss(model, graph, batch, head, index, config.task)
            except NonFiniteError as exc:
                raise NumericalError(f"epoch {epoch}: non-finite value in forward pass ({exc})") from exc
            value = float(graph.value(loss))
            graph.backward(loss)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            bad = [p.name for p, g in zip(params, grads) if not np.all(np.isfinite(g))]
            if bad:
                raise NumericalError(f"epoch {epoch}: non-finite gradient in {bad}")
            adamw_step(params, grads, opt, lr, config.betas, config.eps, config.weight_decay)
            total += value * len(batch)
            count += len(batch)
        train_loss = total / count
        if val_data:
            truth = [[index[c] for c in inst.labels] for inst in val_data]
            scores = score_instances(model, val_data, val_cat, classes, config.seed + 7919,
                                     config.batch_size, config.eval_samples)
            _, val_metric = metric_from_scores(scores, truth, config.task)
        else:
            val_metric = -train_loss
        history.records.append(EpochRecord(epoch, train_loss, val_metric))
        log.info("epoch %d loss %.5f val %.4f", epoch, train_loss, val_metric)
        decision = stopper.update(val_metric)
        if stopper.best_epoch == epoch:
            best_state = model.state()
        if decision == "stop":
            break

    if history.records:
        history.records[stopper.best_epoch - 1].is_best = True
    model.load_state(best_state)
    return best_state, history
