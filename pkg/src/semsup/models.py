"""Model assembly: encoders and heads for every supported model kind."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .descstore import NL, Description, DescriptionCatalog
from .encoders import EncoderParams, FeatureEncoderParams, TextEncoder, encode_features, uniform_init
from .scoring import (
    LEXICAL_MODES,
    OutputMatrixBatch,
    WordVectors,
    build_output_matrix,
    encode_descriptions,
    name_template,
    sample_class_descriptions,
    score_bienc,
    score_devise,
    score_gile,
    score_hybrid_image,
    score_hybrid_text,
    score_sup,
)
from .tensorcore import Graph, Tensor
from .textproc import DEFAULT_MAX_LEN, Vocabulary, render_annotation_text

MODEL_KINDS = ("sup", "semsup_bienc", "semsup_hybrid", "devise", "gile", "bienc_names")
DESCRIPTION_KINDS = ("semsup_bienc", "semsup_hybrid", "gile")


@dataclass
class ModelConfig:
    kind: str = "semsup_bienc"
    modality: str = "text"
    d_emb: int = 64
    d_model: int = 64
    d_tok: int = 32
    hidden: int = 64
    feature_dim: int = 0
    max_len: int = DEFAULT_MAX_LEN
    residual: bool = True
    positional: bool = False
    lexical_mode: str = "all_pairs_sum"
    word_dim: int = 64
    word_vectors: str | None = None
    name_template: str = "the class is {}"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.modality not in ("text", "features"):
            raise ValueError(f"modality must be 'text' or 'features', got {self.modality!r}")
        if self.modality == "features" and self.feature_dim < 1:
            raise ValueError("feature modality needs feature_dim >= 1")
        if self.lexical_mode not in LEXICAL_MODES:
            raise ValueError(f"lexical_mode must be one of {LEXICAL_MODES}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Instance:
    id: str
    labels: list[str]
    text: str | None = None
    features: list[float] | None = None
    annotations: list[str] = field(default_factory=list)

    @classmethod
    def from_record(cls, rec: dict) -> "Instance":
        labels = rec["labels"]
        if isinstance(labels, str):
            labels = [labels]
        return cls(str(rec["id"]), [str(c) for c in labels], rec.get("text"), rec.get("features"),
                   list(rec.get("annotations", [])))


class SemSupModel:
    """Holds every parameter of one model and computes per-instance logits."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, classes: Sequence[str],
                 class_names: dict[str, str] | None = None, seed: int = 0,
                 word_vectors: WordVectors | None = None):
        self.config = config
        self.vocab = vocab
        self.classes = sorted(classes)
        self.class_names = dict(class_names or {})
        rng = np.random.default_rng(seed)
        c = config
        self.params: dict[str, Tensor] = {}

        def text_encoder(prefix):
            p = EncoderParams.init(rng, len(vocab), c.d_emb, c.d_model, c.d_tok, prefix=prefix)
            self.params.update({prefix + k: v for k, v in p.tensors().items()})
            return TextEncoder(p, vocab, c.max_len, c.residual, c.positional)

        if c.modality == "text":
            self.f = text_encoder("f.")
        else:
            fp = FeatureEncoderParams.init(rng, c.feature_dim, c.hidden, c.d_model, prefix="f.")
            self.params.update({"f." + k: v for k, v in fp.tensors().items()})
            self.f = fp
        self.g = text_encoder("g.") if c.kind in ("semsup_bienc", "semsup_hybrid", "bienc_names") else None
        self.h = None
        if c.kind == "semsup_hybrid" and c.modality == "features":
            self.h = text_encoder("h.")
            self.params["P_I"] = uniform_init(rng, (c.d_model, c.d_model), c.d_model, "P_I")
        if c.kind == "sup":
            self.params["O"] = uniform_init(rng, (len(self.classes), c.d_model), c.d_model, "O")
        else:
            out_dim = c.word_dim if c.kind in ("devise", "gile") else c.d_model
            self.params["P"] = uniform_init(rng, (out_dim, c.d_model), c.d_model, "P")
        self.word_vectors = None
        if c.kind in ("devise", "gile"):
            self.word_vectors = word_vectors or WordVectors(c.word_dim, seed=seed)
            if self.word_vectors.dim != c.word_dim:
                raise ValueError(f"word vectors have dim {self.word_vectors.dim}, config says {c.word_dim}")

    # ------------------------------------------------------------------
    def tensors(self) -> list[Tensor]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {state[k].shape} != {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    @property
    def uses_descriptions(self) -> bool:
        return self.config.kind in DESCRIPTION_KINDS

    def name(self, class_id: str) -> str:
        return self.class_names.get(class_id, class_id)

    # ------------------------------------------------------------------
    def class_head(self, graph: Graph, catalog: DescriptionCatalog | None, classes: Sequence[str],
                   rng: np.random.Generator):
        """Per-batch class representation shared by every instance of the batch."""
        classes = sorted(classes)
        kind = self.config.kind
        if kind == "sup":
            if classes != self.classes:
                raise ValueError("the supervised head only scores its training classes")
            return self.params["O"]
        if kind in ("semsup_bienc", "semsup_hybrid"):
            return build_output_matrix(graph, catalog, classes, self.g, rng)
        if kind == "bienc_names":
            descs = [Description(c, NL, name_template(self.name(c), self.config.name_template)) for c in classes]
            return encode_descriptions(graph, descs, self.g)
        if kind == "devise":
            return np.stack([self.word_vectors.mean_vector(self.name(c)) for c in classes])
        # gile: resampled description per class, frozen mean word vector
        descs = sample_class_descriptions(catalog, classes, rng)
        return np.stack([self.word_vectors.mean_vector(d.text, strict=False) for d in descs])

    def logits(self, graph: Graph, inst: Instance, head) -> int:
        c = self.config
        if c.modality == "text":
            enc = self.f.encode(graph, inst.text)
            pooled = enc.pooled
        else:
            enc = None
            pooled = encode_features(graph, inst.features, self.f)
        if c.kind == "sup":
            return score_sup(graph, pooled, head)
        if c.kind == "devise":
            return score_devise(graph, pooled, self.params["P"], head)
        if c.kind == "gile":
            return score_gile(graph, pooled, self.params["P"], head)
        if c.kind == "semsup_hybrid":
            if c.modality == "text":
                return score_hybrid_text(graph, enc, self.params["P"], head, c.lexical_mode)
            ann = self.h.encode(graph, render_annotation_text(inst.annotations))
            logits, _ = score_hybrid_image(graph, pooled, ann, self.params["P"], self.params["P_I"],
                                           head, c.lexical_mode)
            return logits
        return score_bienc(graph, pooled, self.params["P"], head)

    def input_embedding(self, graph: Graph, inst: Instance) -> np.ndarray:
        if self.config.modality == "text":
            return graph.value(self.f.encode(graph, inst.text).pooled).copy()
        return graph.value(encode_features(graph, inst.features, self.f)).copy()

    def head_embeddings(self, graph: Graph, head) -> np.ndarray:
        if isinstance(head, OutputMatrixBatch):
            return graph.value(head.matrix).copy()
        if isinstance(head, Tensor):
            return head.data.copy()
        return np.asarray(head).copy()
