"""Logit heads: learned output matrix, description bi-encoder, hybrid lexical-semantic, baselines."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .descstore import Description, DescriptionCatalog, sample_description
from .encoders import EncodedText, TextEncoder
from .tensorcore import Graph, Tensor
from .textproc import UNK, tokenize

LEXICAL_MODES = ("all_pairs_sum", "per_type_max")


@dataclass
class OutputMatrixBatch:
    classes: list[str]
    matrix: int                       # node id, (K, d_model)
    token_reps: list[int]             # per class node id, (len_j, d_tok)
    surfaces: list[tuple[str, ...]]
    ids: list[tuple[int, ...]]
    provenance: list[str]             # content hash of the sampled description per class
    descriptions: list[Description]
    _all_reps_t: int | None = None    # cached (d_tok, sum len_j) for batched lexical matching

    def all_token_reps_t(self, graph: Graph) -> int:
        if self._all_reps_t is None:
            self._all_reps_t = graph.transpose(graph.concat_rows(self.token_reps))
        return self._all_reps_t

    @property
    def all_ids(self) -> np.ndarray:
        return np.concatenate([np.asarray(i, dtype=np.int64) for i in self.ids])

    @property
    def segments(self) -> np.ndarray:
        return np.concatenate([np.full(len(i), j, dtype=np.int64) for j, i in enumerate(self.ids)])


class ScoreBreakdown(NamedTuple):
    semantic: float
    annotation_semantic: float
    lexical: float
    total: float


def sample_class_descriptions(catalog: DescriptionCatalog, classes: Sequence[str],
                              rng: np.random.Generator) -> list[Description]:
    """One uniform draw per class from a single stream, classes in ascending order."""
    return [sample_description(catalog[c], rng, c) for c in sorted(classes)]


def build_output_matrix(graph: Graph, catalog: DescriptionCatalog, classes: Sequence[str],
                        encoder: TextEncoder, rng: np.random.Generator) -> OutputMatrixBatch:
    classes = sorted(classes)
    missing = [c for c in classes if c not in catalog]
    if missing:
        raise KeyError(f"no descriptions for classes {missing}")
    return encode_descriptions(graph, sample_class_descriptions(catalog, classes, rng), encoder)


def encode_descriptions(graph: Graph, descriptions: Sequence[Description],
                        encoder: TextEncoder) -> OutputMatrixBatch:
    pooled, reps, surfaces, ids = [], [], [], []
    for d in descriptions:
        enc = encoder.encode(graph, d.text)
        pooled.append(enc.pooled)
        reps.append(enc.token_reps)
        surfaces.append(enc.surfaces)
        ids.append(enc.ids)
    return OutputMatrixBatch(
        classes=[d.class_id for d in descriptions],
        matrix=graph.stack(pooled),
        token_reps=reps,
        surfaces=surfaces,
        ids=ids,
        provenance=[d.hash for d in descriptions],
        descriptions=list(descriptions),
    )


def score_sup(graph: Graph, pooled_input: int, output_matrix: Tensor) -> int:
    return graph.matmul(graph.leaf(output_matrix), pooled_input)


def score_bienc(graph: Graph, pooled_input: int, projection: Tensor, omb: OutputMatrixBatch) -> int:
    return graph.matmul(omb.matrix, graph.matmul(graph.leaf(projection), pooled_input))


def match_mask(input_ids, desc_ids) -> np.ndarray:
    """True where both positions hold the same in-vocabulary token."""
    a = np.asarray(input_ids, dtype=np.int64)[:, None]
    b = np.asarray(desc_ids, dtype=np.int64)[None, :]
    return (a == b) & (a > UNK)


def score_lexical(graph: Graph, input_reps: EncodedText, desc_reps: int, desc_ids,
                  mode: str = "all_pairs_sum") -> int:
    """Sum of contextual dot products over surface words shared by input and description."""
    mask = match_mask(input_reps.ids, desc_ids)
    m = graph.matmul(input_reps.token_reps, graph.transpose(desc_reps))
    seg = np.zeros(mask.shape[1], dtype=np.int64)
    return graph.mean_pool(graph.lexical_match(m, mask, seg, 1, mode))


def lexical_logits(graph: Graph, input_reps: EncodedText, omb: OutputMatrixBatch,
                   mode: str = "all_pairs_sum") -> int | None:
    """Per-class lexical scores, or None when no class shares a word with the input."""
    mask = match_mask(input_reps.ids, omb.all_ids)
    if not mask.any():
        return None
    m = graph.matmul(input_reps.token_reps, omb.all_token_reps_t(graph))
    return graph.lexical_match(m, mask, omb.segments, len(omb.classes), mode)


def score_hybrid_text(graph: Graph, input_reps: EncodedText, projection: Tensor,
                      omb: OutputMatrixBatch, mode: str = "all_pairs_sum") -> int:
    semantic = score_bienc(graph, input_reps.pooled, projection, omb)
    lex = lexical_logits(graph, input_reps, omb, mode)
    return semantic if lex is None else graph.add(semantic, lex)


def score_hybrid_image(graph: Graph, image_pooled: int, annotation: EncodedText, projection: Tensor,
                       annotation_projection: Tensor, omb: OutputMatrixBatch,
                       mode: str = "all_pairs_sum") -> tuple[int, list[ScoreBreakdown]]:
    semantic = score_bienc(graph, image_pooled, projection, omb)
    ann = score_bienc(graph, annotation.pooled, annotation_projection, omb)
    lex = lexical_logits(graph, annotation, omb, mode)
    logits = graph.add(semantic, ann)
    if lex is not None:
        logits = graph.add(logits, lex)
    sem_v, ann_v = graph.value(semantic), graph.value(ann)
    lex_v = graph.value(lex) if lex is not None else np.zeros_like(sem_v)
    total = graph.value(logits)
    parts = [ScoreBreakdown(float(s), float(a), float(x), float(t))
             for s, a, x, t in zip(sem_v, ann_v, lex_v, total)]
    return logits, parts


# --- baselines --------------------------------------------------------------

class WordVectors:
    """Frozen word vectors from a JSON Lines file, or a seeded random table.

    In random mode every token gets a fixed vector derived from the seed and
    the token string, so lookups never fail and are stable across runs.
    """

    def __init__(self, dim: int, table: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.dim = dim
        self.table = table
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def load(cls, path) -> "WordVectors":
        table = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    table[rec["token"]] = np.asarray(rec["vector"], dtype=np.float64)
        dims = {v.shape[0] for v in table.values()}
        if len(dims) != 1:
            raise ValueError(f"{path}: word vectors have inconsistent dimensions {sorted(dims)}")
        return cls(dims.pop(), table)

    def __contains__(self, token: str) -> bool:
        return self.table is None or token in self.table

    def vector(self, token: str) -> np.ndarray:
        if self.table is not None:
            try:
                return self.table[token]
            except KeyError:
                raise KeyError(f"no word vector for {token!r}") from None
        if token not in self._cache:
            digest = hashlib.sha1(token.encode("utf-8")).digest()
            rng = np.random.default_rng([self.seed, int.from_bytes(digest[:8], "little")])
            self._cache[token] = rng.normal(size=self.dim) / np.sqrt(self.dim)
        return self._cache[token]

    def mean_vector(self, text: str, strict: bool = True) -> np.ndarray:
        toks = tokenize(text)
        known = [t for t in toks if t in self]
        if strict and len(known) < len(toks):
            missing = [t for t in toks if t not in self]
            raise KeyError(f"no word vector for {missing} in {text!r}")
        if not known:
            raise KeyError(f"no word vectors for any token of {text!r}")
        return np.mean([self.vector(t) for t in known], axis=0)


def name_template(name: str, template: str = "the class is {}") -> str:
    return template.format(name)


def score_devise(graph: Graph, pooled_input: int, projection: Tensor, name_vectors: np.ndarray) -> int:
    return graph.matmul(graph.constant(name_vectors), graph.matmul(graph.leaf(projection), pooled_input))


def score_gile(graph: Graph, pooled_input: int, projection: Tensor, desc_vectors: np.ndarray) -> int:
    proj = graph.matmul(graph.leaf(projection), pooled_input)
    return graph.tanh(graph.matmul(graph.constant(desc_vectors), proj))


def score_baseline(kind: str, graph: Graph, pooled_input: int, projection: Tensor, material) -> int:
    """Dispatch for the class-name/description baselines.

    ``material`` is the (K, d_word) frozen name matrix for devise, the (K,
    d_word) mean description-word matrix for gile, and an OutputMatrixBatch of
    encoded name templates for bienc_names.
    """
    if kind == "devise":
        return score_devise(graph, pooled_input, projection, material)
    if kind == "gile":
        return score_gile(graph, pooled_input, projection, material)
    if kind == "bienc_names":
        return score_bienc(graph, pooled_input, projection, material)
    raise ValueError(f"unknown baseline kind {kind!r}")
