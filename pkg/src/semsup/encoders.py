"""Trainable text and feature encoders built on :mod:`semsup.tensorcore`."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tensorcore import Graph, Tensor
from .textproc import DEFAULT_MAX_LEN, TokenSequence, Vocabulary


def uniform_init(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = 1.0 / (10000 ** (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates[: dim // 2])
    return table


@dataclass
class EncoderParams:
    embedding: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w_pool: Tensor
    b_pool: Tensor
    w_tok: Tensor
    b_tok: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, vocab_size: int, d_emb: int = 64,
             d_model: int = 64, d_tok: int = 32, prefix: str = "") -> "EncoderParams":
        u = lambda shape, fan_in, n: uniform_init(rng, shape, fan_in, prefix + n)
        return cls(
            embedding=u((vocab_size, d_emb), d_emb, "embedding"),
            wq=u((d_emb, d_emb), d_emb, "wq"),
            wk=u((d_emb, d_emb), d_emb, "wk"),
            wv=u((d_emb, d_emb), d_emb, "wv"),
            wo=u((d_emb, d_emb), d_emb, "wo"),
            w_pool=u((d_emb, d_model), d_emb, "w_pool"),
            b_pool=u((d_model,), d_emb, "b_pool"),
            w_tok=u((d_emb, d_tok), d_emb, "w_tok"),
            b_tok=u((d_tok,), d_emb, "b_tok"),
        )

    def tensors(self) -> dict[str, Tensor]:
        return dict(vars(self))


@dataclass
class FeatureEncoderParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, feature_dim: int, hidden: int = 64,
             d_model: int = 64, prefix: str = "") -> "FeatureEncoderParams":
        return cls(
            w1=uniform_init(rng, (feature_dim, hidden), feature_dim, prefix + "w1"),
            b1=uniform_init(rng, (hidden,), feature_dim, prefix + "b1"),
            w2=uniform_init(rng, (hidden, d_model), hidden, prefix + "w2"),
            b2=uniform_init(rng, (d_model,), hidden, prefix + "b2"),
        )

    def tensors(self) -> dict[str, Tensor]:
        return dict(vars(self))


class EncodedText(NamedTuple):
    pooled: int        # node id, shape (d_model,)
    token_reps: int    # node id, shape (len, d_tok)
    surfaces: tuple[str, ...]
    ids: tuple[int, ...]


def encode_text(graph: Graph, seq: TokenSequence, params: EncoderParams,
                residual: bool = True, positional: bool = False) -> EncodedText:
    """Embed, one attention layer, then token projection and mean-pooled projection."""
    if len(seq) == 0:
        raise ValueError("cannot encode an empty token sequence")
    x = graph.embed_lookup(graph.leaf(params.embedding), seq.ids)
    if positional:
        x = graph.add(x, graph.constant(sinusoidal_positions(len(seq), params.embedding.shape[1])))
    att = graph.self_attention(x, graph.leaf(params.wq), graph.leaf(params.wk),
                               graph.leaf(params.wv), graph.leaf(params.wo))
    if residual:
        att = graph.add(att, x)
    tok = graph.linear(att, graph.leaf(params.w_tok), graph.leaf(params.b_tok))
    pooled = graph.linear(graph.mean_pool(att), graph.leaf(params.w_pool), graph.leaf(params.b_pool))
    return EncodedText(pooled, tok, tuple(seq.surfaces), tuple(seq.ids))


def encode_features(graph: Graph, v, params: FeatureEncoderParams) -> int:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params.w1.shape[0],):
        raise ValueError(f"feature vector has length {v.shape}, expected {params.w1.shape[0]}")
    h = graph.tanh(graph.linear(graph.constant(v), graph.leaf(params.w1), graph.leaf(params.b1)))
    return graph.linear(h, graph.leaf(params.w2), graph.leaf(params.b2))


@dataclass
class TextEncoder:
    """Encoder parameters bundled with the vocabulary and layer options."""

    params: EncoderParams
    vocab: Vocabulary
    max_len: int = DEFAULT_MAX_LEN
    residual: bool = True
    positional: bool = False

    def sequence(self, text) -> TokenSequence:
        if isinstance(text, TokenSequence):
            return text
        return self.vocab.encode(text, self.max_len)

    def encode(self, graph: Graph, text) -> EncodedText:
        return encode_text(graph, self.sequence(text), self.params, self.residual, self.positional)
