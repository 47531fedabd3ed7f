import numpy as np
import pytest

from semsup.encoders import EncoderParams, TextEncoder
from semsup.textproc import Vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_vocab():
    words = "a b c d e f g h competitive physical activity game michael jordan was sports".split()
    return Vocabulary(words)


def make_text_encoder(vocab, seed=0, d_emb=6, d_model=5, d_tok=4, **kw):
    params = EncoderParams.init(np.random.default_rng(seed), len(vocab), d_emb, d_model, d_tok)
    return TextEncoder(params, vocab, **kw)


@pytest.fixture
def encoder_factory(small_vocab):
    def factory(seed=0, **kw):
        return make_text_encoder(small_vocab, seed, **kw)
    return factory
