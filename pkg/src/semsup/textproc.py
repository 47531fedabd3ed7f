"""Tokenization, vocabulary, lexical overlap and annotation text helpers."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
DEFAULT_MAX_LEN = 128

# words are runs of unicode word characters; every other non-space char is its own token
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(raw: str) -> list[str]:
    return _TOKEN_RE.findall(raw.lower())


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


class TokenSequence(NamedTuple):
    surfaces: tuple[str, ...]
    ids: tuple[int, ...]

    def __len__(self):
        return len(self.surfaces)


class Vocabulary:
    """Frozen token <-> id map.  Ids 0 and 1 are PAD and UNK."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos = [PAD_TOKEN, UNK_TOKEN]
        self._stoi: dict[str, int] = {}
        for tok in tokens:
            if tok not in self._stoi and tok not in (PAD_TOKEN, UNK_TOKEN):
                self._stoi[tok] = len(self._itos)
                self._itos.append(tok)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for text in texts:
            for tok in tokenize(text):
                seen.setdefault(tok, None)
        return cls(sorted(seen))

    def __len__(self):
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def encode(self, text_or_tokens, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
        toks = tokenize(text_or_tokens) if isinstance(text_or_tokens, str) else list(text_or_tokens)
        toks = toks[:max_len]
        return TokenSequence(tuple(toks), tuple(self.id(t) for t in toks))

    def to_json(self) -> list[str]:
        return self._itos[2:]

    @classmethod
    def from_json(cls, tokens: list[str]) -> "Vocabulary":
        return cls(tokens)


def shared_word_types(a: TokenSequence, b: TokenSequence) -> set[str]:
    """Surface strings present in both sequences, ignoring PAD/UNK."""
    left = {s for s, i in zip(a.surfaces, a.ids) if i > UNK}
    right = {s for s, i in zip(b.surfaces, b.ids) if i > UNK}
    return left & right


def normalize_term(term: str) -> str:
    return " ".join(term.lower().split())


@dataclass
class LexiconEntry:
    synonyms: set[str] = field(default_factory=set)
    hyponyms: set[str] = field(default_factory=set)
    hypernyms: list[str] = field(default_factory=list)
    definition: str | None = None


class Lexicon:
    def __init__(self, entries: dict[str, LexiconEntry]):
        self.entries = {}
        for name, entry in entries.items():
            key = normalize_term(name)
            syn = {normalize_term(s) for s in entry.synonyms} | {key}
            hyp = {normalize_term(h) for h in entry.hyponyms}
            self.entries[key] = LexiconEntry(syn, hyp, list(entry.hypernyms), entry.definition)

    def __contains__(self, name: str) -> bool:
        return normalize_term(name) in self.entries

    def __getitem__(self, name: str) -> LexiconEntry:
        try:
            return self.entries[normalize_term(name)]
        except KeyError:
            raise KeyError(f"class {name!r} not in lexicon") from None

    def blocked_terms(self, name: str) -> set[str]:
        entry = self[name]
        return {normalize_term(name)} | entry.synonyms | entry.hyponyms

    @classmethod
    def from_dict(cls, obj: dict) -> "Lexicon":
        entries = {}
        for name, body in obj.items():
            entries[name] = LexiconEntry(
                set(body.get("synonyms", [])),
                set(body.get("hyponyms", [])),
                list(body.get("hypernyms", [])),
                body.get("definition"),
            )
        return cls(entries)

    @classmethod
    def load(cls, path) -> "Lexicon":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def filter_annotations(detections: list[str], class_name: str, lexicon: Lexicon,
                       substring_filter: bool = False) -> list[str]:
    """Drop detections naming the class, a synonym or a hyponym.

    Matching is exact on normalized strings unless ``substring_filter`` is set,
    in which case a detection containing any blocked term is dropped too.
    """
    if class_name not in lexicon:
        raise KeyError(f"class {class_name!r} not in lexicon; refusing to pass annotations through unfiltered")
    blocked = lexicon.blocked_terms(class_name)
    kept = []
    for det in detections:
        norm = normalize_term(det)
        if norm in blocked:
            continue
        if substring_filter and any(b and b in norm for b in blocked):
            continue
        kept.append(det)
    return kept


ANNOTATION_TEMPLATE = "This photo contains:"


def render_annotation_text(attributes: list[str]) -> str:
    if not attributes:
        return ANNOTATION_TEMPLATE
    return f"{ANNOTATION_TEMPLATE} {', '.join(attributes)}"
