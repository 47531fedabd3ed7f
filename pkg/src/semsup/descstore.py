"""Class description catalogs: loading, sampling, JSON flattening/augmentation, splits."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .textproc import tokenize

log = logging.getLogger(__name__)

NL, JSON = "nl", "json"
SPLITS = ("train", "val", "test")

JsonDescription = list[tuple[str, list[str]]]


class CatalogError(ValueError):
    pass


# --- JSON descriptions -----------------------------------------------------

def flatten_json(j: JsonDescription) -> str:
    parts = []
    for key, values in j:
        parts.append(f"{key} : {' , '.join(values)}" if values else f"{key} :")
    return " ; ".join(parts)


def parse_flat_json(text: str) -> JsonDescription:
    """Inverse of :func:`flatten_json` on its canonical output."""
    out: JsonDescription = []
    if not text:
        return out
    for chunk in text.split(" ; "):
        if chunk.endswith(" :") and " : " not in chunk:
            out.append((chunk[:-2], []))
            continue
        key, _, rest = chunk.partition(" : ")
        out.append((key, rest.split(" , ")))
    return out


def json_from_attrs(attrs: dict | Sequence) -> JsonDescription:
    items = attrs.items() if isinstance(attrs, dict) else attrs
    out, seen = [], set()
    for key, values in items:
        if key in seen:
            raise CatalogError(f"duplicate JSON description key {key!r}")
        seen.add(key)
        if isinstance(values, str):
            values = [values]
        out.append((str(key), [str(v) for v in values]))
    return out


def augment_json(j: JsonDescription, p_drop: float, n_corrupt: int, n_perm: int,
                 rng: np.random.Generator) -> list[JsonDescription]:
    """Value dropout followed by key-order permutations.

    Each of the ``n_corrupt`` variants keeps every value independently with
    probability ``1 - p_drop`` and loses keys left without values; the first
    of its ``n_perm`` orderings is the stored key order, the rest are random
    shuffles.  Variants that lose every key are returned empty; callers that
    need non-empty text drop them.
    """
    if not 0 <= p_drop < 1:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    if n_corrupt < 1 or n_perm < 1:
        raise ValueError("n_corrupt and n_perm must be >= 1")
    if not any(values for _, values in j):
        raise ValueError("every value list is empty; augmentation would only produce empty descriptions")
    out = []
    for _ in range(n_corrupt):
        variant = []
        for key, values in j:
            keep = [v for v, r in zip(values, rng.random(len(values))) if r >= p_drop]
            if keep:
                variant.append((key, keep))
        for p in range(n_perm):
            if p == 0 or len(variant) < 2:
                out.append(list(variant))
            else:
                order = rng.permutation(len(variant))
                out.append([variant[i] for i in order])
    return out


# --- descriptions and catalogs ---------------------------------------------

@dataclass(frozen=True)
class Description:
    class_id: str
    format: str
    raw: str
    split: str = "train"

    def __post_init__(self):
        if not self.raw:
            raise CatalogError(f"empty description for class {self.class_id!r}")
        if self.format not in (NL, JSON):
            raise CatalogError(f"unknown description format {self.format!r}")

    @classmethod
    def from_json(cls, class_id: str, j: JsonDescription, split: str = "train") -> "Description":
        return cls(class_id, JSON, json.dumps(dict(j), ensure_ascii=False), split)

    @cached_property
    def attrs(self) -> JsonDescription:
        if self.format != JSON:
            raise CatalogError("natural-language description has no attributes")
        return json_from_attrs(json.loads(self.raw))

    @cached_property
    def text(self) -> str:
        return flatten_json(self.attrs) if self.format == JSON else self.raw

    @cached_property
    def tokens(self) -> list[str]:
        return tokenize(self.text)

    @cached_property
    def hash(self) -> str:
        h = hashlib.sha1(f"{self.class_id}\x00{self.format}\x00{self.raw}".encode("utf-8"))
        return h.hexdigest()


def sample_description(descriptions: Sequence[Description], rng: np.random.Generator,
                       class_id: str | None = None) -> Description:
    if not descriptions:
        raise CatalogError(f"no descriptions to sample for class {class_id!r}")
    return descriptions[int(rng.integers(len(descriptions)))]


def concat_descriptions(descriptions: Sequence[Description], k: int) -> Description:
    if k < 1 or k > len(descriptions):
        cls = descriptions[0].class_id if descriptions else None
        raise CatalogError(f"concat of {k} descriptions requested but class {cls!r} has {len(descriptions)}")
    head = descriptions[:k]
    return Description(head[0].class_id, NL, " ".join(d.text for d in head), head[0].split)


class DescriptionCatalog:
    """Per-class description lists, each ordered by content hash."""

    def __init__(self, descriptions: Iterable[Description] = ()):
        by_class: dict[str, list[Description]] = {}
        for d in descriptions:
            by_class.setdefault(d.class_id, []).append(d)
        self._by_class = {c: sorted(ds, key=lambda d: d.hash) for c, ds in sorted(by_class.items())}

    @property
    def classes(self) -> list[str]:
        return list(self._by_class)

    def __contains__(self, class_id) -> bool:
        return bool(self._by_class.get(class_id))

    def __getitem__(self, class_id: str) -> list[Description]:
        try:
            return self._by_class[class_id]
        except KeyError:
            raise CatalogError(f"class {class_id!r} has no descriptions") from None

    def __iter__(self):
        for ds in self._by_class.values():
            yield from ds

    def __len__(self):
        return sum(len(ds) for ds in self._by_class.values())

    def hashes(self) -> set[str]:
        return {d.hash for d in self}

    def subset(self, classes: Iterable[str]) -> "DescriptionCatalog":
        return DescriptionCatalog(d for c in classes for d in self[c])

    def truncated(self, n: int) -> "DescriptionCatalog":
        """First ``n`` descriptions of every class, in catalog order."""
        short = [c for c, ds in self._by_class.items() if len(ds) < n]
        if short:
            raise CatalogError(f"n_descriptions={n} exceeds the catalog for classes {short}")
        return DescriptionCatalog(d for ds in self._by_class.values() for d in ds[:n])

    def concatenated(self, k: int) -> "DescriptionCatalog":
        return DescriptionCatalog(concat_descriptions(ds, k) for ds in self._by_class.values())

    def with_split(self, split: str) -> "DescriptionCatalog":
        return DescriptionCatalog(replace(d, split=split) for d in self)

    # io -------------------------------------------------------------------
    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "DescriptionCatalog":
        out = []
        for rec in records:
            fmt = rec.get("format", NL)
            split = rec.get("split", "train")
            if fmt == JSON:
                attrs = rec.get("attrs")
                if attrs is None:
                    attrs = json.loads(rec["text"])
                out.append(Description.from_json(rec["class"], json_from_attrs(attrs), split))
            else:
                out.append(Description(rec["class"], fmt, rec["text"], split))
        return cls(out)

    @classmethod
    def load(cls, path) -> "DescriptionCatalog":
        with open(path, encoding="utf-8") as fh:
            return cls.from_records(json.loads(line) for line in fh if line.strip())

    def records(self) -> list[dict]:
        out = []
        for d in self:
            rec = {"class": d.class_id, "format": d.format}
            if d.format == JSON:
                rec["attrs"] = dict(d.attrs)
            else:
                rec["text"] = d.raw
            out.append(rec)
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    exact = [n * r for r in ratios]
    sizes = [max(1, int(np.floor(x + 0.5))) for x in exact]
    while sum(sizes) > n:
        i = max(range(len(sizes)), key=lambda i: (sizes[i] - exact[i], sizes[i]))
        if sizes[i] == 1:
            i = max(range(len(sizes)), key=lambda i: sizes[i])
        sizes[i] -= 1
    while sum(sizes) < n:
        i = max(range(len(sizes)), key=lambda i: exact[i] - sizes[i])
        sizes[i] += 1
    return sizes


def split_descriptions(catalog: DescriptionCatalog, ratios=(0.6, 0.2, 0.2),
                       rng: np.random.Generator | None = None):
    """Per-class seeded partition into train/val/test catalogs."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    short = [c for c in catalog.classes if len(catalog[c]) < 3]
    if short:
        raise CatalogError(f"classes with fewer than 3 descriptions cannot be split: {short}")
    rng = rng if rng is not None else np.random.default_rng(0)
    parts: list[list[Description]] = [[], [], []]
    for c in catalog.classes:
        ds = catalog[c]
        order = rng.permutation(len(ds))
        sizes = _split_sizes(len(ds), ratios)
        start = 0
        for s, size in enumerate(sizes):
            parts[s].extend(replace(ds[i], split=SPLITS[s]) for i in order[start:start + size])
            start += size
    return tuple(DescriptionCatalog(p) for p in parts)


def write_split_manifest(path, splits: dict[str, DescriptionCatalog]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({name: sorted(cat.hashes()) for name, cat in splits.items()}, fh, indent=2)


def apply_split_manifest(catalog: DescriptionCatalog, path) -> dict[str, DescriptionCatalog]:
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    by_hash = {d.hash: d for d in catalog}
    out = {}
    for name, hashes in manifest.items():
        missing = [h for h in hashes if h not in by_hash]
        if missing:
            raise CatalogError(f"split {name!r} lists {len(missing)} unknown description hashes")
        out[name] = DescriptionCatalog(replace(by_hash[h], split=name) for h in hashes)
    return out
