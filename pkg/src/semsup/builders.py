"""File-level builders: JSON class descriptions from a lexicon, filtered annotation files."""
from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .data import read_jsonl
from .descstore import Description, DescriptionCatalog
from .textproc import Lexicon, filter_annotations, render_annotation_text

TOP_RELATED = 20
RELATED_PER_DESCRIPTION = 6


def make_json_descriptions(lexicon: Lexicon, classes: Sequence[str], related_terms: dict[str, list[str]],
                           k: int, rng: np.random.Generator) -> DescriptionCatalog:
    """``k`` JSON descriptions per class with definition, hypernyms, hyponyms and related terms.

    Each description samples up to six terms without replacement from the
    twenty highest-ranked related terms of its class.
    """
    missing = [c for c in classes if c not in lexicon or not lexicon[c].definition]
    if missing:
        raise KeyError(f"lexicon lacks a definition entry for classes {missing}")
    no_terms = [c for c in classes if not related_terms.get(c)]
    if no_terms:
        raise KeyError(f"no related terms for classes {no_terms}")
    if k < 1:
        raise ValueError("k must be >= 1")
    descs = []
    for c in classes:
        entry = lexicon[c]
        top = list(related_terms[c])[:TOP_RELATED]
        for _ in range(k):
            n = min(RELATED_PER_DESCRIPTION, len(top))
            picked = [top[int(i)] for i in sorted(rng.choice(len(top), size=n, replace=False))]
            attrs = [
                ("definition", [entry.definition]),
                ("hypernyms", list(entry.hypernyms)),
                ("hyponyms", sorted(entry.hyponyms)),
                ("related", picked),
            ]
            descs.append(Description.from_json(c, attrs))
    return DescriptionCatalog(descs)


def filter_annotation_file(annotations_path, instances_path, lexicon: Lexicon, out_path,
                           substring_filter: bool = False) -> int:
    """Filter every instance's detections against its own labels and render the annotation text."""
    labels = {str(r["id"]): r["labels"] for r in read_jsonl(instances_path)}
    n = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in read_jsonl(annotations_path):
            iid = str(rec["id"])
            if iid not in labels:
                raise KeyError(f"annotation for unknown instance {iid!r}")
            kept = list(rec["detections"])
            for lab in labels[iid]:
                kept = filter_annotations(kept, lab, lexicon, substring_filter)
            fh.write(json.dumps({"id": iid, "detections": kept, "text": render_annotation_text(kept)}) + "\n")
            n += 1
    return n
