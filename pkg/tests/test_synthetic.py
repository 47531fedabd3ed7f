import json
import math
from pathlib import Path

import numpy as np
import pytest

from semsup.builders import filter_annotation_file, make_json_descriptions
from semsup.data import ManifestError, load_manifest
from semsup.descstore import DescriptionCatalog, parse_flat_json
from semsup.synthetic import SyntheticTask, SyntheticTaskSpec, generate
from semsup.textproc import Lexicon

SMALL = dict(n_classes=4, n_superclasses=2, n_unseen=1, vocab_size=120, docs_per_class=10,
             descriptions_per_class=5, signature_size=10)


def test_generation_is_byte_identical(tmp_path):
    spec = SyntheticTaskSpec(**SMALL)
    a, b = generate(spec, tmp_path / "a").parent, generate(spec, tmp_path / "b").parent
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_seed_changes_output(tmp_path):
    a = generate(SyntheticTaskSpec(**SMALL), tmp_path / "a").parent
    b = generate(SyntheticTaskSpec(**{**SMALL, "seed": 1}), tmp_path / "b").parent
    assert (a / "instances_train.jsonl").read_bytes() != (b / "instances_train.jsonl").read_bytes()


def test_two_children_per_superclass():
    task = SyntheticTask(SyntheticTaskSpec(n_classes=8, n_superclasses=4))
    kids = {}
    for c, s in task.superclass_map.items():
        kids.setdefault(s, []).append(c)
    assert sorted(kids) == task.superclasses and all(len(v) == 2 for v in kids.values())


@pytest.mark.parametrize("bad", [dict(vocab_size=50), dict(n_classes=7), dict(cue_strength=1.5),
                                 dict(n_unseen=8), dict(descriptions_per_class=2)])
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        SyntheticTaskSpec(**bad)


def test_vocab_error_names_requirement():
    with pytest.raises(ValueError, match="176 words"):
        SyntheticTaskSpec(vocab_size=100)


def test_zero_cue_strength_hits_background_rate():
    spec = SyntheticTaskSpec(cue_strength=0.0, desc_tokens=10)
    task = SyntheticTask(spec)
    rng = np.random.default_rng(5)
    c = task.classes[0]
    cues = set(task.cue_words(c))
    draws = [w for _ in range(4000) for w in task.description(c, rng)]
    hits = sum(w in cues for w in draws)
    p = task.background_rate(c)
    n = len(draws)
    assert p == len(cues) / 200
    assert abs(hits - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_full_cue_strength_stays_in_cues():
    task = SyntheticTask(SyntheticTaskSpec(cue_strength=1.0))
    rng = np.random.default_rng(0)
    c = task.classes[3]
    assert set(task.description(c, rng)) <= set(task.cue_words(c))


def test_generated_manifest_loads(tmp_path):
    ds = load_manifest(generate(SyntheticTaskSpec(**SMALL), tmp_path))
    assert ds.train_classes == ["c00", "c01", "c02"]
    assert sorted(ds.scenarios) == ["S0", "S1", "S2", "S3"]
    assert ds.scenarios["S2"].classes == ["c03"]
    # superclass s1 has one training child, so it is absent from S3
    assert ds.scenarios["S3"].classes == ["s0"]
    assert len(ds.instances["train"]) == 3 * 6 and len(ds.instances["test"]) == 4 * 2


def test_manifest_rejects_unknown_label(tmp_path):
    root = generate(SyntheticTaskSpec(**SMALL), tmp_path).parent
    path = root / "instances_train.jsonl"
    lines = path.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["labels"] = ["nope"]
    path.write_text("\n".join([json.dumps(rec)] + lines[1:]) + "\n")
    with pytest.raises(ManifestError, match="nope"):
        load_manifest(root / "manifest.json")


def test_multilabel_and_feature_modes(tmp_path):
    ds = load_manifest(generate(SyntheticTaskSpec(**SMALL, task="multilabel"), tmp_path / "ml"))
    assert any(len(i.labels) > 1 for i in ds.instances["train"])
    ds = load_manifest(generate(SyntheticTaskSpec(**SMALL, modality="features", feature_dim=6), tmp_path / "ft"))
    inst = ds.instances["train"][0]
    assert len(inst.features) == 6 and len(inst.annotations) == 5


# --- JSON description builder ---------------------------------------------------

SAMPLE = Path(__file__).resolve().parents[1] / "configs" / "sample"


def test_make_json_descriptions(tmp_path):
    lex = Lexicon.load(f"{SAMPLE}/lexicon.json")
    related = json.load(open(f"{SAMPLE}/related_terms.json"))
    cat = make_json_descriptions(lex, ["lion", "sports", "tiger"], related, 5, np.random.default_rng(0))
    for c in ("lion", "sports", "tiger"):
        assert len(cat[c]) == 5
    # sports has three related terms; every description takes all of them
    assert all(sorted(dict(d.attrs)["related"]) == sorted(related["sports"]) for d in cat["sports"])
    assert all(len(dict(d.attrs)["related"]) == 6 for d in cat["tiger"])
    assert [k for k, _ in cat["lion"][0].attrs] == ["definition", "hypernyms", "hyponyms", "related"]
    cat.save(tmp_path / "j.jsonl")
    back = DescriptionCatalog.load(tmp_path / "j.jsonl")
    for d in back:
        assert parse_flat_json(d.text) == d.attrs


def test_make_json_descriptions_missing_class():
    lex = Lexicon.load(f"{SAMPLE}/lexicon.json")
    with pytest.raises(KeyError, match="zebra"):
        make_json_descriptions(lex, ["lion", "zebra"], {"lion": ["a"], "zebra": ["b"]}, 2, np.random.default_rng(0))


def test_top_twenty_related_only():
    lex = Lexicon.load(f"{SAMPLE}/lexicon.json")
    terms = [f"t{i}" for i in range(40)]
    cat = make_json_descriptions(lex, ["lion"], {"lion": terms}, 50, np.random.default_rng(1))
    used = {t for d in cat for t in dict(d.attrs)["related"]}
    assert used <= set(terms[:20]) and len(used) > 15


def test_filter_annotation_file(tmp_path):
    n = filter_annotation_file(f"{SAMPLE}/annotations.jsonl", f"{SAMPLE}/instances.jsonl",
                               Lexicon.load(f"{SAMPLE}/lexicon.json"), tmp_path / "out.jsonl")
    rows = [json.loads(line) for line in open(tmp_path / "out.jsonl")]
    assert n == len(rows) > 0
    assert all(r["text"].startswith("This photo contains:") for r in rows)
