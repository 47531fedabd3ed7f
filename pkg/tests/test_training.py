import csv
import math

import numpy as np
import pytest

import oracles
from semsup.descstore import Description, DescriptionCatalog
from semsup.models import Instance, ModelConfig, SemSupModel
from semsup.tensorcore import Tensor
from semsup.textproc import Vocabulary
from semsup.training import (
    EarlyStopper,
    NumericalError,
    OptimizerState,
    TrainConfig,
    adamw_step,
    early_stop_update,
    train,
)


class TestAdamW:
    def test_frozen_scalar_oracle(self):
        # 40-digit mpmath evaluation of one step from theta=1, g=0.5
        p = Tensor([1.0], requires_grad=True)
        st = OptimizerState.zeros_like([p])
        adamw_step([p], [np.array([0.5])], st, 1e-3, (0.9, 0.999), 1e-8, 0.0)
        assert abs(p.data[0] - 0.99900000001999999960) <= 1e-15

    def test_matches_scalar_reference(self, rng):
        for _ in range(50):
            theta = rng.normal(size=4)
            grads = rng.normal(size=(7, 4))
            lr, wd = float(rng.uniform(1e-4, 1e-1)), float(rng.uniform(0, 0.1))
            p = Tensor(theta.copy(), requires_grad=True)
            st = OptimizerState.zeros_like([p])
            for g in grads:
                adamw_step([p], [g], st, lr, (0.9, 0.999), 1e-8, wd)
            ref = [oracles.adam_scalar(theta[i], grads[:, i], lr, 0.9, 0.999, 1e-8, wd) for i in range(4)]
            assert np.abs(p.data - ref).max() <= 1e-15
            assert st.step == 7

    def test_decoupled_decay_only(self):
        p = Tensor([2.0, -4.0], requires_grad=True)
        adamw_step([p], [np.zeros(2)], OptimizerState.zeros_like([p]), 0.1, weight_decay=0.01)
        assert p.data.tolist() == [2.0 * (1 - 0.001), -4.0 * (1 - 0.001)]

    def test_first_step_magnitude(self):
        for g in (1e-3, 0.5, 7.0):
            p = Tensor([0.0], requires_grad=True)
            adamw_step([p], [np.array([g])], OptimizerState.zeros_like([p]), 0.01)
            assert abs(p.data[0]) == pytest.approx(0.01 * g / (g + 1e-8), rel=1e-12)

    def test_shape_mismatch(self):
        p = Tensor([0.0, 1.0], requires_grad=True)
        with pytest.raises(ValueError):
            adamw_step([p], [np.zeros(3)], OptimizerState.zeros_like([p]), 0.1)

    def test_decay_contracts_norm(self, rng):
        p = Tensor(rng.normal(size=5), requires_grad=True)
        st = OptimizerState.zeros_like([p])
        norms = [np.linalg.norm(p.data)]
        for _ in range(20):
            adamw_step([p], [np.zeros(5)], st, 0.05, weight_decay=0.1)
            norms.append(np.linalg.norm(p.data))
        assert all(b < a for a, b in zip(norms, norms[1:]))


class TestEarlyStopping:
    def test_plateau(self):
        es = EarlyStopper(2)
        out = [early_stop_update(es, m, {"epoch": i + 1}) for i, m in enumerate([0.5, 0.6, 0.6, 0.6])]
        assert out == ["continue", "continue", "continue", "stop"]
        assert es.best_epoch == 2 and es.best_state == {"epoch": 2}

    def test_increasing_never_stops(self):
        es = EarlyStopper(1)
        assert all(es.update(m) == "continue" for m in np.linspace(0, 1, 30))

    def test_patience_zero(self):
        es = EarlyStopper(0)
        assert es.update(0.5) == "continue"
        assert es.update(0.4) == "stop"

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            EarlyStopper(3).update(float("nan"))


class TestTrainConfig:
    def test_both_budgets_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(n_descriptions=2, concat_k=2)

    def test_bad_betas(self):
        with pytest.raises(ValueError):
            TrainConfig(betas=(0.9, 1.0))

    def test_default_lr(self):
        assert TrainConfig().resolved_lr("text") == 2e-5
        assert TrainConfig().resolved_lr("features") == 1e-4

    def test_roundtrip(self):
        cfg = TrainConfig(n_descriptions=3, lr=0.01, seed=4)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="bogus"):
            TrainConfig.from_dict({"bogus": 1})


# --- end-to-end on tiny text tasks -----------------------------------------

WORDS_X = ["red", "apple", "cherry"]
WORDS_Y = ["blue", "sky", "ocean"]


def toy_data(n=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        cls, words = ("x", WORDS_X) if i % 2 == 0 else ("y", WORDS_Y)
        out.append(Instance(f"i{i}", [cls], " ".join(rng.choice(words, size=4))))
    return out


def toy_catalog(x_words=("fruit", "sweet", "tree"), y_words=("weather", "water", "wide")):
    descs = [Description("x", "nl", f"{w} thing {i}") for i, w in enumerate(x_words)]
    descs += [Description("y", "nl", f"{w} place {i}") for i, w in enumerate(y_words)]
    return DescriptionCatalog(descs)


def toy_model(kind="sup", seed=0, vocab_extra=()):
    vocab = Vocabulary.build([" ".join(WORDS_X + WORDS_Y), "fruit sweet tree weather water wide thing place 0 1 2",
                              " ".join(vocab_extra)])
    cfg = ModelConfig(kind=kind, d_emb=8, d_model=8, d_tok=4)
    return SemSupModel(cfg, vocab, ["x", "y"], seed=seed)


def test_separable_sup_converges():
    data = toy_data()
    # the two classes use disjoint words, so a bag-of-words linear rule separates them exactly
    assert not ({w for i in data if i.labels == ["x"] for w in i.text.split()}
                & {w for i in data if i.labels == ["y"] for w in i.text.split()})
    model = toy_model()
    _, hist = train(model, TrainConfig(lr=0.01, batch_size=4, max_epochs=30, patience=30), data, [])
    assert min(hist.losses()) < 0.1


def test_zero_epochs_returns_initial_state():
    model = toy_model()
    before = model.state()
    best, hist = train(model, TrainConfig(max_epochs=0), toy_data(), [])
    assert hist.records == []
    assert all(np.array_equal(before[k], best[k]) for k in before)


def test_equal_seeds_bitwise_identical():
    runs = []
    for _ in range(2):
        model = toy_model("semsup_bienc")
        _, hist = train(model, TrainConfig(lr=0.01, batch_size=4, max_epochs=3), toy_data(), toy_data(4, 1), toy_catalog())
        runs.append(([(r.train_loss, r.val_metric, r.is_best) for r in hist.records], model.state()))
    assert runs[0][0] == runs[1][0]
    assert all(runs[0][1][k].tobytes() == runs[1][1][k].tobytes() for k in runs[0][1])


def test_zero_lr_leaves_parameters():
    model = toy_model("semsup_bienc")
    before = model.state()
    train(model, TrainConfig(lr=0.0, weight_decay=0.0, batch_size=4, max_epochs=2), toy_data(), [], toy_catalog())
    assert all(before[k].tobytes() == v.tobytes() for k, v in model.state().items())


def test_hybrid_without_overlap_matches_bienc():
    states, hists = [], []
    for kind in ("semsup_hybrid", "semsup_bienc"):
        model = toy_model(kind, seed=3)
        _, hist = train(model, TrainConfig(lr=0.01, batch_size=4, max_epochs=3), toy_data(), toy_data(4, 1),
                        toy_catalog())
        states.append(model.state())
        hists.append([(r.train_loss, r.val_metric) for r in hist.records])
    assert hists[0] == hists[1]
    assert all(states[0][k].tobytes() == states[1][k].tobytes() for k in states[1])


def test_batch_shares_one_output_matrix(monkeypatch):
    model = toy_model("semsup_bienc")
    heads, seen = [], []
    orig_head, orig_logits = model.class_head, model.logits

    def class_head(*a, **kw):
        heads.append(orig_head(*a, **kw))
        return heads[-1]

    def logits(graph, inst, head):
        seen.append((len(heads), id(head)))
        return orig_logits(graph, inst, head)

    monkeypatch.setattr(model, "class_head", class_head)
    monkeypatch.setattr(model, "logits", logits)
    train(model, TrainConfig(lr=0.01, batch_size=4, max_epochs=1), toy_data(), [], toy_catalog())
    assert len(heads) == 3
    for batch_no, head_id in seen:
        assert head_id == id(heads[batch_no - 1])


def test_n_descriptions_exceeding_catalog():
    with pytest.raises(Exception, match="n_descriptions=5"):
        train(toy_model("semsup_bienc"), TrainConfig(n_descriptions=5, max_epochs=1), toy_data(), [], toy_catalog())


def test_non_finite_forward_aborts():
    model = toy_model()
    model.params["O"].data[0, 0] = np.nan
    with pytest.raises(NumericalError):
        train(model, TrainConfig(lr=0.01, max_epochs=1), toy_data(), [])


def test_multilabel_uses_lrap(tmp_path):
    data = toy_data()
    data[0] = Instance("both", ["x", "y"], "red sky")
    model = toy_model("semsup_bienc")
    _, hist = train(model, TrainConfig(task="multilabel", lr=0.01, batch_size=4, max_epochs=2), data, data[:4],
                    toy_catalog())
    assert all(0 <= r.val_metric <= 1 for r in hist.records)
    hist.write_csv(tmp_path / "h.csv")
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert sum(int(r["is_best"]) for r in rows) == 1
    assert math.isclose(float(rows[0]["train_loss"]), hist.records[0].train_loss, rel_tol=0, abs_tol=0)


@pytest.mark.parametrize("kind", ["devise", "gile", "bienc_names"])
def test_baselines_train(kind):
    model = toy_model(kind)
    _, hist = train(model, TrainConfig(lr=0.01, batch_size=4, max_epochs=2), toy_data(), [], toy_catalog())
    assert all(np.isfinite(hist.losses()))
