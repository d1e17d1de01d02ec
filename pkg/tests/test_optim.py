from __future__ import annotations

import numpy as np
import pytest

from hiersoftmax.data import Example, synth_hierarchical
from hiersoftmax.encoder import EmbeddingTable, build_vocab
from hiersoftmax.errors import ConfigError, EmptyDataset, ShapeMismatch, TooFewExamples, UnknownLabel
from hiersoftmax.optim import (
    AdamState,
    TrainConfig,
    adam_step,
    assign_folds,
    cross_validate,
    evaluate_model,
    make_model,
    select_config,
    train,
)
from hiersoftmax.seeding import stream
from hiersoftmax.taxonomy import build_from_edges

# 0 - 0.001 * 1 / (1 + 1e-8), evaluated with mpmath at 40 digits
ADAM_FIRST_STEP = -0.00099999999000000009999999900000001


def test_adam_zero_gradient_is_a_no_op():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(AdamState(), p, {"w": np.zeros(2)})
    assert p["w"].tolist() == [1.0, -2.0]


def test_adam_first_step_value():
    p = {"w": np.array([0.0])}
    _, s = adam_step(AdamState(), p, {"w": np.array([1.0])})
    assert s.t == 1
    assert p["w"][0] == pytest.approx(ADAM_FIRST_STEP, rel=1e-15)


def test_adam_two_steps_vs_doubled_lr():
    # with a constant gradient the bias-corrected steps are identical, so two steps equal one at 2*lr
    p1, p2 = {"w": np.array([0.0])}, {"w": np.array([0.0])}
    s1 = AdamState()
    adam_step(s1, p1, {"w": np.array([1.0])})
    adam_step(s1, p1, {"w": np.array([1.0])})
    adam_step(AdamState(lr=0.002), p2, {"w": np.array([1.0])})
    assert p1["w"][0] == pytest.approx(p2["w"][0], abs=1e-12)
    # with changing gradients the moment estimates make the update non-linear
    p3 = {"w": np.array([0.0])}
    s3 = AdamState()
    adam_step(s3, p3, {"w": np.array([1.0])})
    adam_step(s3, p3, {"w": np.array([0.1])})
    assert abs(p3["w"][0] - p2["w"][0]) > 1e-5


def test_adam_shape_checks():
    s = AdamState()
    p = {"w": np.zeros(2)}
    with pytest.raises(ShapeMismatch):
        adam_step(s, p, {"w": np.zeros(3)})
    with pytest.raises(ShapeMismatch):
        adam_step(s, p, {"v": np.zeros(2)})
    adam_step(s, p, {"w": np.ones(2)})
    assert s.m["w"].shape == s.v["w"].shape == p["w"].shape


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(k_folds=1)
    assert len(TrainConfig().grid()) == 4
    assert len(TrainConfig(encoder="mean").grid()) == 1


def toy():
    tree = build_from_edges([("R", "pos"), ("R", "neg")])
    train_set = [Example(("good", "great"), "pos"), Example(("great",), "pos"), Example(("good",), "pos"),
                 Example(("bad", "awful"), "neg"), Example(("awful",), "neg"), Example(("bad",), "neg")]
    vocab = build_vocab(ex.tokens for ex in train_set)
    table = EmbeddingTable.random(vocab, 8, np.random.default_rng(0))
    return tree, train_set, table


def test_zero_epochs_returns_initial_parameters():
    tree, data, table = toy()
    cfg = TrainConfig(encoder="mean", max_epochs=0, dropout=0.0)
    model = make_model(cfg, tree, table)
    before = model.output.weights.copy()
    res = train(model, data, cfg, validation=data)
    assert res.history == [] and np.array_equal(res.model.output.weights, before)


def test_separable_toy_problem():
    tree, data, table = toy()
    cfg = TrainConfig(encoder="mean", dropout=0.0, lr=0.05, batch_size=2, max_epochs=30, patience=30)
    res = train(make_model(cfg, tree, table), data, cfg, validation=data)
    losses = [r.train_loss for r in res.history[:5]]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert evaluate_model(res.model, data).micro_accuracy == 100.0


def test_training_is_reproducible_and_restores_best():
    ds = synth_hierarchical(2, 2, 20, 5, 0.3, seed=0)
    table = EmbeddingTable.random(ds.vocab, 6, stream(0, "embeddings"))
    cfg = TrainConfig(encoder="lstm", h_dim=4, dropout=0.5, max_epochs=6, patience=2)
    a = train(make_model(cfg, ds.taxonomy, table), ds.train, cfg)
    b = train(make_model(cfg, ds.taxonomy, table), ds.train, cfg)
    assert [r.to_dict(timing=False) for r in a.history] == [r.to_dict(timing=False) for r in b.history]
    assert np.array_equal(a.model.output.weights, b.model.output.weights)
    # the returned parameters score the best validation macro-F1 seen during training
    folds = assign_folds([ex.label for ex in ds.train], cfg.k_folds, stream(cfg.seed, "holdout"))
    val = [ex for ex, f in zip(ds.train, folds) if f == 0]
    assert evaluate_model(a.model, val).macro_f1 == pytest.approx(a.best_val_macro_f1)
    assert a.best_epoch == 1 + int(np.argmax([r.val_macro_f1 for r in a.history]))


def test_train_errors():
    tree, data, table = toy()
    cfg = TrainConfig(encoder="mean")
    with pytest.raises(EmptyDataset):
        train(make_model(cfg, tree, table), [], cfg)
    with pytest.raises(UnknownLabel):
        train(make_model(cfg, tree, table), data + [Example(("x",), "meh")], cfg, validation=data)


def test_fold_partition():
    folds = assign_folds(list("aabbccdd"), 4, np.random.default_rng(0))
    assert sorted(np.bincount(folds).tolist()) == [2, 2, 2, 2]
    labels = list(np.random.default_rng(1).choice(list("abcde"), size=103))
    folds = assign_folds(labels, 4, np.random.default_rng(2))
    counts = np.bincount(folds)
    assert counts.sum() == 103 and counts.max() - counts.min() <= 1
    with pytest.raises(TooFewExamples):
        assign_folds(["a", "b"], 4, np.random.default_rng(0))


def test_select_config_tie_breaks():
    grid = TrainConfig(h_dims=(100, 150)).grid()
    assert grid[select_config(grid, [0.5, 0.5, 0.5, 0.5])].h_dim == 100
    assert not grid[select_config(grid, [0.5, 0.5, 0.5, 0.5])].bidirectional
    assert grid[select_config(grid, [0.1, 0.2, 0.9, 0.9])] == grid[2]


def test_cross_validation_log_reproduces_selection():
    ds = synth_hierarchical(2, 2, 12, 5, 0.2, seed=1)
    table = EmbeddingTable.random(ds.vocab, 6, stream(1, "embeddings"))
    base = TrainConfig(encoder="lstm", h_dims=(3, 5), bidirectional_options=(False,), max_epochs=3, patience=1)
    res = cross_validate(ds.train, ds.taxonomy, table, base.grid())
    means = [np.mean([r["macro_f1"] for r in res.folds if r["config"] == c]) for c in range(2)]
    assert means == pytest.approx(res.mean_macro_f1)
    assert res.selected is res.grid[select_config(res.grid, means)]
    assert sum(r["val_size"] for r in res.folds if r["config"] == 0) == len(ds.train)
    single = cross_validate(ds.train, ds.taxonomy, table, [base])
    assert single.selected is base
