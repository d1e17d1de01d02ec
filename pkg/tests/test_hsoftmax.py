from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import FlatSoftmax, path_product_probs, random_params

from hiersoftmax import hsoftmax as hs
from hiersoftmax.errors import DimensionMismatch, InvalidStep, ShapeMismatch
from hiersoftmax.taxonomy import build_from_edges, bundled_taxonomy, flat_view, random_tree

# exp(z) / sum(exp(z)) for z = [1, 2, 3], evaluated with mpmath at 30 digits and rounded
SOFTMAX_123 = [0.09003057, 0.24472847, 0.66524096]


def test_uniform_conditionals_under_zero_weights():
    t = build_from_edges([("R", c) for c in "abcd"])
    params = hs.HierSoftmaxParams.zeros(t, 3)
    np.testing.assert_allclose(hs.conditional_probs(params, t.root, np.ones(3)), [0.25] * 4)


def test_single_child_has_probability_one():
    t = build_from_edges([("R", "a"), ("R", "b"), ("a", "only")])
    params = random_params(t, 2, np.random.default_rng(0), scale=5.0)
    assert hs.conditional_probs(params, t.node("a"), [0.3, -2.0]).tolist() == [1.0]


def test_softmax_of_known_logits():
    t = build_from_edges([("R", "a"), ("R", "b"), ("R", "c")])
    params = hs.HierSoftmaxParams(t, 1, np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]))
    np.testing.assert_allclose(hs.conditional_probs(params, t.root, [1.0]), SOFTMAX_123, atol=5e-9)


def test_product_of_uniforms(two_by_two):
    params = hs.HierSoftmaxParams.zeros(two_by_two, 4)
    lp = hs.leaf_log_probs(params, two_by_two, np.zeros(4))
    assert lp[0] == pytest.approx(math.log(0.25), abs=1e-12)
    # -log(1/2 * 1/2)
    assert hs.loss(params, two_by_two, np.ones(4), "A1") == pytest.approx(1.3862944, abs=1e-7)


def test_leaf_probs_match_path_product_oracle(fig1_tree):
    rng = np.random.default_rng(3)
    for _ in range(20):
        params = random_params(fig1_tree, 4, rng, scale=1.0)
        h = rng.normal(size=4)
        want = path_product_probs(fig1_tree, params.matrices(), h)
        got = np.exp(hs.leaf_log_probs(params, fig1_tree, h))
        np.testing.assert_allclose(got, want, rtol=1e-12)
        for k, leaf in enumerate(fig1_tree.leaves):
            assert hs.loss(params, fig1_tree, h, leaf) == pytest.approx(-math.log(want[k]), rel=1e-12)
        assert hs.predict(params, fig1_tree, h) == fig1_tree.leaves[int(np.argmax(want))]


def test_random_trees_match_path_product_oracle():
    rng = np.random.default_rng(4)
    for _ in range(30):
        t = random_tree(rng, max_depth=4, max_fanout=5)
        params = random_params(t, 3, rng)
        h = rng.normal(size=3)
        want = path_product_probs(t, params.matrices(), h)
        np.testing.assert_allclose(np.exp(hs.leaf_log_probs(params, t, h)), want, rtol=1e-10)


def test_loss_vanishes_with_margin():
    t = build_from_edges([("R", "a"), ("R", "b")])
    losses = []
    for margin in [0.0, 1.0, 5.0, 20.0, 50.0]:
        params = hs.HierSoftmaxParams(t, 1, np.array([[margin, 0.0], [0.0, 0.0]]))
        losses.append(hs.loss(params, t, [1.0], "a"))
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-20


def test_off_path_parents_have_no_gradient(two_by_two):
    rng = np.random.default_rng(5)
    params = random_params(two_by_two, 3, rng)
    h = rng.normal(size=3)
    g = hs.grad_weights(params, two_by_two, h, "A1")
    assert set(g) == {two_by_two.root, two_by_two.node("A")}
    # perturbing the off-path parent B leaves the loss unchanged
    before = hs.loss(params, two_by_two, h, "A1")
    params.matrix(two_by_two.node("B"))[...] += rng.normal(size=(2, 4))
    assert hs.loss(params, two_by_two, h, "A1") == before


def test_perfect_prediction_has_zero_weight_gradient(two_by_two):
    W = np.zeros((6, 2))
    lay = hs.layout_for(two_by_two)
    for p in two_by_two.parents:
        W[lay.offsets[p][0], 1] = 1000.0  # first child wins by a huge margin
    params = hs.HierSoftmaxParams(two_by_two, 1, W)
    for g in hs.grad_weights(params, two_by_two, [0.7], "A1").values():
        assert not g.any()
    rep = hs.gradient_check(params, two_by_two, [0.7], "A1")
    assert rep.passed and rep.max_rel_error < 1e-8


def test_hidden_gradient_flat_case_and_zero_weights():
    rng = np.random.default_rng(6)
    t = build_from_edges([("R", c) for c in "abcde"])
    W = rng.normal(size=(5, 4))
    params = hs.HierSoftmaxParams(t, 3, W)
    h = rng.normal(size=3)
    np.testing.assert_allclose(hs.grad_hidden(params, t, h, "c"), FlatSoftmax(W).grad_h(h, 2), atol=1e-14)
    assert not hs.grad_hidden(hs.HierSoftmaxParams.zeros(t, 3), t, h, "a").any()


def test_hidden_gradient_aggregates_every_path_parent(two_by_two):
    # the root is almost certain of A, the deep node A is unsure: both still feed d loss / d h
    params = hs.HierSoftmaxParams.zeros(two_by_two, 2)
    params.matrix(two_by_two.root)[0] = [8.0, 0.0, 0.0]
    params.matrix(two_by_two.node("A"))[:, :2] = [[1.0, 0.0], [0.0, 1.0]]
    h = np.array([1.0, 0.5])
    gh = hs.grad_hidden(params, two_by_two, h, "A1")
    deep = hs.conditional_probs(params, two_by_two.node("A"), h) - [1, 0]
    root = hs.conditional_probs(params, two_by_two.root, h) - [1, 0]
    want = deep @ params.matrix(two_by_two.node("A"))[:, :2] + root @ params.matrix(two_by_two.root)[:, :2]
    np.testing.assert_allclose(gh, want, rtol=1e-13)
    assert np.abs(gh).max() > 0.1


def test_predict_tie_break_and_flat_equivalence():
    t = bundled_taxonomy("trec")
    params = hs.HierSoftmaxParams.zeros(flat_view(t), 4)
    assert hs.predict(params, None, np.ones(4)) == params.tree.leaves[0]
    rng = np.random.default_rng(7)
    f = flat_view(t)
    for _ in range(20):
        W = rng.normal(size=(50, 5))
        h = rng.normal(size=4)
        assert hs.predict(hs.HierSoftmaxParams(f, 4, W), f, h) == f.leaves[FlatSoftmax(W).predict(h)]


def test_parameter_counts():
    trec = bundled_taxonomy("trec")
    hier = hs.num_parameters(hs.HierSoftmaxParams.zeros(trec, 150))
    flat = hs.num_parameters(hs.HierSoftmaxParams.zeros(flat_view(trec), 150))
    # direct enumeration: rows x columns of each parent matrix
    assert flat == sum(m.size for m in hs.HierSoftmaxParams.zeros(flat_view(trec), 150).matrices().values())
    assert (flat, hier, hier - flat) == (7550, 8456, 906)
    t = build_from_edges([("R", "a"), ("R", "b")])
    assert hs.num_parameters(hs.HierSoftmaxParams.zeros(t, 9)) == hs.num_parameters(
        hs.HierSoftmaxParams.zeros(flat_view(t), 9))


def test_gradient_check_on_small_instances():
    rng = np.random.default_rng(8)
    for _ in range(20):
        t = random_tree(rng, max_depth=2, max_fanout=3, max_nodes=8)
        if t.num_classes > 6:
            continue
        d = int(rng.integers(1, 6))
        params = random_params(t, d, rng)
        rep = hs.gradient_check(params, t, rng.normal(size=d), t.leaves[0])
        assert rep.passed, rep.max_rel_error


def test_gradient_check_detects_a_sign_flip(fig1_tree):
    params = random_params(fig1_tree, 3, np.random.default_rng(9))
    assert not hs.gradient_check(params, fig1_tree, np.ones(3), "1.2", flip_sign=True).passed


def test_gradient_check_rejects_bad_step(fig1_tree):
    params = hs.HierSoftmaxParams.zeros(fig1_tree, 2)
    with pytest.raises(InvalidStep):
        hs.gradient_check(params, fig1_tree, np.ones(2), "1.1", step=0.0)


def test_relative_error_definition():
    assert hs.relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)
    assert hs.relative_error(1e-10, 3e-10) == pytest.approx(2e-10)


def test_batch_matches_per_example(fig1_tree):
    rng = np.random.default_rng(10)
    params = random_params(fig1_tree, 3, rng)
    H = rng.normal(size=(6, 3))
    targets = rng.integers(0, 3, size=6)
    losses, dW, dH = hs.batch_loss_and_grads(params, H, targets)
    dW_sum = np.zeros_like(params.weights)
    for i, (h, k) in enumerate(zip(H, targets)):
        leaf = fig1_tree.leaves[k]
        assert losses[i] == pytest.approx(hs.loss(params, None, h, leaf), rel=1e-13)
        np.testing.assert_allclose(dH[i], hs.grad_hidden(params, None, h, leaf), rtol=1e-12, atol=1e-15)
        for p, g in hs.grad_weights(params, None, h, leaf).items():
            a, b = params.layout.offsets[p]
            dW_sum[a:b] += g
    np.testing.assert_allclose(dW, dW_sum, rtol=1e-12, atol=1e-15)


def test_dimension_and_shape_errors(fig1_tree):
    params = hs.HierSoftmaxParams.zeros(fig1_tree, 2)
    with pytest.raises(DimensionMismatch):
        hs.loss(params, None, np.ones(3), "1.1")
    with pytest.raises(ShapeMismatch):
        hs.HierSoftmaxParams(fig1_tree, 2, np.zeros((4, 3)))


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    t = random_tree(rng, max_depth=3)
    params = random_params(t, 5, rng)
    hs.save_params(params, tmp_path / "p.npz")
    back = hs.load_params(tmp_path / "p.npz")
    assert back.tree == t and back.h_dim_in == 5
    assert np.array_equal(back.weights, params.weights)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.integers(1, 6))
def test_normalization_property(seed, d):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, max_depth=4, max_fanout=6)
    params = random_params(t, d, rng, scale=2.0)
    total = np.exp(hs.leaf_log_probs(params, t, rng.normal(size=d))).sum()
    assert abs(total - 1.0) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), C=st.integers(2, 12), d=st.integers(1, 6))
def test_flat_equivalence_property(seed, C, d):
    rng = np.random.default_rng(seed)
    t = build_from_edges([("R", f"c{k}") for k in range(C)])
    W = rng.normal(size=(C, d + 1))
    ref = FlatSoftmax(W)
    params = hs.HierSoftmaxParams(t, d, W)
    h = rng.normal(size=d)
    k = int(rng.integers(C))
    assert abs(hs.loss(params, t, h, k + 1) - ref.loss(h, k)) <= 1e-12
    np.testing.assert_allclose(hs.grad_weights(params, t, h, k + 1)[t.root], ref.grad_W(h, k), rtol=0, atol=1e-12)
    np.testing.assert_allclose(hs.grad_hidden(params, t, h, k + 1), ref.grad_h(h, k), rtol=0, atol=1e-12)
