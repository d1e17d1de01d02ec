from __future__ import annotations

import math

import numpy as np
import pytest

from hiersoftmax.encoder import (
    UNK,
    EmbeddingTable,
    RecurrentParams,
    backward,
    build_vocab,
    dropout_mask,
    encode_lstm,
    encode_mean,
    tokenize,
)
from hiersoftmax.errors import DimensionMismatch, EmptySequence, InvalidDropoutRate, StaleCache


def table(V=6, d=3, seed=0, trainable=False):
    vocab = {UNK: 0, **{f"t{k}": k for k in range(1, V)}}
    return EmbeddingTable.random(vocab, d, np.random.default_rng(seed), trainable=trainable)


def lstm_oracle(W, b, X):
    """Scalar-loop LSTM (gates i, f, o, g) written independently of the vectorised code."""
    H = len(b) // 4
    h = [0.0] * H
    c = [0.0] * H
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    for x in X:
        inp = list(x) + h
        z = [sum(W[r][k] * inp[k] for k in range(len(inp))) + b[r] for r in range(4 * H)]
        i = [sig(v) for v in z[:H]]
        f = [sig(v) for v in z[H:2 * H]]
        o = [sig(v) for v in z[2 * H:3 * H]]
        g = [math.tanh(v) for v in z[3 * H:]]
        c = [f[j] * c[j] + i[j] * g[j] for j in range(H)]
        h = [o[j] * math.tanh(c[j]) for j in range(H)]
    return h


def test_tokenize():
    assert tokenize("What's the Capital, of France?") == ["what", "'", "s", "the", "capital", ",", "of", "france", "?"]
    assert len(tokenize("a " * 1000)) == 400


def test_vocab_has_unk_first():
    v = build_vocab([["b", "a"], ["a"]])
    assert v == {UNK: 0, "b": 1, "a": 2}


def test_mean_pool():
    t = table()
    np.testing.assert_array_equal(encode_mean(t, ["t2"]).h, t.matrix[2])
    np.testing.assert_allclose(encode_mean(t, ["t1", "t3"]).h, (t.matrix[1] + t.matrix[3]) / 2)
    ids = np.array([1, 4, 4, 5, 2])
    np.testing.assert_allclose(encode_mean(t, ids).h, sum(t.matrix[i] for i in ids) / 5, rtol=1e-14)
    assert not encode_mean(t, ["never-seen"]).h.any()  # falls back to the zero UNK row


def test_empty_sequence_rejected():
    with pytest.raises(EmptySequence):
        encode_mean(table(), [])


def test_lstm_zero_parameters_give_zero_state():
    t = EmbeddingTable({UNK: 0, "a": 1}, np.zeros((2, 3)))
    out = encode_lstm(RecurrentParams.zeros(3, 4, False), t, ["a", "a", "a"])
    assert not out.h.any()


def test_lstm_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    t = table(d=3, seed=1)
    p = RecurrentParams.initialize(3, 4, True, rng)
    ids = np.array([1, 3, 2, 5])
    out = encode_lstm(p, t, ids)
    X = t.matrix[ids].tolist()
    fwd = lstm_oracle(p.forward.W.tolist(), p.forward.b.tolist(), X)
    bwd = lstm_oracle(p.backward.W.tolist(), p.backward.b.tolist(), X[::-1])
    np.testing.assert_allclose(out.h, fwd + bwd, rtol=1e-12, atol=1e-15)


def test_bidirectional_length_one_and_output_size():
    p = RecurrentParams.initialize(3, 5, True, np.random.default_rng(2))
    t = table(d=3)
    out = encode_lstm(p, t, ["t1"])
    assert out.h.shape == (10,) and p.output_dim == 10
    fwd_only = RecurrentParams(3, 5, p.backward)
    np.testing.assert_array_equal(out.h[5:], encode_lstm(fwd_only, t, ["t1"]).h)


def test_initialization():
    p = RecurrentParams.initialize(7, 4, False, np.random.default_rng(3))
    assert np.abs(p.forward.W).max() <= 0.5
    np.testing.assert_array_equal(p.forward.b, [0] * 4 + [1] * 4 + [0] * 8)


def test_dropout_zero_is_identity_and_training_is_deterministic():
    p = RecurrentParams.initialize(3, 4, False, np.random.default_rng(4))
    t = table()
    a = encode_lstm(p, t, ["t1", "t2"], dropout=0.0, training=False).h
    b = encode_lstm(p, t, ["t1", "t2"], dropout=0.0, training=True, rng=5).h
    np.testing.assert_array_equal(a, b)
    c = encode_lstm(p, t, ["t1", "t2"], dropout=0.5, training=True, rng=5).h
    d = encode_lstm(p, t, ["t1", "t2"], dropout=0.5, training=True, rng=5).h
    np.testing.assert_array_equal(c, d)


def test_dropout_mask():
    m = dropout_mask(10000, 0.5, np.random.default_rng(0))
    assert set(np.unique(m)) <= {0.0, 2.0}
    assert abs(m.mean() - 1.0) < 0.05
    with pytest.raises(InvalidDropoutRate):
        dropout_mask(3, 1.0, 0)


def test_backward_zero_upstream_gives_zero_gradients():
    p = RecurrentParams.initialize(3, 4, True, np.random.default_rng(6))
    out = encode_lstm(p, table(), ["t1", "t2", "t3"])
    g = backward(out, np.zeros(8))
    assert all(not v.any() for v in g.params.values()) and not g.emb_rows.any()


def test_mean_backward_spreads_evenly():
    t = table()
    out = encode_mean(t, ["t1", "t2", "t1"])
    g = backward(out, np.array([3.0, 0.0, -6.0]))
    np.testing.assert_allclose(g.emb_rows, [[1.0, 0.0, -2.0]] * 3)
    np.testing.assert_allclose(g.dense_embedding(6)[1], [2.0, 0.0, -4.0])


def test_lstm_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    for trial in range(10):
        bi = bool(trial % 2)
        p = RecurrentParams.initialize(2, 3, bi, rng)
        t = table(d=2, seed=trial)
        ids = rng.integers(0, 6, size=int(rng.integers(1, 5)))
        v = rng.normal(size=p.output_dim)
        g = backward(encode_lstm(p, t, ids), v)

        def f():
            return float(v @ encode_lstm(p, t, ids).h)

        for name, arr in p.arrays().items():
            for idx in np.ndindex(*arr.shape):
                old = arr[idx]
                arr[idx] = old + 1e-6
                up = f()
                arr[idx] = old - 1e-6
                down = f()
                arr[idx] = old
                num = (up - down) / 2e-6
                assert abs(g.params[name][idx] - num) <= 1e-7 + 1e-5 * abs(num)


def test_stale_cache_detected():
    p = RecurrentParams.initialize(3, 2, False, np.random.default_rng(8))
    out = encode_lstm(p, table(), ["t1"])
    p.version += 1
    with pytest.raises(StaleCache):
        backward(out, np.ones(2))


def test_dimension_checks():
    p = RecurrentParams.initialize(4, 2, False, np.random.default_rng(9))
    with pytest.raises(DimensionMismatch):
        encode_lstm(p, table(d=3), ["t1"])
    with pytest.raises(DimensionMismatch):
        encode_lstm(p, table(d=4), ["t1"], bidirectional=True)
