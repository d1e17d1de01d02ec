"""Sequence encoders that produce the hidden state fed to the output layer.

Two encoders are provided: a mean of token embeddings, and a (bi)directional
LSTM with hand-written backpropagation through time. Every forward pass
returns an :class:`EncoderOutput` carrying the activations its backward pass
needs, and :func:`backward` turns a gradient on the hidden state into
gradients for the encoder parameters and the embedding rows that were used.

LSTM cell, per time step (gates stacked as input, forget, output, candidate)::

    z = W @ [x_t; h_{t-1}] + b
    i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)
"""

from __future__ import annotations

import re
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptySequence, InvalidDropoutRate, StaleCache

UNK = "<unk>"
MAX_TOKENS = 400
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str, max_tokens: int = MAX_TOKENS) -> list[str]:
    """Lowercase, split punctuation into separate tokens, split on whitespace, truncate."""
    return _TOKEN_RE.findall(text.lower())[:max_tokens]


def build_vocab(token_lists, min_count: int = 1) -> dict[str, int]:
    """Token -> row, with UNK at row 0 and the rest in first-appearance order."""
    counts: dict[str, int] = {}
    for tokens in token_lists:
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
    vocab = {UNK: 0}
    for tok, n in counts.items():
        if n >= min_count and tok not in vocab:
            vocab[tok] = len(vocab)
    return vocab


@dataclass(eq=False)
class EmbeddingTable:
    vocab: dict[str, int]
    matrix: np.ndarray
    trainable: bool = False
    unk: int = 0
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape[0] != len(self.vocab) or max(self.vocab.values(), default=-1) >= self.matrix.shape[0]:
            raise DimensionMismatch("embedding matrix rows do not cover the vocabulary")

    @property
    def d_emb(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def random(cls, vocab: dict[str, int], d_emb: int, rng: np.random.Generator,
               scale: float = 1.0, trainable: bool = False) -> "EmbeddingTable":
        """Gaussian rows; the UNK row starts at zero."""
        m = rng.normal(0.0, scale, size=(len(vocab), d_emb))
        unk = vocab.get(UNK, 0)
        m[unk] = 0.0
        return cls(vocab, m, trainable, unk)

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        return np.fromiter((self.vocab.get(t, self.unk) for t in tokens), dtype=np.intp, count=len(tokens))

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.vocab, self.matrix.copy(), self.trainable, self.unk)


def _ids(table: EmbeddingTable, tokens) -> np.ndarray:
    if isinstance(tokens, np.ndarray) and tokens.dtype.kind in "iu":
        ids = tokens.astype(np.intp)
    else:
        ids = table.lookup(list(tokens))
    if ids.size == 0:
        raise EmptySequence("cannot encode an empty token sequence")
    return ids[:MAX_TOKENS]


# ---------------------------------------------------------------------------
# parameters


@dataclass(eq=False)
class LSTMWeights:
    W: np.ndarray  # (4H, D + H), gates stacked i, f, o, g
    b: np.ndarray  # (4H,)

    @property
    def h_dim(self) -> int:
        return self.b.shape[0] // 4


@dataclass(eq=False)
class RecurrentParams:
    d_emb: int
    h_dim: int
    forward: LSTMWeights
    backward: LSTMWeights | None = None
    version: int = field(default=0, compare=False)

    @property
    def bidirectional(self) -> bool:
        return self.backward is not None

    @property
    def output_dim(self) -> int:
        return 2 * self.h_dim if self.bidirectional else self.h_dim

    @classmethod
    def initialize(cls, d_emb: int, h_dim: int, bidirectional: bool, rng: np.random.Generator) -> "RecurrentParams":
        """Uniform(-a, a) weights with a = sqrt(1/h_dim); forget-gate bias 1, other biases 0."""

        def one() -> LSTMWeights:
            a = np.sqrt(1.0 / h_dim)
            W = rng.uniform(-a, a, size=(4 * h_dim, d_emb + h_dim))
            b = np.zeros(4 * h_dim)
            b[h_dim:2 * h_dim] = 1.0
            return LSTMWeights(W, b)

        fwd = one()
        bwd = one() if bidirectional else None
        return cls(d_emb, h_dim, fwd, bwd)

    @classmethod
    def zeros(cls, d_emb: int, h_dim: int, bidirectional: bool) -> "RecurrentParams":
        def one():
            return LSTMWeights(np.zeros((4 * h_dim, d_emb + h_dim)), np.zeros(4 * h_dim))
        return cls(d_emb, h_dim, one(), one() if bidirectional else None)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"lstm.fwd.W": self.forward.W, "lstm.fwd.b": self.forward.b}
        if self.backward is not None:
            out.update({"lstm.bwd.W": self.backward.W, "lstm.bwd.b": self.backward.b})
        return out

    def copy(self) -> "RecurrentParams":
        bwd = None if self.backward is None else LSTMWeights(self.backward.W.copy(), self.backward.b.copy())
        return RecurrentParams(self.d_emb, self.h_dim, LSTMWeights(self.forward.W.copy(), self.forward.b.copy()), bwd)


# ---------------------------------------------------------------------------
# forward


@dataclass(eq=False)
class EncoderOutput:
    h: np.ndarray
    kind: str
    ids: np.ndarray
    table: EmbeddingTable
    params: RecurrentParams | None = None
    mask: np.ndarray | None = None  # inverted-dropout mask applied to h
    caches: list = field(default_factory=list, repr=False)
    versions: tuple[int, int] = (0, 0)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _run_direction(w: LSTMWeights, X: np.ndarray):
    """Unroll one LSTM direction over X (T, D); return the final state and the tape."""
    T, D = X.shape
    H = w.h_dim
    Wx, Wh = w.W[:, :D], w.W[:, D:]
    XW = X @ Wx.T + w.b
    h = np.zeros(H, dtype=X.dtype)
    c = np.zeros(H, dtype=X.dtype)
    tape = []
    for t in range(T):
        z = XW[t] + Wh @ h
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        o = _sigmoid(z[2 * H:3 * H])
        g = np.tanh(z[3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        tape.append((h, c, i, f, o, g, tc))
        h = o * tc
        c = c_new
    return h, (X, tape)


def _back_direction(w: LSTMWeights, cache, dh: np.ndarray):
    X, tape = cache
    D = X.shape[1]
    H = w.h_dim
    Wh = w.W[:, D:]
    dZ = np.zeros((len(tape), 4 * H))
    dWh = np.zeros((4 * H, H))
    dc = np.zeros(H)
    for t in range(len(tape) - 1, -1, -1):
        h_prev, c_prev, i, f, o, g, tc = tape[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dZ[t]
        dz[:H] = dc * g * i * (1.0 - i)
        dz[H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[2 * H:3 * H] = do * o * (1.0 - o)
        dz[3 * H:] = dc * i * (1.0 - g * g)
        dWh += np.outer(dz, h_prev)
        dh = Wh.T @ dz
        dc = dc * f
    dW = np.hstack([dZ.T @ X, dWh])
    db = dZ.sum(axis=0)
    dX = dZ @ w.W[:, :D]
    return dW, db, dX


def dropout_mask(n: int, rate: float, rng: np.random.Generator | int | None) -> np.ndarray:
    """Inverted-dropout mask: kept units scaled by 1 / (1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise InvalidDropoutRate(f"dropout rate must lie in [0, 1), got {rate}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return (rng.random(n) >= rate) / (1.0 - rate)


def encode_mean(table: EmbeddingTable, tokens, dropout: float = 0.0, training: bool = False,
                rng: np.random.Generator | int | None = None) -> EncoderOutput:
    """Mean of the token embedding rows (bag-of-embeddings baseline)."""
    ids = _ids(table, tokens)
    h = table.matrix[ids].mean(axis=0)
    mask = None
    if training and dropout > 0.0:
        mask = dropout_mask(h.shape[0], dropout, rng)
        h = h * mask
    return EncoderOutput(h, "mean", ids, table, mask=mask, versions=(table.version, 0))


def encode_lstm(params: RecurrentParams, table: EmbeddingTable, tokens, bidirectional: bool | None = None,
                dropout: float = 0.0, training: bool = False,
                rng: np.random.Generator | int | None = None) -> EncoderOutput:
    """Final LSTM state (concatenated forward/backward finals when bidirectional)."""
    if not 0.0 <= dropout < 1.0:
        raise InvalidDropoutRate(f"dropout rate must lie in [0, 1), got {dropout}")
    if bidirectional is None:
        bidirectional = params.bidirectional
    if bidirectional != params.bidirectional:
        raise DimensionMismatch("bidirectional flag disagrees with the recurrent parameters")
    if table.d_emb != params.d_emb:
        raise DimensionMismatch(f"embedding dim {table.d_emb} != LSTM input dim {params.d_emb}")
    ids = _ids(table, tokens)
    X = table.matrix[ids]
    hf, cf = _run_direction(params.forward, X)
    caches = [cf]
    h = hf
    if bidirectional:
        hb, cb = _run_direction(params.backward, X[::-1])
        caches.append(cb)
        h = np.concatenate([hf, hb])
    mask = None
    if training and dropout > 0.0:
        mask = dropout_mask(h.shape[0], dropout, rng)
        h = h * mask
    return EncoderOutput(h, "lstm", ids, table, params, mask, caches, (table.version, params.version))


# ---------------------------------------------------------------------------
# backward


@dataclass
class EncoderGrads:
    params: dict[str, np.ndarray]  # same keys as RecurrentParams.arrays()
    emb_ids: np.ndarray  # token rows touched, one per position (may repeat)
    emb_rows: np.ndarray  # (T, d_emb) gradient for each position

    def dense_embedding(self, vocab_size: int) -> np.ndarray:
        out = np.zeros((vocab_size, self.emb_rows.shape[1]))
        np.add.at(out, self.emb_ids, self.emb_rows)
        return out


def backward(output: EncoderOutput, d_hidden) -> EncoderGrads:
    """Reverse-mode gradients of (d_hidden . h) with respect to the encoder inputs and weights."""
    d_hidden = np.asarray(d_hidden, dtype=np.float64)
    if d_hidden.shape != output.h.shape:
        raise DimensionMismatch(f"d_hidden has shape {d_hidden.shape}, expected {output.h.shape}")
    if output.table.version != output.versions[0] or (
            output.params is not None and output.params.version != output.versions[1]):
        raise StaleCache("parameters changed since this forward pass")

    if output.mask is not None:
        d_hidden = d_hidden * output.mask
    if output.kind == "mean":
        n = output.ids.shape[0]
        rows = np.broadcast_to(d_hidden / n, (n, d_hidden.shape[0])).copy()
        return EncoderGrads({}, output.ids, rows)

    p = output.params
    H = p.h_dim
    dWf, dbf, dX = _back_direction(p.forward, output.caches[0], d_hidden[:H])
    grads = {"lstm.fwd.W": dWf, "lstm.fwd.b": dbf}
    if p.bidirectional:
        dWb, dbb, dXb = _back_direction(p.backward, output.caches[1], d_hidden[H:])
        grads["lstm.bwd.W"] = dWb
        grads["lstm.bwd.b"] = dbb
        dX = dX + dXb[::-1]
    return EncoderGrads(grads, output.ids, dX)
