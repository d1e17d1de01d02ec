"""Text classifier = embeddings -> encoder -> (hierarchical) softmax."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hsoftmax as hs
from .encoder import (
    EmbeddingTable,
    EncoderOutput,
    LSTMWeights,
    RecurrentParams,
    _run_direction,
    backward,
    encode_lstm,
    encode_mean,
)
from .errors import ConfigError, DimensionMismatch
from .hsoftmax import HierSoftmaxParams
from .seeding import stream
from .taxonomy import TaxonomyTree


@dataclass(eq=False)
class Model:
    tree: TaxonomyTree
    table: EmbeddingTable
    encoder: str  # "mean" or "lstm"
    output: HierSoftmaxParams
    rnn: RecurrentParams | None = None
    dropout: float = 0.0

    def __post_init__(self):
        if self.encoder not in ("mean", "lstm"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.encoder == "lstm" and self.rnn is None:
            raise ConfigError("lstm encoder needs recurrent parameters")
        expected = self.rnn.output_dim if self.encoder == "lstm" else self.table.d_emb
        if self.output.h_dim_in != expected:
            raise DimensionMismatch(f"output layer expects h_dim_in={self.output.h_dim_in}, encoder gives {expected}")

    @property
    def h_dim_in(self) -> int:
        return self.output.h_dim_in

    def encode(self, ids, training: bool = False, rng=None) -> EncoderOutput:
        if self.encoder == "mean":
            return encode_mean(self.table, ids, self.dropout, training, rng)
        return encode_lstm(self.rnn, self.table, ids, self.rnn.bidirectional, self.dropout, training, rng)

    def hidden(self, docs) -> np.ndarray:
        """Inference-time hidden states, one row per document."""
        return np.stack([self.encode(ids).h for ids in docs]) if len(docs) else np.zeros((0, self.h_dim_in))

    def predict(self, docs) -> np.ndarray:
        """Class positions (indices into tree.leaves)."""
        if not len(docs):
            return np.zeros(0, dtype=np.intp)
        return hs.batch_predict(self.output, self.hidden(docs))

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays, as views the optimizer updates in place."""
        out = {"out.W": self.output.weights}
        if self.rnn is not None:
            out.update(self.rnn.arrays())
        if self.table.trainable:
            out["emb"] = self.table.matrix
        else:
            u = self.table.unk
            out["emb.unk"] = self.table.matrix[u:u + 1]
        return out

    def mark_updated(self) -> None:
        """Invalidate cached activations after a parameter update."""
        self.table.version += 1
        if self.rnn is not None:
            self.rnn.version += 1

    def loss_and_grads(self, docs, targets, rng=None) -> tuple[float, dict[str, np.ndarray]]:
        """Mean training loss over a batch and the batch-mean gradient of every trainable array."""
        B = len(docs)
        outs = [self.encode(ids, training=True, rng=rng) for ids in docs]
        H = np.stack([o.h for o in outs])
        losses, dW, dH = hs.batch_loss_and_grads(self.output, H, np.asarray(targets))
        grads = {"out.W": dW / B}
        if self.rnn is not None:
            for k, v in self.rnn.arrays().items():
                grads[k] = np.zeros_like(v)
        emb = np.zeros_like(self.table.matrix) if self.table.trainable else np.zeros((1, self.table.d_emb))
        for o, dh in zip(outs, dH):
            eg = backward(o, dh / B)
            for k, v in eg.params.items():
                grads[k] += v
            if self.table.trainable:
                np.add.at(emb, eg.emb_ids, eg.emb_rows)
            else:
                emb[0] += eg.emb_rows[eg.emb_ids == self.table.unk].sum(axis=0)
        grads["emb" if self.table.trainable else "emb.unk"] = emb
        return float(losses.mean()), grads

    def num_output_parameters(self) -> int:
        return hs.num_parameters(self.output)

    def copy(self) -> "Model":
        return Model(self.tree, self.table.copy(), self.encoder, self.output.copy(),
                     None if self.rnn is None else self.rnn.copy(), self.dropout)

    def load_state(self, other: "Model") -> None:
        """Copy parameter values from `other` (same architecture) into this model."""
        mine, theirs = self.parameters(), other.parameters()
        for k in mine:
            mine[k][...] = theirs[k]
        self.mark_updated()

    # -- checkpoints ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        arrays = hs.params_to_arrays(self.output, prefix="out.")
        if self.rnn is not None:
            arrays.update(self.rnn.arrays())
        arrays["emb.matrix"] = self.table.matrix
        vocab = sorted(self.table.vocab.items(), key=lambda kv: kv[1])
        arrays["emb.vocab"] = np.array([t for t, _ in vocab], dtype=str)
        meta = {
            "format": "hiersoftmax-model", "version": 1, "encoder": self.encoder, "dropout": self.dropout,
            "trainable": self.table.trainable, "unk": self.table.unk,
            "h_dim": None if self.rnn is None else self.rnn.h_dim,
            "bidirectional": bool(self.rnn is not None and self.rnn.bidirectional),
        }
        arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            output = hs.params_from_arrays(z, prefix="out.")
            tokens = [str(t) for t in z["emb.vocab"]]
            table = EmbeddingTable({t: i for i, t in enumerate(tokens)}, z["emb.matrix"].copy(),
                                   meta["trainable"], meta["unk"])
            rnn = None
            if meta["encoder"] == "lstm":
                fwd = LSTMWeights(z["lstm.fwd.W"].copy(), z["lstm.fwd.b"].copy())
                bwd = LSTMWeights(z["lstm.bwd.W"].copy(), z["lstm.bwd.b"].copy()) if meta["bidirectional"] else None
                rnn = RecurrentParams(table.d_emb, meta["h_dim"], fwd, bwd)
        return cls(output.tree, table, meta["encoder"], output, rnn, meta["dropout"])


def build_model(tree: TaxonomyTree, table: EmbeddingTable, encoder: str = "lstm", h_dim: int = 100,
                bidirectional: bool = False, dropout: float = 0.0, seed: int = 0) -> Model:
    """Fresh model; encoder weights come from their own stream so they do not depend on `tree`."""
    table = table.copy()
    if encoder == "lstm":
        rnn = RecurrentParams.initialize(table.d_emb, h_dim, bidirectional, stream(seed, "init.encoder"))
        h_in = rnn.output_dim
    elif encoder == "mean":
        rnn, h_in = None, table.d_emb
    else:
        raise ConfigError(f"unknown encoder {encoder!r}")
    output = HierSoftmaxParams.initialize(tree, h_in, stream(seed, "init.output"))
    return Model(tree, table, encoder, output, rnn, dropout)


# ---------------------------------------------------------------------------
# end-to-end gradient check


def _oracle_loss(arrays: dict[str, np.ndarray], model: Model, ids: np.ndarray, mask, target_leaf: int):
    """Full forward pass on (possibly long double) copies of every parameter."""
    X = arrays["emb"][ids]
    if model.encoder == "mean":
        h = X.mean(axis=0)
    else:
        h = _run_direction(LSTMWeights(arrays["lstm.fwd.W"], arrays["lstm.fwd.b"]), X)[0]
        if model.rnn.bidirectional:
            hb = _run_direction(LSTMWeights(arrays["lstm.bwd.W"], arrays["lstm.bwd.b"]), X[::-1])[0]
            h = np.concatenate([h, hb])
    if mask is not None:
        h = h * mask.astype(h.dtype)
    return hs._path_loss(arrays["out.W"], model.output.layout, h, target_leaf)


def end_to_end_gradient_check(model: Model, ids, target: int, step: float = 1e-5, tolerance: float = 1e-5,
                              training: bool = False, seed: int = 0,
                              precision: str = "extended", flip_sign: bool = False) -> hs.GradCheckReport:
    """Analytic gradients of the whole network vs central differences over every trainable scalar.

    `target` is a class position. With `training` the dropout mask drawn from
    `seed` is held fixed for the finite differences.
    """
    if not step > 0:
        raise hs.InvalidStep(f"finite-difference step must be positive, got {step}")
    ids = np.asarray(ids, dtype=np.intp)
    out = model.encode(ids, training=training, rng=np.random.default_rng(seed))
    _, dW, dH = hs.batch_loss_and_grads(model.output, out.h[None, :], np.array([target]))
    eg = backward(out, dH[0])
    analytic = {"out.W": dW, **eg.params}
    if model.table.trainable:
        analytic["emb"] = eg.dense_embedding(model.table.matrix.shape[0])
    if flip_sign:
        analytic = {k: -v for k, v in analytic.items()}

    dtype = hs.ORACLE_DTYPES[precision]
    arrays = {"out.W": model.output.weights.astype(dtype), "emb": model.table.matrix.astype(dtype)}
    if model.rnn is not None:
        arrays.update({k: v.astype(dtype) for k, v in model.rnn.arrays().items()})
    leaf = model.tree.leaves[target]

    def f():
        return _oracle_loss(arrays, model, ids, out.mask, leaf)

    entries = []
    for name, grad in analytic.items():
        x = arrays[name]
        rows = np.unique(ids) if name == "emb" else range(x.shape[0])
        for r in rows:
            for c in range(x.shape[1] if x.ndim == 2 else 1):
                idx = (r, c) if x.ndim == 2 else (r,)
                num = hs.central_difference(f, x, idx, step)
                a = float(grad[idx])
                entries.append(hs.GradCheckEntry(f"{name}{list(idx)}", a, num, hs.relative_error(a, num)))
    return hs.GradCheckReport(entries, tolerance)
