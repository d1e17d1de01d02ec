"""Training: Adam, mini-batches, early stopping on validation macro-F1, k-fold CV."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np

from .data import Example
from .encoder import EmbeddingTable
from .errors import ConfigError, EmptyDataset, ShapeMismatch, TooFewExamples, UnknownLabel
from .metrics import EvalReport, evaluate
from .model import Model, build_model
from .seeding import stream
from .taxonomy import TaxonomyTree

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """One bias-corrected Adam update, applied to `params` in place."""
    if params.keys() != grads.keys():
        raise ShapeMismatch(f"parameter keys {sorted(params)} != gradient keys {sorted(grads)}")
    for k, p in params.items():
        if np.shape(grads[k]) != p.shape:
            raise ShapeMismatch(f"{k}: gradient shape {np.shape(grads[k])} != parameter shape {p.shape}")
        if k in state.m and state.m[k].shape != p.shape:
            raise ShapeMismatch(f"{k}: optimizer state shape {state.m[k].shape} != parameter shape {p.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 10
    dropout: float = 0.5
    k_folds: int = 4
    h_dim: int = 150
    h_dims: tuple[int, ...] = (100, 150)
    encoder: str = "lstm"
    bidirectional: bool = False
    bidirectional_options: tuple[bool, ...] = (False, True)
    max_epochs: int = 50
    patience: int = 3
    seed: int = 0
    emb_dim: int = 300  # only used without pretrained embeddings
    train_embeddings: bool = False
    average_over: str = "all"

    def __post_init__(self):
        self.h_dims = tuple(self.h_dims)
        self.bidirectional_options = tuple(self.bidirectional_options)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.encoder not in ("mean", "lstm"):
            raise ConfigError(f"encoder must be 'mean' or 'lstm', got {self.encoder!r}")

    def grid(self) -> list["TrainConfig"]:
        """Configurations explored by cross-validation (h_dim x bidirectional for the LSTM)."""
        if self.encoder == "mean":
            return [self]
        return [replace(self, h_dim=h, bidirectional=b) for h, b in product(self.h_dims, self.bidirectional_options)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["h_dims"] = list(self.h_dims)
        d["bidirectional_options"] = list(self.bidirectional_options)
        return d


def make_model(config: TrainConfig, tree: TaxonomyTree, table: EmbeddingTable) -> Model:
    table = EmbeddingTable(table.vocab, table.matrix, config.train_embeddings, table.unk)
    return build_model(tree, table, config.encoder, config.h_dim, config.bidirectional, config.dropout, config.seed)


def encode_examples(examples: list[Example], table: EmbeddingTable, tree: TaxonomyTree):
    """Token-id arrays and class positions for a list of examples."""
    leaf_pos = {name: k for k, name in enumerate(tree.leaf_names)}
    docs, targets = [], []
    for ex in examples:
        if ex.label not in leaf_pos:
            raise UnknownLabel(ex.label)
        docs.append(table.lookup(ex.tokens))
        targets.append(leaf_pos[ex.label])
    return docs, np.array(targets, dtype=np.intp)


def evaluate_model(model: Model, examples: list[Example], average_over: str = "all") -> EvalReport:
    docs, _ = encode_examples(examples, model.table, model.tree)
    names = model.tree.leaf_names
    preds = [names[k] for k in model.predict(docs)]
    return evaluate([ex.label for ex in examples], preds, names, average_over)


def assign_folds(labels: list[str], k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per example; stratified for classes with >= k examples, random for the rest.

    Examples are dealt round-robin with one running counter, so fold sizes
    differ by at most one.
    """
    n = len(labels)
    if k > n:
        raise TooFewExamples(f"cannot split {n} examples into {k} folds")
    by_class: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(i)
    folds = np.empty(n, dtype=np.intp)
    counter = 0
    rare: list[int] = []
    for lab, idx in by_class.items():
        if len(idx) < k:
            rare.extend(idx)
            continue
        for i in rng.permutation(idx):
            folds[i] = counter % k
            counter += 1
    for i in rng.permutation(np.array(rare, dtype=np.intp)):
        folds[i] = counter % k
        counter += 1
    return folds


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_f1: float
    val_macro_precision: float
    val_macro_recall: float
    val_micro_accuracy: float
    seconds: float

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("seconds")
        return d


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord]
    best_epoch: int  # 0 when no epoch ran

    @property
    def best_val_macro_f1(self) -> float:
        return max((r.val_macro_f1 for r in self.history), default=float("nan"))


def train(model: Model, examples: list[Example], config: TrainConfig,
          validation: list[Example] | None = None, tag: tuple[int, ...] = ()) -> TrainResult:
    """Adam training with early stopping; the returned model holds the best-validation parameters.

    Without an explicit `validation` split, one stratified 1/k_folds share of
    `examples` is held out for early stopping. `tag` distinguishes the random
    streams of runs that share a seed (e.g. CV folds).
    """
    if not examples:
        raise EmptyDataset("no training examples")
    if validation is None:
        folds = assign_folds([ex.label for ex in examples], config.k_folds, stream(config.seed, "holdout", *tag))
        validation = [ex for ex, f in zip(examples, folds) if f == 0]
        examples = [ex for ex, f in zip(examples, folds) if f != 0]
    docs, targets = encode_examples(examples, model.table, model.tree)
    encode_examples(validation, model.table, model.tree)

    state = AdamState(lr=config.lr)
    shuffle_rng = stream(config.seed, "shuffle", *tag)
    dropout_rng = stream(config.seed, "dropout", *tag)
    history: list[EpochRecord] = []
    best: Model | None = None
    best_f1, best_epoch, waited = -np.inf, 0, 0
    n, B = len(docs), config.batch_size

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, B):
            idx = order[start:start + B]
            batch_loss, grads = model.loss_and_grads([docs[i] for i in idx], targets[idx], dropout_rng)
            adam_step(state, model.parameters(), grads)
            model.mark_updated()
            total += batch_loss * len(idx)
        rep = evaluate_model(model, validation, config.average_over)
        rec = EpochRecord(epoch, total / n, rep.macro_f1, rep.macro_precision, rep.macro_recall,
                          rep.micro_accuracy, time.perf_counter() - t0)
        history.append(rec)
        log.debug("epoch %d loss %.4f val F1 %.3f", epoch, rec.train_loss, rec.val_macro_f1)
        if rec.val_macro_f1 > best_f1:
            best_f1, best_epoch, waited = rec.val_macro_f1, epoch, 0
            best = model.copy()
        else:
            waited += 1
            if waited >= config.patience:
                break
    if best is not None:
        model.load_state(best)
    return TrainResult(model, history, best_epoch)


@dataclass
class CVResult:
    grid: list[TrainConfig]
    mean_macro_f1: list[float]
    folds: list[dict]  # one record per (configuration, fold)
    selected: TrainConfig
    selected_index: int


def select_config(grid: list[TrainConfig], means: list[float]) -> int:
    """Highest mean macro-F1; ties go to the smaller h_dim, then to the unidirectional model."""
    return min(range(len(grid)), key=lambda i: (-means[i], grid[i].h_dim, grid[i].bidirectional))


def cross_validate(examples: list[Example], tree: TaxonomyTree, table: EmbeddingTable,
                   grid: list[TrainConfig]) -> CVResult:
    """k-fold CV of every configuration in `grid`, scored by best validation macro-F1 per fold."""
    if not grid:
        raise ConfigError("empty configuration grid")
    if not examples:
        raise EmptyDataset("no training examples")
    k = grid[0].k_folds
    folds = assign_folds([ex.label for ex in examples], k, stream(grid[0].seed, "folds"))
    records, means = [], []
    for ci, cfg in enumerate(grid):
        scores = []
        for f in range(k):
            fit = [ex for ex, g in zip(examples, folds) if g != f]
            val = [ex for ex, g in zip(examples, folds) if g == f]
            res = train(make_model(cfg, tree, table), fit, cfg, validation=val, tag=(f + 1,))
            scores.append(res.best_val_macro_f1)
            records.append({"config": ci, "encoder": cfg.encoder, "h_dim": cfg.h_dim,
                            "bidirectional": cfg.bidirectional, "fold": f, "val_size": len(val),
                            "best_epoch": res.best_epoch, "macro_f1": res.best_val_macro_f1})
        means.append(float(np.mean(scores)))
        log.info("cv config %d (h_dim=%d, bi=%s): mean macro-F1 %.3f", ci, cfg.h_dim, cfg.bidirectional, means[-1])
    best = select_config(grid, means)
    return CVResult(grid, means, records, grid[best], best)
