"""Corpora, pretrained embeddings and a synthetic hierarchical corpus.

Corpus files hold one example per line as ``label<TAB>raw text`` (UTF-8).
Embedding files use the GloVe text format, ``token v1 v2 ... vd``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import UNK, EmbeddingTable, build_vocab, tokenize
from .errors import DimensionMismatch, InvalidRate, MalformedLine, MissingFile, UnknownLabel
from .seeding import stream
from .taxonomy import TaxonomyTree, build_from_edges, load_taxonomy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Example:
    tokens: tuple[str, ...]
    label: str


@dataclass
class Dataset:
    train: list[Example]
    test: list[Example]
    taxonomy: TaxonomyTree
    vocab: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.vocab:
            self.vocab = build_vocab(ex.tokens for ex in self.train)

    def sizes(self) -> dict[str, int]:
        return {"train": len(self.train), "test": len(self.test), "classes": self.taxonomy.num_classes,
                "categories": self.taxonomy.num_parents - 1, "vocab": len(self.vocab)}


def read_examples(path: str | Path, tree: TaxonomyTree | None = None) -> list[Example]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"corpus file not found: {path}")
    leaves = set(tree.leaf_names) if tree is not None else None
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            label, sep, text = line.partition("\t")
            if not sep or not label:
                raise MalformedLine(lineno, "expected 'label<TAB>text'", str(path))
            if leaves is not None and label not in leaves:
                raise UnknownLabel(label, lineno)
            tokens = tokenize(text)
            if not tokens:
                raise MalformedLine(lineno, "document has no tokens", str(path))
            out.append(Example(tuple(tokens), label))
    return out


def load_corpus(train_path: str | Path, test_path: str | Path, taxonomy_path: str | Path) -> Dataset:
    """Read both splits, validate labels against the taxonomy leaves and build the train vocabulary."""
    tree = load_taxonomy(taxonomy_path)
    train = read_examples(train_path, tree)
    test = read_examples(test_path, tree)
    ds = Dataset(train, test, tree)
    log.info("loaded corpus: %s", ds.sizes())
    return ds


@dataclass
class EmbeddingLoad:
    table: EmbeddingTable
    covered: int
    skipped_lines: int

    @property
    def coverage(self) -> float:
        # UNK is never expected in the file
        return self.covered / max(1, len(self.table.vocab) - 1)


def load_embeddings(path: str | Path, vocab: dict[str, int], trainable: bool = False) -> EmbeddingLoad:
    """Copy vectors for vocabulary tokens found in a GloVe text file; other rows stay zero."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"embedding file not found: {path}")
    dim = None
    rows: dict[int, np.ndarray] = {}
    skipped = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.rstrip().split(" ")
            if len(parts) < 2:
                skipped += 1
                continue
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                skipped += 1
                continue
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise DimensionMismatch(f"{path}:{lineno}: vector has {vec.shape[0]} values, expected {dim}")
            row = vocab.get(parts[0])
            if row is not None and parts[0] != UNK:
                rows[row] = vec
    if dim is None:
        raise DimensionMismatch(f"{path}: no vectors found")
    if skipped:
        log.warning("skipped %d malformed lines in %s", skipped, path)
    matrix = np.zeros((len(vocab), dim))
    for r, v in rows.items():
        matrix[r] = v
    table = EmbeddingTable(vocab, matrix, trainable, vocab.get(UNK, 0))
    result = EmbeddingLoad(table, len(rows), skipped)
    log.info("embedding coverage %.1f%% (%d tokens)", 100 * result.coverage, result.covered)
    return result


def synth_hierarchical(categories: int, classes_per_category: int, examples_per_class: int,
                       vocab_per_class: int, noise: float, seed: int, doc_length: int = 12,
                       test_fraction: float = 0.2) -> Dataset:
    """Two-level corpus where every class owns a disjoint token pool inside its category's pool.

    Each token of a document comes from the document's class pool, or with
    probability `noise` uniformly from all tokens. `examples_per_class` counts
    both splits; `test_fraction` of each class goes to the test split.
    """
    for name, v in (("categories", categories), ("classes_per_category", classes_per_category),
                    ("examples_per_class", examples_per_class), ("vocab_per_class", vocab_per_class),
                    ("doc_length", doc_length)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    if not 0.0 <= noise < 1.0:
        raise InvalidRate(f"noise must lie in [0, 1), got {noise}")
    if not 0.0 <= test_fraction < 1.0:
        raise InvalidRate(f"test_fraction must lie in [0, 1), got {test_fraction}")

    rng = stream(seed, "data")
    edges = [("ROOT", f"cat{a}") for a in range(categories)]
    pools, labels = [], []
    for a in range(categories):
        for b in range(classes_per_category):
            label = f"cat{a}.cls{b}"
            edges.append((f"cat{a}", label))
            labels.append(label)
            pools.append([f"w{a}x{b}x{k}" for k in range(vocab_per_class)])
    tree = build_from_edges(edges)
    everything = [tok for pool in pools for tok in pool]

    n_test = int(round(test_fraction * examples_per_class))
    train, test = [], []
    for label, pool in zip(labels, pools):
        for i in range(examples_per_class):
            from_noise = rng.random(doc_length) < noise
            own = rng.integers(0, len(pool), size=doc_length)
            other = rng.integers(0, len(everything), size=doc_length)
            tokens = tuple(everything[o] if z else pool[k] for z, k, o in zip(from_noise, own, other))
            (test if i < n_test else train).append(Example(tokens, label))
    order = rng.permutation(len(train))
    train = [train[i] for i in order]
    return Dataset(train, test, tree)


def write_corpus(examples: list[Example], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(f"{ex.label}\t{' '.join(ex.tokens)}\n")
