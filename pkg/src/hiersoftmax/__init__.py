"""Flat and hierarchical softmax text classifiers built on numpy."""

from __future__ import annotations

from .data import Dataset, Example, load_corpus, load_embeddings, synth_hierarchical
from .encoder import EmbeddingTable, RecurrentParams, encode_lstm, encode_mean, tokenize
from .errors import HSMError
from .hsoftmax import (
    HierSoftmaxParams,
    gradient_check,
    leaf_log_probs,
    loss,
    num_parameters,
    predict,
)
from .metrics import EvalReport, confusion_matrix, evaluate, not_harmonic_mean_witness
from .model import Model, build_model
from .optim import AdamState, TrainConfig, adam_step, cross_validate, train
from .taxonomy import TaxonomyTree, build_from_edges, bundled_taxonomy, flat_view, load_taxonomy

__all__ = [
    "AdamState", "Dataset", "EmbeddingTable", "EvalReport", "Example", "HSMError", "HierSoftmaxParams",
    "Model", "RecurrentParams", "TaxonomyTree", "TrainConfig", "adam_step", "build_from_edges",
    "build_model", "bundled_taxonomy", "confusion_matrix", "cross_validate", "encode_lstm", "encode_mean",
    "evaluate", "flat_view", "gradient_check", "leaf_log_probs", "load_corpus", "load_embeddings",
    "load_taxonomy", "loss", "not_harmonic_mean_witness", "num_parameters", "predict", "synth_hierarchical",
    "tokenize", "train",
]
