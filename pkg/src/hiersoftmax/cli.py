"""Command-line entry point.

Subcommands::

    gradcheck   analytic vs finite-difference gradients on random instances
    cv          k-fold cross-validation over the h_dim / bidirectional grid
    train       train a flat and/or hierarchical model and save checkpoints
    eval        score a saved checkpoint on a test file
    compare     CV -> train -> eval for flat and hierarchical, then one table

Settings come from built-in defaults, then an optional ``--config`` file
(JSON or YAML), then command-line flags; the resolved configuration is
written to ``<out>/config.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import hsoftmax as hs
from .data import Dataset, load_corpus, load_embeddings, read_examples, synth_hierarchical
from .encoder import EmbeddingTable
from .errors import ConfigError, HSMError
from .model import Model, build_model, end_to_end_gradient_check
from .optim import TrainConfig, cross_validate, evaluate_model, make_model, select_config, train
from .report import comparison_table, summarize_runs
from .seeding import stream
from .taxonomy import TaxonomyTree, load_taxonomy, random_tree

log = logging.getLogger("hiersoftmax")

TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


@dataclass
class RunConfig:
    command: str = "compare"
    train: str | None = None
    test: str | None = None
    taxonomy: str | None = None
    embeddings: str | None = None
    model: str | None = None  # checkpoint read by `eval`
    out: str | None = None
    mode: str = "both"
    synthetic: bool = False
    categories: int = 4
    classes_per_category: int = 3
    examples_per_class: int = 50
    vocab_per_class: int = 20
    noise: float = 0.1
    runs: int = 1
    cv: bool = True
    tolerance: float | None = None
    instances: int = 100
    inject_fault: bool = False
    training: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode not in ("flat", "hierarchical", "both"):
            raise ConfigError(f"mode must be flat, hierarchical or both, got {self.mode!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")

    def to_dict(self, with_out: bool = True) -> dict:
        d = asdict(self)
        d["training"] = self.training.to_dict()
        if not with_out:
            d.pop("out")
        return d

    @property
    def modes(self) -> list[str]:
        return ["flat", "hierarchical"] if self.mode == "both" else [self.mode]


def resolve_config(file_values: dict | None, flag_values: dict) -> RunConfig:
    """defaults < config file < flags."""
    run: dict = {}
    training: dict = {}
    for source in (file_values or {}, flag_values):
        for k, v in source.items():
            if k == "training":
                training.update(v)
            elif k in TRAIN_FIELDS:
                training[k] = v
            else:
                run[k] = v
    unknown = set(run) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown settings: {', '.join(sorted(unknown))}")
    unknown = set(training) - TRAIN_FIELDS
    if unknown:
        raise ConfigError(f"unknown training settings: {', '.join(sorted(unknown))}")
    return RunConfig(**run, training=TrainConfig(**training))


def read_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    if p.suffix in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text) or {}
    return json.loads(text)


# ---------------------------------------------------------------------------
# helpers


def _out_dir(cfg: RunConfig) -> Path | None:
    if cfg.out is None:
        return None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def load_data(cfg: RunConfig, need_test: bool) -> Dataset:
    if cfg.synthetic:
        return synth_hierarchical(cfg.categories, cfg.classes_per_category, cfg.examples_per_class,
                                  cfg.vocab_per_class, cfg.noise, cfg.training.seed)
    if not cfg.train or not cfg.taxonomy:
        raise ConfigError("--train and --taxonomy are required (or use --synthetic)")
    if need_test and not cfg.test:
        raise ConfigError("--test is required for this command")
    if cfg.test:
        return load_corpus(cfg.train, cfg.test, cfg.taxonomy)
    tree = load_taxonomy(cfg.taxonomy)
    return Dataset(read_examples(cfg.train, tree), [], tree)


def embedding_table(cfg: RunConfig, ds: Dataset) -> EmbeddingTable:
    if cfg.embeddings:
        loaded = load_embeddings(cfg.embeddings, ds.vocab)
        log.info("embeddings: %d/%d vocabulary tokens covered", loaded.covered, len(ds.vocab) - 1)
        return loaded.table
    return EmbeddingTable.random(ds.vocab, cfg.training.emb_dim, stream(cfg.training.seed, "embeddings"))


def trees_for(cfg: RunConfig, tree: TaxonomyTree) -> dict[str, TaxonomyTree]:
    if cfg.mode == "both" and tree.num_parents <= 1:
        raise ConfigError("mode 'both' needs a taxonomy with more than one parent node (P > 1)")
    return {m: (tree.flat_view() if m == "flat" else tree) for m in cfg.modes}


def _dump_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gradcheck(cfg: RunConfig, echo=print) -> tuple[int, dict]:
    """Gradient checks over seeded random instances; exit status 1 on any failure."""
    n = cfg.instances
    tol_out = 1e-6 if cfg.tolerance is None else cfg.tolerance
    tol_e2e = 1e-5 if cfg.tolerance is None else cfg.tolerance
    seed = cfg.training.seed

    out_errors, out_fail = [], 0
    for i in range(n):
        rng = stream(seed, "gradcheck", 0, i)
        tree = random_tree(rng, max_depth=4, max_fanout=6, max_nodes=40)
        d = int(rng.integers(1, 9))
        params = hs.HierSoftmaxParams(tree, d, 0.5 * rng.normal(size=(tree.num_nodes - 1, d + 1)))
        h = rng.normal(size=d)
        target = tree.leaves[int(rng.integers(tree.num_classes))]
        rep = hs.gradient_check(params, tree, h, target, 1e-5, tol_out, flip_sign=cfg.inject_fault)
        out_errors.append(rep.max_rel_error)
        out_fail += not rep.passed

    enc_errors, enc_fail = [], 0
    for i in range(n):
        rng = stream(seed, "gradcheck", 1, i)
        model = random_lstm_model(rng, seed=i)
        ids = rng.integers(0, len(model.table.vocab), size=int(rng.integers(1, 5)))
        target = int(rng.integers(model.tree.num_classes))
        rep = end_to_end_gradient_check(model, ids, target, 1e-5, tol_e2e, training=bool(rng.integers(2)),
                                        seed=i, flip_sign=cfg.inject_fault)
        enc_errors.append(rep.max_rel_error)
        enc_fail += not rep.passed

    summary = {
        "instances": n,
        "output_layer": {"max_rel_error": max(out_errors), "tolerance": tol_out, "failures": out_fail},
        "end_to_end": {"max_rel_error": max(enc_errors), "tolerance": tol_e2e, "failures": enc_fail},
    }
    echo(f"output layer: {n} instances, max relative error {max(out_errors):.3e} (tol {tol_out:g}), "
         f"{out_fail} failing")
    echo(f"LSTM end-to-end: {n} instances, max relative error {max(enc_errors):.3e} (tol {tol_e2e:g}), "
         f"{enc_fail} failing")
    out = _out_dir(cfg)
    if out:
        (out / "gradcheck.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return (0 if out_fail == 0 and enc_fail == 0 else 1), summary


def random_lstm_model(rng: np.random.Generator, seed: int = 0) -> Model:
    """Tiny (Bi)LSTM + hierarchical softmax with trainable embeddings, for gradient checks."""
    tree = random_tree(rng, max_depth=3, max_fanout=4, max_nodes=20)
    vocab = {f"t{k}": k for k in range(6)}
    table = EmbeddingTable.random(vocab, int(rng.integers(2, 5)), rng, scale=1.0, trainable=True)
    model = build_model(tree, table, "lstm", int(rng.integers(1, 5)), bool(rng.integers(2)), dropout=0.3, seed=seed)
    model.output.weights[...] = 0.5 * rng.normal(size=model.output.weights.shape)
    return model


def cmd_cv(cfg: RunConfig, echo=print):
    ds = load_data(cfg, need_test=False)
    table = embedding_table(cfg, ds)
    results = {}
    for mode, tree in trees_for(cfg, ds.taxonomy).items():
        res = cross_validate(ds.train, tree, table, cfg.training.grid())
        results[mode] = res
        for c, m in zip(res.grid, res.mean_macro_f1):
            mark = "*" if c is res.selected else " "
            echo(f"{mark} {mode:<12} encoder={c.encoder} h_dim={c.h_dim} bidirectional={c.bidirectional} "
                 f"mean macro-F1 {m:.3f}")
    out = _out_dir(cfg)
    if out:
        payload = {mode: {"mean_macro_f1": r.mean_macro_f1, "selected": r.selected_index,
                          "grid": [{"h_dim": c.h_dim, "bidirectional": c.bidirectional} for c in r.grid],
                          "folds": r.folds} for mode, r in results.items()}
        (out / "cv.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return results


def cmd_train(cfg: RunConfig, echo=print) -> dict[str, Model]:
    ds = load_data(cfg, need_test=False)
    table = embedding_table(cfg, ds)
    tc = replace(cfg.training, h_dim=cfg.training.h_dims[0])
    out = _out_dir(cfg)
    models = {}
    for mode, tree in trees_for(cfg, ds.taxonomy).items():
        res = train(make_model(tc, tree, table), ds.train, tc)
        models[mode] = res.model
        echo(f"{mode}: {len(res.history)} epochs, best epoch {res.best_epoch}, "
             f"validation macro-F1 {res.best_val_macro_f1:.3f}")
        if ds.test:
            rep = evaluate_model(res.model, ds.test, tc.average_over)
            echo(f"{mode}: test {json.dumps(rep.summary())}")
        if out:
            res.model.save(out / f"model-{mode}.npz")
            _dump_jsonl(out / f"history-{mode}.jsonl", (r.to_dict() for r in res.history))
    return models


def cmd_eval(cfg: RunConfig, echo=print):
    if not cfg.model or not cfg.test:
        raise ConfigError("eval needs --model and --test")
    model = Model.load(cfg.model)
    examples = read_examples(cfg.test, model.tree)
    rep = evaluate_model(model, examples, cfg.training.average_over)
    echo(json.dumps(rep.summary(), sort_keys=True))
    echo(rep.per_class_table())
    out = _out_dir(cfg)
    if out:
        (out / "eval.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    return rep


def cmd_compare(cfg: RunConfig, echo=print) -> tuple[str, dict]:
    """Flat vs hierarchical under identical seeds, encoder and training settings."""
    if cfg.mode != "both":
        raise ConfigError("compare needs --mode both")
    ds = load_data(cfg, need_test=True)
    table = embedding_table(cfg, ds)
    trees = trees_for(cfg, ds.taxonomy)
    base = cfg.training
    grid = base.grid()

    # one configuration is selected jointly so both models share the encoder architecture
    cv_means: dict[str, list[float]] = {}
    cv_folds: dict[str, list[dict]] = {}
    if cfg.cv and ds.train:
        for mode, tree in trees.items():
            res = cross_validate(ds.train, tree, table, grid)
            cv_means[mode], cv_folds[mode] = res.mean_macro_f1, res.folds
        joint = [float(np.mean([cv_means[m][i] for m in trees])) for i in range(len(grid))]
        chosen = grid[select_config(grid, joint)]
    else:
        chosen = grid[0]

    runs: dict[str, list[dict]] = {m: [] for m in trees}
    histories = []
    n_params = {}
    for r in range(cfg.runs):
        tc = replace(chosen, seed=base.seed + r)
        for mode, tree in trees.items():
            res = train(make_model(tc, tree, table), ds.train, tc)
            rep = evaluate_model(res.model, ds.test, tc.average_over)
            runs[mode].append({"seed": tc.seed, "epochs": len(res.history), "best_epoch": res.best_epoch,
                               **{k: rep.__dict__[k] for k in ("macro_f1", "macro_precision",
                                                               "macro_recall", "micro_accuracy")}})
            histories.extend({"model": mode, "seed": tc.seed, **h.to_dict()} for h in res.history)
            n_params[mode] = res.model.num_output_parameters()

    summaries = {m: summarize_runs(v) for m, v in runs.items()}
    hier = trees["hierarchical"]
    h_in = res.model.h_dim_in
    increment = n_params["hierarchical"] - n_params["flat"]
    arch = f"{chosen.encoder}" + (f", h_dim={chosen.h_dim}, bidirectional={chosen.bidirectional}"
                                  if chosen.encoder == "lstm" else f", d_emb={h_in}")
    title = f"Performance ({arch}; {cfg.runs} seed{'s' if cfg.runs > 1 else ''}, mean ± sd)"
    lines = [comparison_table(summaries, title, show_sd=True), "",
             f"output-layer weights: flat {n_params['flat']}, hierarchical {n_params['hierarchical']}, "
             f"increment {increment} = (P-1)*(h_dim_in+1) with P={hier.num_parents}, h_dim_in={h_in}"]
    if cv_means:
        for mode in trees:
            cells = ", ".join(f"{c.h_dim}/{'bi' if c.bidirectional else 'uni'}: {m:.3f}"
                              if c.encoder == "lstm" else f"{m:.3f}" for c, m in zip(grid, cv_means[mode]))
            lines.append(f"cv mean macro-F1 ({mode}): {cells}")
    text = "\n".join(lines) + "\n"

    payload = {
        "config": cfg.to_dict(with_out=False),
        "selected": {"encoder": chosen.encoder, "h_dim": chosen.h_dim, "bidirectional": chosen.bidirectional},
        "dataset": ds.sizes(),
        "models": {m: {"runs": runs[m], **summaries[m], "output_parameters": n_params[m]} for m in trees},
        "parameter_increment": increment,
        "parents": hier.num_parents,
        "h_dim_in": h_in,
        "cv": {"mean_macro_f1": cv_means, "folds": cv_folds},
    }
    echo(text.rstrip("\n"))
    out = _out_dir(cfg)
    if out:
        (out / "report.txt").write_text(text, encoding="utf-8")
        (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        _dump_jsonl(out / "history.jsonl", histories)
    return text, payload


COMMANDS = {"gradcheck": cmd_gradcheck, "cv": cmd_cv, "train": cmd_train, "eval": cmd_eval,
            "compare": cmd_compare}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = common.add_argument_group("data")
    g.add_argument("--train", help="training corpus, one 'label<TAB>text' per line")
    g.add_argument("--test", help="test corpus, same format")
    g.add_argument("--taxonomy", help="taxonomy file, one 'parent<TAB>child' per line")
    g.add_argument("--embeddings", help="GloVe-format embedding file")
    g.add_argument("--synthetic", action="store_true", help="use the synthetic hierarchical corpus")
    g.add_argument("--categories", type=int)
    g.add_argument("--classes-per-category", dest="classes_per_category", type=int)
    g.add_argument("--examples-per-class", dest="examples_per_class", type=int)
    g.add_argument("--vocab-per-class", dest="vocab_per_class", type=int)
    g.add_argument("--noise", type=float)
    m = common.add_argument_group("model and training")
    m.add_argument("--encoder", choices=["mean", "lstm"])
    m.add_argument("--h-dim", dest="h_dim", type=int, nargs="+", help="hidden size(s) to consider")
    m.add_argument("--bidirectional", dest="bidirectional", action="store_const", const=True)
    m.add_argument("--unidirectional", dest="bidirectional", action="store_const", const=False)
    m.add_argument("--mode", choices=["flat", "hierarchical", "both"])
    m.add_argument("--seed", type=int)
    m.add_argument("--epochs", dest="max_epochs", type=int)
    m.add_argument("--patience", type=int)
    m.add_argument("--lr", type=float)
    m.add_argument("--batch-size", dest="batch_size", type=int)
    m.add_argument("--dropout", type=float)
    m.add_argument("--k-folds", dest="k_folds", type=int)
    m.add_argument("--emb-dim", dest="emb_dim", type=int)
    m.add_argument("--train-embeddings", dest="train_embeddings", action="store_const", const=True)
    m.add_argument("--average-over", dest="average_over", choices=["all", "present"])
    m.add_argument("--runs", type=int, help="number of seeds (seed, seed+1, ...) for compare")
    m.add_argument("--no-cv", dest="cv", action="store_const", const=False)
    o = common.add_argument_group("output")
    o.add_argument("--out", help="output directory")
    o.add_argument("--config", help="JSON or YAML file with settings (flags win)")
    o.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hiersoftmax", description="Flat vs hierarchical softmax text classifiers")
    sub = parser.add_subparsers(dest="command", required=True)
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    gc.add_argument("--tolerance", type=float)
    gc.add_argument("--instances", type=int)
    gc.add_argument("--inject-fault", dest="inject_fault", action="store_true", help=argparse.SUPPRESS)
    sub.add_parser("cv", parents=[common], help="k-fold cross-validation")
    sub.add_parser("train", parents=[common], help="train and save models")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a saved model")
    ev.add_argument("--model", help="checkpoint written by 'train'")
    sub.add_parser("compare", parents=[common], help="flat vs hierarchical comparison table")
    return parser


def flags_to_settings(ns: argparse.Namespace) -> dict:
    flags = {k: v for k, v in vars(ns).items() if k not in ("config", "verbose")}
    if "h_dim" in flags:
        dims = flags.pop("h_dim")
        flags["h_dims"] = list(dims)
        flags["h_dim"] = dims[0]
    if "bidirectional" in flags:
        flags["bidirectional_options"] = [flags["bidirectional"]]
    return flags


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config_file(ns.config) if getattr(ns, "config", None) else None
        cfg = resolve_config(file_values, flags_to_settings(ns))
        result = COMMANDS[cfg.command](cfg)
    except HSMError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if cfg.command == "gradcheck":
        return result[0]
    return 0


if __name__ == "__main__":
    sys.exit(main())
