"""Experiment recipes: word-pair classification, negation depth, SNLI smoke run.

Each recipe trains one model per embedding family and returns a plain dict
report. Reports hold no timings, so the same inputs and seed give the same
report.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import seq2seq as s2s
from .embeddings import load_embeddings
from .initializers import InitSpec
from .trainer import (Classifier, TrainConfig, Vocab, evaluate, read_pairs, split_dataset,
                      train)

log = logging.getLogger(__name__)

RECIPES = ("wordpair", "negation", "snli_smoke")


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 32
    layers: int = 2
    dropout_p: float = 0.2
    attention: bool = True
    window_D: int = 5
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_epochs=35, patience=None))
    split: tuple = (0.8, 0.1, 0.1)
    # snli_smoke subsample size (None keeps everything)
    subsample: int | None = 2000
    seed: int = 0

    def model_config(self, num_labels: int) -> s2s.ModelConfig:
        return s2s.ModelConfig(d=self.d, layers=self.layers, num_labels=num_labels,
                               dropout_p=self.dropout_p, attention=self.attention,
                               window_D=self.window_D)


def family_train_config(cfg: ExperimentConfig, embeddings) -> TrainConfig:
    """Random embeddings train from epoch 1; pretrained ones wait for the unfreeze epoch."""
    tc = replace(cfg.train, seed=cfg.seed)
    if embeddings is None:
        tc = replace(tc, embedding_unfreeze_epoch=0)
    return tc


def _labels(*datasets):
    return sorted({y for ds in datasets for _, _, y in ds})


def _fit(cfg: ExperimentConfig, embeddings, train_set, dev_set, vocab_sets, labels):
    tc = family_train_config(cfg, embeddings)
    vocab = Vocab.from_examples(*vocab_sets)
    init = InitSpec(tc.init_scheme, tc.kappa, cfg.layers, cfg.seed)
    model = Classifier.build(cfg.model_config(len(labels)), vocab, labels, init, embeddings,
                             emb_seed=cfg.seed)
    return train(model, train_set, dev_set, tc)


def _check_labels(labels, *datasets):
    extra = set(_labels(*datasets)) - set(labels)
    if extra:
        raise ValueError(f"labels {sorted(extra)} do not occur in training data")


def wordpair_experiment(examples, families: dict, cfg: ExperimentConfig) -> dict:
    """Seeded split, one run per family, dev/test accuracy table.

    ``families`` maps a name to an :class:`EmbeddingMatrix` or ``None``
    (random embeddings).
    """
    tr, dv, te = split_dataset(examples, cfg.seed, cfg.split)
    if not tr or not te:
        raise ValueError("split leaves an empty train or test set")
    labels = _labels(tr)
    _check_labels(labels, dv, te)
    rows = {}
    for name in sorted(families):
        model, tlog = _fit(cfg, families[name], tr, dv, [examples], labels)
        rows[name] = {"test_accuracy": evaluate(model, te),
                      "dev_accuracy": evaluate(model, dv) if dv else None,
                      "epochs": len(tlog.epochs)}
        log.info("wordpair %s: %s", name, rows[name])
    return {"recipe": "wordpair", "seed": cfg.seed,
            "sizes": {"train": len(tr), "dev": len(dv), "test": len(te)},
            "labels": labels, "families": rows}


def negation_experiment(train_set, tests: dict, families: dict, cfg: ExperimentConfig) -> dict:
    """Train on the shallow set, report accuracy per deeper test level."""
    labels = _labels(train_set)
    _check_labels(labels, *tests.values())
    depths = sorted(tests)
    rows = {}
    for name in sorted(families):
        model, tlog = _fit(cfg, families[name], train_set, None,
                           [train_set, *tests.values()], labels)
        rows[name] = {"train_accuracy": evaluate(model, train_set),
                      "test_accuracy": {str(k): evaluate(model, tests[k]) for k in depths},
                      "epochs": len(tlog.epochs)}
        log.info("negation %s: %s", name, rows[name])
    return {"recipe": "negation", "seed": cfg.seed, "depths": depths,
            "sizes": {"train": len(train_set), **{f"test_l{k}": len(tests[k]) for k in depths}},
            "labels": labels, "families": rows}


def snli_smoke(examples, families: dict, cfg: ExperimentConfig) -> dict:
    """One-epoch sanity run on a seeded subsample."""
    if cfg.subsample is not None and len(examples) > cfg.subsample:
        idx = np.sort(np.random.default_rng(cfg.seed).permutation(len(examples))[:cfg.subsample])
        examples = [examples[i] for i in idx]
    cfg = replace(cfg, train=replace(cfg.train, max_epochs=1))
    rep = wordpair_experiment(examples, families, cfg)
    rep["recipe"] = "snli_smoke"
    for name, row in rep["families"].items():
        row["finite"] = bool(np.isfinite(row["test_accuracy"]))
    return rep


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing input {path}")
    return path


def load_families(spec: dict) -> dict:
    """``{name: path or None}`` to ``{name: EmbeddingMatrix or None}``."""
    out = {}
    for name, path in spec.items():
        out[name] = None if path is None else load_embeddings(_require(path))
    return out


def run_experiment(recipe: str, paths: dict, cfg: ExperimentConfig) -> dict:
    """Load inputs named in ``paths`` and run ``recipe``.

    ``paths["embeddings"]`` maps family names to embedding files (``None`` for
    random). ``wordpair`` and ``snli_smoke`` read ``paths["data"]``;
    ``negation`` reads ``paths["train"]`` and ``paths["tests"]`` (depth to file).
    """
    if recipe not in RECIPES:
        raise ValueError(f"unknown recipe {recipe!r}; choose from {RECIPES}")
    families = load_families(paths.get("embeddings") or {"random": None})
    if recipe == "negation":
        tr = read_pairs(_require(paths["train"]))
        tests = {int(k): read_pairs(_require(p)) for k, p in paths["tests"].items()}
        rep = negation_experiment(tr, tests, families, cfg)
    else:
        data = read_pairs(_require(paths["data"]))
        fn = wordpair_experiment if recipe == "wordpair" else snli_smoke
        rep = fn(data, families, cfg)
    rep["config"] = config_to_dict(cfg)
    return rep


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["split"] = list(cfg.split)
    return out


def format_report(rep: dict) -> str:
    """Plain-text accuracy table."""
    lines = [f"recipe {rep['recipe']}  seed {rep['seed']}  sizes {rep['sizes']}"]
    if rep["recipe"] == "negation":
        depths = [str(k) for k in rep["depths"]]
        lines.append("family".ljust(16) + "".join(f"L{k}".rjust(8) for k in depths))
        for name, row in rep["families"].items():
            lines.append(name.ljust(16) + "".join(
                f"{row['test_accuracy'][k]:8.3f}" for k in depths))
    else:
        lines.append("family".ljust(16) + "dev".rjust(8) + "test".rjust(8))
        for name, row in rep["families"].items():
            dev = "-" if row["dev_accuracy"] is None else f"{row['dev_accuracy']:.3f}"
            lines.append(name.ljust(16) + dev.rjust(8) + f"{row['test_accuracy']:8.3f}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------- planted lexical benchmark

@dataclass(frozen=True)
class GraphBenchmarkConfig:
    """Synthetic stand-in for the WordNet word-pair and negation experiments.

    Labels come from a planted concept tree; ``retro`` embeddings are the
    ``random`` ones retrofitted to the tree's lexicon with anchor weight
    ``retrofit_alpha``.
    """
    branching: int = 5
    depth: int = 3
    synonym_rate: float = 0.3
    d: int = 32
    wordpair_per_label: int = 300
    negation_per_label: int = 40
    negation_downsample: int = 500
    wordpair_epochs: int = 35
    negation_epochs: int = 40
    learning_rate: float = 1.0
    kappa: float = 1.0
    init_scheme: str = "orthogonal"
    retrofit_alpha: float = 0.2
    test_depths: tuple = (3, 4, 5, 6)


def graph_benchmark(seed: int, bcfg: GraphBenchmarkConfig = GraphBenchmarkConfig()) -> dict:
    """Word-pair and negation accuracy for random vs retrofitted embeddings."""
    from .embeddings import preprocess, random_embeddings
    from .negation import generate_dataset
    from .retrofit import RetrofitConfig, retrofit
    from .synthetic import as_examples, as_negation_base, balanced_pairs, planted_taxonomy

    tax = planted_taxonomy(bcfg.branching, bcfg.depth, bcfg.synonym_rate, seed=seed)
    base = random_embeddings(tax.words, bcfg.d, 1.0, seed)
    rcfg = RetrofitConfig(alpha=bcfg.retrofit_alpha, max_iterations=50)
    families = {"random": preprocess(base),
                "retro": preprocess(retrofit(base, tax.lexicon(), rcfg))}

    def exp_cfg(epochs, unfreeze):
        tc = TrainConfig(learning_rate=bcfg.learning_rate, kappa=bcfg.kappa,
                         init_scheme=bcfg.init_scheme, max_epochs=epochs, patience=None,
                         embedding_unfreeze_epoch=unfreeze, seed=seed)
        return ExperimentConfig(d=bcfg.d, train=tc, seed=seed)

    report = {"seed": seed, "words": len(tax.words), "wordpair": {}, "negation": {}}
    pairs = as_examples(balanced_pairs(tax, bcfg.wordpair_per_label, seed))
    neg = generate_dataset(as_negation_base(balanced_pairs(tax, bcfg.negation_per_label,
                                                           seed + 100)),
                           2, bcfg.test_depths, bcfg.negation_downsample, seed)
    neg_train = [e.as_tokens() for e in neg.train]
    neg_tests = {k: [e.as_tokens() for e in v] for k, v in neg.tests.items()}
    for name, emb in families.items():
        # random vectors train from the start; retrofitted ones wait 5 epochs
        unfreeze = 0 if name == "random" else 5
        wp = wordpair_experiment(pairs, {name: emb}, exp_cfg(bcfg.wordpair_epochs, unfreeze))
        report["wordpair"][name] = wp["families"][name]["test_accuracy"]
        ng = negation_experiment(neg_train, neg_tests, {name: emb},
                                 exp_cfg(bcfg.negation_epochs, unfreeze))
        report["negation"][name] = {int(k): v for k, v in
                                    ng["families"][name]["test_accuracy"].items()}
    return report
