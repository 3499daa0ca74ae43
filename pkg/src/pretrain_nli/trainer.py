"""Mini-batch SGD training with clipping, lr decay and delayed embedding updates."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import seq2seq as s2s
from .embeddings import PAD, UNK, EmbeddingMatrix, build_task_matrix
from .initializers import InitSpec

log = logging.getLogger(__name__)

# (learning rate, initialization range) per embedding family and scheme
TUNED_PRESETS = {
    ("random", "gaussian"): (1.31, 1.86),
    ("random", "orthogonal"): (0.99, 0.34),
    ("glove", "gaussian"): (1.12, 1.42),
    ("glove", "orthogonal"): (0.85, 0.23),
    ("word2vec", "gaussian"): (1.16, 0.44),
    ("word2vec", "orthogonal"): (0.98, 2.06),
    ("retro_glove", "gaussian"): (1.57, 1.91),
    ("retro_glove", "orthogonal"): (0.80, 1.35),
    ("retro_word2vec", "gaussian"): (0.64, 2.43),
    ("retro_word2vec", "orthogonal"): (0.44, 2.45),
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    kappa: float = 1.0
    init_scheme: str = "gaussian"
    batch_size: int = 32
    clip_norm: float = 3.0
    lr_decay_start_epoch: int = 5
    lr_decay_rate: float = 0.8
    embedding_unfreeze_epoch: int = 5
    max_epochs: int = 30
    patience: int | None = 5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.lr_decay_rate <= 1:
            raise ValueError("lr_decay_rate must be in (0, 1]")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    @classmethod
    def preset(cls, family: str, scheme: str, **overrides) -> "TrainConfig":
        """Tuned learning rate and kappa for an embedding family and scheme.

        Random embeddings train from the first epoch; the rest wait until 5.
        """
        lr, kappa = TUNED_PRESETS[(family, scheme)]
        unfreeze = 0 if family == "random" else 5
        kw = dict(learning_rate=lr, kappa=kappa, init_scheme=scheme,
                  embedding_unfreeze_epoch=unfreeze)
        kw.update(overrides)
        return cls(**kw)


def effective_lr(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate in (1-based) ``epoch``."""
    return cfg.learning_rate * cfg.lr_decay_rate ** max(0, epoch - cfg.lr_decay_start_epoch)


def embeddings_trainable(cfg: TrainConfig, epoch: int) -> bool:
    return epoch >= cfg.embedding_unfreeze_epoch


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: dict, clip_norm: float):
    """Rescale so the global L2 norm is at most ``clip_norm``.

    Returns ``(grads, norm_before)``; the input dict is not modified.
    """
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise s2s.NumericalError("non-finite gradient norm")
    if norm <= clip_norm:
        return dict(grads), norm
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


# --------------------------------------------------------------------- data

class Vocab:
    """Token <-> id map with ``<pad>`` = 0 and ``<unk>`` = 1."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for t in tokens:
            self.add(t)

    def add(self, tok):
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def ids(self, tokens):
        return [self.stoi.get(t, 1) for t in tokens]

    @classmethod
    def from_examples(cls, *datasets) -> "Vocab":
        toks = sorted({t for ds in datasets for p, h, _ in ds for t in (*p, *h)})
        return cls(toks)


def read_pairs(source) -> list:
    """``premise<TAB>hypothesis<TAB>label`` lines as token-list triples."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as f:
            lines = f.read().splitlines()
    else:
        lines = source.read().splitlines()
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 tab-separated fields")
        p, h, y = parts[0].split(), parts[1].split(), parts[2].strip()
        if not p or not h:
            raise ValueError(f"line {lineno}: empty premise or hypothesis")
        out.append((p, h, y))
    return out


def format_pairs(examples) -> str:
    return "".join(f"{' '.join(p)}\t{' '.join(h)}\t{y}\n" for p, h, y in examples)


def split_dataset(examples: Sequence, seed: int, fractions=(0.8, 0.1, 0.1)):
    """Seeded shuffle then contiguous train/dev/test cut."""
    n = len(examples)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_dev = int(round(fractions[1] * n))
    pick = lambda idx: [examples[i] for i in idx]
    return (pick(perm[:n_train]), pick(perm[n_train:n_train + n_dev]),
            pick(perm[n_train + n_dev:]))


# -------------------------------------------------------------------- model

class Classifier:
    """Parameters plus the vocabulary and label set they were built for."""

    def __init__(self, config: s2s.ModelConfig, params: dict, vocab: Vocab, labels: Sequence[str]):
        if len(labels) != config.num_labels:
            raise ValueError("label count does not match config.num_labels")
        self.config = config
        self.params = params
        self.vocab = vocab
        self.labels = list(labels)
        self.label_index = {y: k for k, y in enumerate(self.labels)}

    @classmethod
    def build(cls, config: s2s.ModelConfig, vocab: Vocab, labels, init: InitSpec,
              embeddings: EmbeddingMatrix | None = None, emb_kappa: float = 1.0,
              emb_seed: int = 0) -> "Classifier":
        """Fresh model; both embedding matrices start from ``embeddings`` rows
        (random N(0, emb_kappa^2) where missing)."""
        E, _ = build_task_matrix(vocab.itos, embeddings, config.d, emb_kappa, emb_seed)
        params = s2s.init_params(config, len(vocab), init, E, E.copy())
        return cls(config, params, vocab, labels)

    def encode_examples(self, examples):
        out = []
        for p, h, y in examples:
            if y not in self.label_index:
                raise ValueError(f"unknown label {y!r}")
            out.append((self.vocab.ids(p), self.vocab.ids(h), self.label_index[y]))
        return out

    def predict_proba(self, examples) -> np.ndarray:
        enc = [(self.vocab.ids(p), self.vocab.ids(h)) for p, h, *_ in examples]
        return s2s.predict_proba(self.params, self.config, [e[0] for e in enc], [e[1] for e in enc])

    def predict(self, examples) -> list:
        # argmax takes the first maximum: ties go to the lowest label index
        return [self.labels[k] for k in np.argmax(self.predict_proba(examples), axis=1)]

    def copy(self) -> "Classifier":
        return Classifier(self.config, {k: v.copy() for k, v in self.params.items()},
                          self.vocab, self.labels)

    def save(self, path) -> None:
        meta = {"config": s2s.config_to_dict(self.config), "vocab": self.vocab.itos,
                "labels": self.labels}
        s2s.save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "Classifier":
        params, meta = s2s.load_checkpoint(path)
        config = s2s.ModelConfig(**meta["config"])
        params = {k: v.astype(config.dtype) for k, v in params.items()}
        vocab = Vocab()
        for t in meta["vocab"][2:]:
            vocab.add(t)
        return cls(config, params, vocab, meta["labels"])


def evaluate(model: Classifier, dataset) -> float:
    """Accuracy of argmax predictions."""
    if not dataset:
        raise ValueError("empty dataset")
    pred = model.predict(dataset)
    return float(np.mean([p == y for p, (_, _, y) in zip(pred, dataset)]))


# ----------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_accuracy: float | None
    lr: float
    embeddings_trainable: bool
    max_grad_norm: float
    max_clipped_norm: float
    wall_time: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    stopped_early: bool = False

    def append(self, rec: EpochRecord):
        if self.epochs and rec.epoch <= self.epochs[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.epochs.append(rec)

    def records(self):
        return [asdict(r) for r in self.epochs]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, last_good: Classifier, log: TrainLog):
        super().__init__(msg)
        self.last_good = last_good
        self.log = log


def _seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _batch_gradients(batch, params, config, seed, need_embeddings, pool=None, n_shards=1):
    """Mean loss and gradients; with a pool, shards are summed in shard order."""
    if pool is None:
        return s2s.loss_and_gradients(batch, params, config, dropout_seed=seed,
                                      need_embeddings=need_embeddings)
    shards = [sh for sh in np.array_split(np.arange(len(batch)), n_shards) if len(sh)]
    jobs = [pool.submit(s2s.loss_and_gradients, [batch[i] for i in sh], params, config,
                        _seed(seed, k), need_embeddings) for k, sh in enumerate(shards)]
    loss, grads = 0.0, None
    for sh, job in zip(shards, jobs):
        w = len(sh) / len(batch)
        part_loss, part = job.result()
        loss += w * part_loss
        if grads is None:
            grads = {k: w * g for k, g in part.items()}
        else:
            for k, g in part.items():
                grads[k] += w * g
    return loss, grads


def train(model: Classifier, train_set, dev_set, cfg: TrainConfig, callback=None,
          threads: int = 1):
    """Train a copy of ``model``; returns ``(trained model, TrainLog)``.

    Epochs are numbered from 1. ``callback(epoch, model, record)`` runs after
    each epoch. ``threads > 1`` splits each batch across worker threads; the
    result is deterministic for a fixed thread count but differs from the
    single-thread run (dropout masks are drawn per shard).
    """
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        return _train(model, train_set, dev_set, cfg, callback, pool, threads)
    finally:
        if pool is not None:
            pool.shutdown()


def _train(model, train_set, dev_set, cfg, callback, pool, threads):
    if not train_set:
        raise ValueError("empty training set")
    model = model.copy()
    data = model.encode_examples(train_set)
    log_ = TrainLog()
    best_dev, stale = -1.0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        lr = effective_lr(cfg, epoch)
        trainable = embeddings_trainable(cfg, epoch)
        perm = np.random.default_rng(_seed(cfg.seed, epoch)).permutation(len(data))
        total, max_norm, max_clipped = 0.0, 0.0, 0.0
        good = model.copy()
        for bi, s in enumerate(range(0, len(data), cfg.batch_size)):
            batch = [data[i] for i in perm[s:s + cfg.batch_size]]
            try:
                loss, grads = _batch_gradients(batch, model.params, model.config,
                                               _seed(cfg.seed, epoch, bi), trainable, pool,
                                               threads)
                if not trainable:
                    for k in s2s.EMBEDDING_KEYS:
                        grads.pop(k)
                grads, norm = clip_gradients(grads, cfg.clip_norm)
            except s2s.NumericalError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {bi}: {exc}", good, log_) from exc
            max_norm = max(max_norm, norm)
            max_clipped = max(max_clipped, global_norm(grads))
            for k, g in grads.items():
                model.params[k] -= (lr * g).astype(model.params[k].dtype)
            total += loss * len(batch)
        dev_acc = evaluate(model, dev_set) if dev_set else None
        rec = EpochRecord(epoch, total / len(data), dev_acc, lr, trainable, max_norm,
                          max_clipped, time.perf_counter() - t0)
        log_.append(rec)
        log.info("epoch %d loss %.4f dev %s lr %.4g", epoch, rec.train_loss,
                 "-" if dev_acc is None else f"{dev_acc:.4f}", lr)
        if callback is not None:
            callback(epoch, model, rec)
        if dev_acc is not None and cfg.patience is not None:
            if dev_acc > best_dev:
                best_dev, stale = dev_acc, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log_.stopped_early = True
                    break
    return model, log_
