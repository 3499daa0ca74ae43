"""Word-embedding matrices: loading, random generation, preprocessing, saving.

Text format is GloVe style: one ``token v1 v2 ... vd`` record per line,
single-space separated, UTF-8.
"""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

UNK = "<unk>"
PAD = "<pad>"


class EmbeddingFormatError(ValueError):
    """Malformed embedding text input."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Vocabulary-indexed ``|vocab| x d`` matrix. Immutable."""

    vocab: tuple
    vectors: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vocab = tuple(self.vocab)
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-d array")
        if vectors.shape[0] != len(vocab):
            raise ValueError(
                f"row count {vectors.shape[0]} != vocabulary size {len(vocab)}")
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        index = {}
        for i, tok in enumerate(vocab):
            if tok in index:
                raise ValueError(f"duplicate token {tok!r}")
            index[tok] = i
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding contains non-finite entries")
        vectors.setflags(write=False)
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, token):
        return token in self._index

    def index(self, token: str) -> int:
        return self._index[token]

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[self._index[token]]

    def subset(self, tokens: Iterable[str]) -> "EmbeddingMatrix":
        """Rows for ``tokens`` (which must all be present), in the given order."""
        tokens = list(tokens)
        rows = [self._index[t] for t in tokens]
        return EmbeddingMatrix(tokens, self.vectors[rows])

    def with_vectors(self, vectors: np.ndarray) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.vocab, vectors)


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8"), True
    return source, False


def load_embeddings(source, expected_dim: int | None = None) -> EmbeddingMatrix:
    """Parse GloVe-style text from a path or a text stream.

    Rows keep file order. Errors name the offending (1-based) line.
    """
    stream, owned = _open_text(source)
    vocab, rows = [], []
    seen = {}
    dim = expected_dim
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split()
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingFormatError(f"line {lineno}: no vector values")
            if len(values) != dim:
                raise EmbeddingFormatError(
                    f"line {lineno}: dimension mismatch, expected {dim} "
                    f"values, got {len(values)}")
            if token in seen:
                raise EmbeddingFormatError(
                    f"line {lineno}: duplicate token {token!r} "
                    f"(first seen on line {seen[token]})")
            try:
                row = [float(v) for v in values]
            except ValueError as exc:
                raise EmbeddingFormatError(f"line {lineno}: {exc}") from None
            if not all(np.isfinite(row)):
                raise EmbeddingFormatError(f"line {lineno}: non-finite value")
            seen[token] = lineno
            vocab.append(token)
            rows.append(row)
    finally:
        if owned:
            stream.close()
    if not rows:
        raise EmbeddingFormatError("no rows")
    return EmbeddingMatrix(vocab, np.array(rows, dtype=np.float64))


def format_embeddings(e: EmbeddingMatrix) -> str:
    buf = io.StringIO()
    for tok, row in zip(e.vocab, e.vectors):
        if any(ch.isspace() for ch in tok):
            raise ValueError(f"token {tok!r} contains whitespace")
        buf.write(tok)
        for v in row:
            buf.write(" ")
            buf.write(f"{v:.9g}")
        buf.write("\n")
    return buf.getvalue()


def save_embeddings(e: EmbeddingMatrix, path) -> None:
    """Write ``e`` with 9 significant digits, atomically."""
    from .io_utils import atomic_write_text

    atomic_write_text(path, format_embeddings(e))


def random_embeddings(vocab: Sequence[str], d: int, kappa: float,
                      seed: int) -> EmbeddingMatrix:
    """I.i.d. N(0, kappa^2) entries; a pure function of its arguments."""
    vocab = list(vocab)
    if not vocab:
        raise ValueError("vocab must be nonempty")
    if len(set(vocab)) != len(vocab):
        raise ValueError("duplicate tokens in vocab")
    if d < 1:
        raise ValueError("d must be positive")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(vocab, kappa * rng.standard_normal((len(vocab), d)))


def _stats_rows(e: EmbeddingMatrix, stats_tokens):
    if stats_tokens is None:
        return e.vectors
    rows = [e.index(t) for t in stats_tokens if t in e]
    if not rows:
        raise ValueError("none of the statistics tokens are in the vocabulary")
    return e.vectors[rows]


def mean_center(e: EmbeddingMatrix, stats_tokens=None) -> EmbeddingMatrix:
    """Subtract the per-dimension mean.

    ``stats_tokens`` restricts the rows the mean is computed over; the shift
    is applied to every row.
    """
    if len(e) == 0:
        raise ValueError("empty matrix")
    mu = _stats_rows(e, stats_tokens).mean(axis=0)
    return e.with_vectors(e.vectors - mu)


def rescale_unit_std(e: EmbeddingMatrix, stats_tokens=None) -> EmbeddingMatrix:
    """Divide each dimension by its population standard deviation.

    Zero-variance dimensions are left as they are, with a warning.
    """
    rows = _stats_rows(e, stats_tokens)
    if rows.shape[0] < 2:
        raise ValueError("need at least two rows to rescale")
    std = rows.std(axis=0)
    scale = np.abs(rows).max(axis=0)
    dead = std <= 1e-12 * np.maximum(scale, 1.0)
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} zero-variance dimension(s) left unscaled: "
            f"{np.flatnonzero(dead).tolist()[:10]}", RuntimeWarning, stacklevel=2)
    std = np.where(dead, 1.0, std)
    return e.with_vectors(e.vectors / std)


def preprocess(e: EmbeddingMatrix, stats_tokens=None) -> EmbeddingMatrix:
    """Mean-center then rescale every dimension to unit std."""
    return rescale_unit_std(mean_center(e, stats_tokens), stats_tokens)


def build_task_matrix(vocab: Sequence[str], source: EmbeddingMatrix | None,
                      d: int, kappa: float, seed: int) -> tuple[np.ndarray, int]:
    """Rows for a task vocabulary.

    Tokens present in ``source`` copy their vector; everything else (including
    ``<unk>``) gets a random N(0, kappa^2) row drawn with ``seed``. ``<pad>``
    rows are zero. Returns the matrix and the number of covered tokens.
    """
    rand = random_embeddings(list(vocab), d, kappa, seed).vectors.copy()
    hits = 0
    if source is not None:
        if source.dim != d:
            raise ValueError(f"embedding dim {source.dim} != model dim {d}")
        for i, tok in enumerate(vocab):
            if tok in source and tok not in (PAD, UNK):
                rand[i] = source[tok]
                hits += 1
    for i, tok in enumerate(vocab):
        if tok == PAD:
            rand[i] = 0.0
    return rand, hits
