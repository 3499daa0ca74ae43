"""Retrofitting word vectors to an undirected lexical graph.

Each sweep visits the vocabulary in order and replaces every connected word
vector by a weighted average of its original vector and its neighbours'
current retrofitted vectors:

    new_j = (alpha_j * x_j + sum_i beta_ji * new_i) / (alpha_j + sum_i beta_ji)

With alpha_j = 1 and beta_ji = 1/deg(j) this is the standard
retrofitting update (x_j averaged with the mean of its neighbours).
"""

from __future__ import annotations

import logging
import os
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

import numpy as np

from .embeddings import EmbeddingMatrix

log = logging.getLogger(__name__)


class Lexicon:
    """Symmetric word graph without self-loops."""

    def __init__(self, adjacency: Mapping[str, set]):
        adj = {w: frozenset(ns) for w, ns in adjacency.items()}
        for w, ns in adj.items():
            if w in ns:
                raise ValueError(f"self-loop on {w!r}")
            for n in ns:
                if w not in adj.get(n, ()):
                    raise ValueError(f"asymmetric lexicon: {w!r} -> {n!r} has no reverse edge")
        self.adjacency = adj

    @classmethod
    def from_edges(cls, edges) -> "Lexicon":
        adj: dict = {}
        for a, b in edges:
            if a == b:
                continue
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
        return cls(adj)

    def neighbors(self, word):
        return self.adjacency.get(word, frozenset())

    def __contains__(self, word):
        return word in self.adjacency

    def __len__(self):
        return len(self.adjacency)

    def edges(self):
        """Undirected edges as sorted pairs."""
        out = set()
        for w, ns in self.adjacency.items():
            for n in ns:
                out.add((w, n) if w < n else (n, w))
        return sorted(out)

    def __eq__(self, other):
        return isinstance(other, Lexicon) and self.adjacency == other.adjacency

    def __repr__(self):
        return f"Lexicon({len(self.adjacency)} words, {len(self.edges())} edges)"


def load_lexicon(source) -> Lexicon:
    """Read ``word neighbor1 neighbor2 ...`` lines into a symmetric graph.

    Tokens are casefolded; self-loops are dropped; edges are the union of
    both directions.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as f:
            lines = f.readlines()
    else:
        lines = list(source)
    adj: dict = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split(" ")
        parts[-1] = parts[-1].rstrip("\r\n")
        if not parts[0].strip():
            raise ValueError(f"line {lineno}: empty word token")
        word = parts[0].casefold()
        adj.setdefault(word, set())
        for n in parts[1:]:
            n = n.strip().casefold()
            if not n or n == word:
                continue
            adj[word].add(n)
            adj.setdefault(n, set()).add(word)
    return Lexicon(adj)


def save_lexicon(lex: Lexicon, path) -> None:
    from .io_utils import atomic_write_text

    lines = [" ".join([w, *sorted(ns)]) for w, ns in sorted(lex.adjacency.items())]
    atomic_write_text(path, "\n".join(lines) + "\n")


BetaRule = Callable[[str, str, Mapping[str, int]], float]


def inverse_degree(j, i, degree):
    return 1.0 / degree[j]


def uniform_beta(j, i, degree):
    return 1.0


BETA_RULES = {"inverse_degree": inverse_degree, "uniform": uniform_beta}


@dataclass(frozen=True)
class RetrofitConfig:
    alpha: float | Mapping[str, float] = 1.0
    beta_rule: str | BetaRule = "inverse_degree"
    max_iterations: int = 10
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")
        alphas = self.alpha.values() if isinstance(self.alpha, Mapping) else [self.alpha]
        if any(a < 0 for a in alphas):
            raise ValueError("alpha must be nonnegative")
        if isinstance(self.beta_rule, str) and self.beta_rule not in BETA_RULES:
            raise ValueError(f"unknown beta rule {self.beta_rule!r}")

    def alpha_of(self, word) -> float:
        if isinstance(self.alpha, Mapping):
            return float(self.alpha.get(word, 1.0))
        return float(self.alpha)

    def beta(self) -> BetaRule:
        return BETA_RULES[self.beta_rule] if isinstance(self.beta_rule, str) else self.beta_rule


class _Graph:
    """Lexicon restricted to an embedding vocabulary, as index lists."""

    def __init__(self, e: EmbeddingMatrix, lex: Lexicon, cfg: RetrofitConfig):
        vocab = e.vocab
        self.nbrs = []
        for w in vocab:
            self.nbrs.append(sorted(e.index(n) for n in lex.neighbors(w) if n in e))
        degree = {w: len(self.nbrs[k]) for k, w in enumerate(vocab)}
        rule = cfg.beta()
        self.alpha = np.array([cfg.alpha_of(w) for w in vocab])
        self.betas = []
        for k, w in enumerate(vocab):
            b = np.array([rule(w, vocab[i], degree) for i in self.nbrs[k]], dtype=float)
            if np.any(b < 0) or not np.all(np.isfinite(b)):
                raise ValueError(f"invalid beta weights for {w!r}")
            self.betas.append(b)
            if self.alpha[k] + b.sum() <= 0:
                raise ValueError(f"alpha is 0 for isolated word {w!r}: update undefined")
        self.beta_map = {(k, i): b for k in range(len(vocab))
                         for i, b in zip(self.nbrs[k], self.betas[k])}


def retrofit_sweeps(e: EmbeddingMatrix, lex: Lexicon,
                    cfg: RetrofitConfig | None = None) -> Iterator[tuple[np.ndarray, float]]:
    """Yield ``(vectors, max_change)`` after each Gauss-Seidel sweep."""
    cfg = cfg or RetrofitConfig()
    g = _Graph(e, lex, cfg)
    x = e.vectors
    new = np.array(x, copy=True)
    active = [k for k in range(len(e)) if g.nbrs[k]]
    for _ in range(cfg.max_iterations):
        change = 0.0
        for k in active:
            b = g.betas[k]
            num = g.alpha[k] * x[k] + b @ new[g.nbrs[k]]
            upd = num / (g.alpha[k] + b.sum())
            change = max(change, float(np.max(np.abs(upd - new[k]))))
            new[k] = upd
        yield new.copy(), change
        if change <= cfg.convergence_tol:
            break


def retrofit(e: EmbeddingMatrix, lex: Lexicon,
             cfg: RetrofitConfig | None = None) -> EmbeddingMatrix:
    """Retrofit ``e`` to ``lex``; words without neighbours in ``e`` are unchanged."""
    cfg = cfg or RetrofitConfig()
    out = e.vectors
    n = 0
    for out, change in retrofit_sweeps(e, lex, cfg):
        n += 1
    log.info("retrofit: %d sweep(s), last max change %.3g", n, change)
    return e.with_vectors(out)


def balance_weights(e: EmbeddingMatrix, lex: Lexicon, cfg: RetrofitConfig) -> np.ndarray:
    """Per-word weights c with c_j * beta_ji == c_i * beta_ij on every edge.

    Each connected component is scaled so its first word has weight 1; for
    inverse-degree betas c is then proportional to the degree, for symmetric
    betas it is 1. Raises if the beta rule admits no such weights.
    """
    g = _Graph(e, lex, cfg)
    n = len(e)
    c = np.full(n, np.nan)
    for root in range(n):
        if not np.isnan(c[root]):
            continue
        c[root] = 1.0
        queue = deque([root])
        while queue:
            j = queue.popleft()
            for i in g.nbrs[j]:
                bji, bij = g.beta_map[(j, i)], g.beta_map[(i, j)]
                if bij == 0 or bji == 0:
                    if bij != bji:
                        raise ValueError("beta weights have no consistent balance")
                    continue
                ci = c[j] * bji / bij
                if np.isnan(c[i]):
                    c[i] = ci
                    queue.append(i)
                elif not np.isclose(c[i], ci, rtol=1e-9):
                    raise ValueError("beta weights have no consistent balance")
    return c


def objective_value(original: EmbeddingMatrix, retro: EmbeddingMatrix, lex: Lexicon,
                    cfg: RetrofitConfig | None = None,
                    convention: str = "balanced") -> float:
    """Retrofitting objective of ``retro`` relative to ``original``.

    ``convention="balanced"`` (default) weights word j's terms by its balance
    weight c_j (see :func:`balance_weights`):

        sum_j 2 c_j alpha_j |r_j - x_j|^2 + sum_(j,i) c_j beta_ji |r_j - r_i|^2

    with each directed edge (j, i) counted once. The sweep update is the exact
    minimiser of this function in each word vector, so it never increases
    across sweeps. For symmetric betas (c = 1) the edge part is the plain
    directed-edge sum.

    ``convention="literal"`` returns the unweighted
    ``sum_j alpha_j |r_j - x_j|^2 + sum_(j,i) beta_ji |r_j - r_i|^2``, which
    the update does not minimise in general.
    """
    cfg = cfg or RetrofitConfig()
    if original.vocab != retro.vocab or original.dim != retro.dim:
        raise ValueError("vocabulary mismatch between original and retrofitted matrices")
    g = _Graph(original, lex, cfg)
    x, r = original.vectors, retro.vectors
    if convention == "balanced":
        c = balance_weights(original, lex, cfg)
        anchor = 2.0
    elif convention == "literal":
        c = np.ones(len(original))
        anchor = 1.0
    else:
        raise ValueError(f"unknown convention {convention!r}")
    total = anchor * float(np.sum(c * g.alpha * np.sum((r - x) ** 2, axis=1)))
    for j in range(len(original)):
        if g.nbrs[j]:
            diff = r[j] - r[g.nbrs[j]]
            total += c[j] * float(g.betas[j] @ np.sum(diff * diff, axis=1))
    return total
