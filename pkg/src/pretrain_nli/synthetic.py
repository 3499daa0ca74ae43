"""Synthetic word-level benchmarks with known structure.

``separable_pairs`` builds a two-label task that a linear classifier on
summed embeddings solves exactly. ``Taxonomy`` plants a tree of concepts
(optionally with synonyms); its parent/child and synonym links form the
lexicon used for retrofitting, and word-pair relations follow from the tree.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingMatrix
from .negation import NegExample, Relation, Term
from .retrofit import Lexicon


def separable_pairs(n: int = 200, d: int = 16, n_words: int = 40, margin: float = 0.5,
                    seed: int = 0):
    """Two-label pairs with label ``u_p + u_h > 0`` for latent word scores u.

    Embeddings put ``u_w`` along one fixed unit direction and N(0, 1) noise in
    its orthogonal complement, so ``direction . (e_p + e_h)`` separates the
    labels with at least ``margin``. Returns ``(examples, embeddings, direction)``.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{k}" for k in range(n_words)]
    u = rng.standard_normal(n_words)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    noise = rng.standard_normal((n_words, d))
    noise -= np.outer(noise @ direction, direction)
    vecs = noise + np.outer(u, direction)
    examples = []
    while len(examples) < n:
        i, j = rng.integers(n_words, size=2)
        s = u[i] + u[j]
        if abs(s) < margin:
            continue
        examples.append(([words[i]], [words[j]], "pos" if s > 0 else "neg"))
    return examples, EmbeddingMatrix(words, vecs), direction


@dataclass
class Taxonomy:
    """Concept tree; ``words`` maps each word to its concept node."""
    parent: dict            # node -> parent node (root absent)
    concept_of: dict        # word -> node
    depth: dict             # node -> depth

    @property
    def words(self):
        return sorted(self.concept_of)

    def ancestors(self, node):
        out = []
        while node in self.parent:
            node = self.parent[node]
            out.append(node)
        return out

    def relation(self, a: str, b: str) -> Relation:
        """Relation of word ``a`` to word ``b`` (``hyponym``: a is below b)."""
        x, y = self.concept_of[a], self.concept_of[b]
        if x == y:
            return Relation.EQUAL
        if y in self.ancestors(x):
            return Relation.HYPONYM
        if x in self.ancestors(y):
            return Relation.HYPERNYM
        return Relation.DISJOINT

    def lexicon(self) -> Lexicon:
        """Parent/child links between every word of each concept, plus synonyms."""
        by_node: dict = {}
        for w, n in self.concept_of.items():
            by_node.setdefault(n, []).append(w)
        edges = []
        for ws in by_node.values():
            edges.extend(itertools.combinations(ws, 2))
        for child, par in self.parent.items():
            for a in by_node.get(child, ()):
                for b in by_node.get(par, ()):
                    edges.append((a, b))
        return Lexicon.from_edges(edges)

    def all_pairs(self):
        ws = self.words
        return [(a, b, self.relation(a, b)) for a in ws for b in ws if a != b]


def planted_taxonomy(branching: int = 3, depth: int = 3, synonym_rate: float = 0.3,
                     root: bool = False, seed: int = 0) -> Taxonomy:
    """Full ``branching``-ary tree; each node gets a word and, with
    probability ``synonym_rate``, a second synonymous word. Without ``root``
    the top node is dropped so the first level is a set of disjoint
    categories."""
    rng = np.random.default_rng(seed)
    parent, dep = {}, {0: 0}
    level, nxt = [0], 1
    for k in range(1, depth + 1):
        new = []
        for p in level:
            for _ in range(branching):
                parent[nxt] = p
                dep[nxt] = k
                new.append(nxt)
                nxt += 1
        level = new
    nodes = sorted(dep)
    if not root:
        nodes.remove(0)
        parent = {c: p for c, p in parent.items() if p != 0}
    concept_of = {}
    for n in nodes:
        concept_of[f"c{n}"] = n
        if rng.random() < synonym_rate:
            concept_of[f"c{n}s"] = n
    return Taxonomy(parent, concept_of, dep)


def balanced_pairs(tax: Taxonomy, per_label: int, seed: int, labels=None):
    """Up to ``per_label`` random word pairs for each relation."""
    rng = np.random.default_rng(seed)
    by_rel: dict = {}
    for a, b, r in tax.all_pairs():
        by_rel.setdefault(r, []).append((a, b, r))
    out = []
    for r in sorted(by_rel, key=str):
        if labels is not None and r not in labels:
            continue
        pool = by_rel[r]
        idx = rng.permutation(len(pool))[:per_label]
        out.extend(pool[i] for i in sorted(idx))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def as_examples(pairs):
    return [([a], [b], str(r)) for a, b, r in pairs]


def as_negation_base(pairs):
    return [NegExample(Term(a), Term(b), r) for a, b, r in pairs]
