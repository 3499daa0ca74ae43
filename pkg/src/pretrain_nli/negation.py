"""Recursively negated word-level entailment data.

A base pair ``(p, q, relation)`` is expanded by negating ``p``, ``q`` or both
and mapping the relation through :data:`NEGATION_TABLE`. Repeating the
expansion gives pairs like ``not not p`` / ``not q`` whose labels follow from
the table alone.
"""

from __future__ import annotations

import enum
import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

NOT = "not"


class Relation(str, enum.Enum):
    HYPERNYM = "hypernym"
    HYPONYM = "hyponym"
    EQUAL = "equal"
    DISJOINT = "disjoint"
    NEUTRAL = "neutral"

    def __str__(self):
        return self.value

    def swap(self) -> "Relation":
        """Relation with premise and hypothesis exchanged."""
        return _CONVERSE.get(self, self)


_CONVERSE = {Relation.HYPERNYM: Relation.HYPONYM, Relation.HYPONYM: Relation.HYPERNYM}

BASE_RELATIONS = (Relation.HYPERNYM, Relation.HYPONYM, Relation.EQUAL, Relation.DISJOINT)

R = Relation
# columns: (not-p, not-q), (p, not-q), (not-p, q)
NEGATION_TABLE = {
    R.DISJOINT: (R.NEUTRAL, R.HYPONYM, R.HYPERNYM),
    R.EQUAL: (R.EQUAL, R.DISJOINT, R.DISJOINT),
    R.NEUTRAL: (R.NEUTRAL, R.NEUTRAL, R.NEUTRAL),
    R.HYPONYM: (R.HYPERNYM, R.DISJOINT, R.NEUTRAL),
    R.HYPERNYM: (R.HYPONYM, R.NEUTRAL, R.DISJOINT),
}
del R

# expansion order; codes are what derivations record
PATTERNS = ((True, True), (False, True), (True, False))
_CODES = {(True, True): "b", (False, True): "q", (True, False): "p"}
_FROM_CODE = {v: k for k, v in _CODES.items()}


def negate_relation(rel: Relation, negate_p: bool, negate_q: bool) -> Relation:
    rel = Relation(rel)
    if not negate_p and not negate_q:
        return rel
    return NEGATION_TABLE[rel][PATTERNS.index((bool(negate_p), bool(negate_q)))]


@dataclass(frozen=True)
class Term:
    word: str
    negations: int = 0

    def __post_init__(self):
        if self.negations < 0:
            raise ValueError("negations must be >= 0")
        if not self.word or any(c.isspace() for c in self.word):
            raise ValueError(f"bad word {self.word!r}")

    @property
    def tokens(self) -> list:
        return [NOT] * self.negations + [self.word]

    @property
    def surface(self) -> str:
        return " ".join(self.tokens)

    def negated(self) -> "Term":
        return Term(self.word, self.negations + 1)

    @classmethod
    def parse(cls, text: str) -> "Term":
        toks = text.split()
        if not toks:
            raise ValueError("empty term")
        n = 0
        while n < len(toks) - 1 and toks[n] == NOT:
            n += 1
        if n != len(toks) - 1:
            raise ValueError(f"term must be 'not'* word, got {text!r}")
        return cls(toks[-1], n)


@dataclass(frozen=True)
class NegExample:
    premise: Term
    hypothesis: Term
    relation: Relation
    level: int = 0
    # pattern codes applied to the base pair, oldest first
    derivation: str = ""
    base: tuple = field(default=None, compare=False)

    @property
    def key(self):
        return (self.premise, self.hypothesis)

    def as_tokens(self):
        return self.premise.tokens, self.hypothesis.tokens, self.relation.value


def expand_once(examples: Iterable[NegExample]) -> list:
    """Three negated variants per example, in (not-p,not-q), (p,not-q), (not-p,q) order."""
    out = []
    for ex in examples:
        base = ex.base if ex.base is not None else (ex.premise, ex.hypothesis, ex.relation)
        for np_, nq in PATTERNS:
            out.append(NegExample(
                ex.premise.negated() if np_ else ex.premise,
                ex.hypothesis.negated() if nq else ex.hypothesis,
                negate_relation(ex.relation, np_, nq),
                ex.level + 1,
                ex.derivation + _CODES[(np_, nq)],
                base))
    return out


def replay(ex: NegExample) -> Relation:
    """Relation obtained by re-applying the table along ``ex.derivation``."""
    if ex.base is None:
        return ex.relation
    p, q, rel = ex.base
    for code in ex.derivation:
        rel = negate_relation(rel, *_FROM_CODE[code])
    return rel


# set facts each label asserts about (p, q); neutral asserts nothing
_FACTS = {
    Relation.HYPONYM: frozenset({"sub"}),
    Relation.HYPERNYM: frozenset({"sup"}),
    Relation.EQUAL: frozenset({"sub", "sup"}),
    Relation.DISJOINT: frozenset({"disjoint"}),
    Relation.NEUTRAL: frozenset(),
}
_FROM_FACTS = {v: k for k, v in _FACTS.items()}


def implies(strong: Relation, weak: Relation) -> bool:
    """True if every fact asserted by ``weak`` is asserted by ``strong``."""
    return _FACTS[Relation(weak)] <= _FACTS[Relation(strong)]


def combine_labels(relations: Iterable[Relation]) -> Relation:
    """Conjunction of the facts asserted by several labels for one pair.

    The table is sound but not always tight (a disjoint pair with q negated
    gives ``hyponym``, which for an ``equal`` root understates ``p == q``), so
    different derivations of one surface pair can carry different labels.
    Containment both ways is ``equal``; ``neutral`` adds nothing; disjointness
    together with containment contradicts nonempty denotations.
    """
    facts = frozenset().union(*(_FACTS[Relation(r)] for r in relations))
    if facts not in _FROM_FACTS:
        raise ValueError(f"contradictory labels {sorted(map(str, set(relations)))}")
    return _FROM_FACTS[facts]


def _merge(derivations: Sequence[NegExample]) -> dict:
    """Collapse derivations to one example per surface pair.

    Level is the shallowest derivation depth of the pair and the label is
    :func:`combine_labels` over all its derivations. The stored derivation is
    the shallowest one whose label the merged label implies.
    """
    groups: dict = {}
    for ex in derivations:
        groups.setdefault(ex.key, []).append(ex)
    merged = {}
    for key, exs in groups.items():
        try:
            rel = combine_labels(e.relation for e in exs)
        except ValueError as exc:
            raise ValueError(f"{exc} for {key[0].surface!r} / {key[1].surface!r}") from None
        level = min(e.level for e in exs)
        chosen = min(exs, key=lambda e: (e.relation is not rel, -len(_FACTS[e.relation]),
                                         e.level, e.derivation))
        merged[key] = NegExample(chosen.premise, chosen.hypothesis, rel, level,
                                 chosen.derivation, chosen.base)
    return merged


def derive_all(base: Sequence[NegExample], max_depth: int):
    """Merged surface pairs up to ``max_depth`` and the per-level derivation counts."""
    roots = {}
    for ex in base:
        if ex.relation not in BASE_RELATIONS:
            raise ValueError(f"base relation must be one of {[str(r) for r in BASE_RELATIONS]}")
        prev = roots.get(ex.key)
        if prev is not None and prev.relation != ex.relation:
            raise ValueError(f"conflicting base labels for {ex.premise.surface!r} / "
                             f"{ex.hypothesis.surface!r}")
        roots[ex.key] = NegExample(ex.premise, ex.hypothesis, ex.relation, 0, "",
                                   (ex.premise, ex.hypothesis, ex.relation))
    merged = {}
    # a root's derivation tree only yields its own surface pairs, so merging
    # per root never misses a duplicate
    for root in roots.values():
        derivs, front = [root], [root]
        for _ in range(max_depth):
            front = expand_once(front)
            derivs.extend(front)
        merged.update(_merge(derivs))
    per_level = [len(roots) * 3 ** k for k in range(max_depth + 1)]
    return merged, per_level


def largest_remainder(total: int, proportions: Mapping) -> dict:
    """Integer allocation of ``total`` proportional to ``proportions``."""
    keys = sorted(proportions, key=str)
    weights = np.array([float(proportions[k]) for k in keys])
    if weights.sum() <= 0:
        return {k: 0 for k in keys}
    quotas = total * weights / weights.sum()
    alloc = np.floor(quotas).astype(int)
    rem = total - alloc.sum()
    order = sorted(range(len(keys)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[:rem]:
        alloc[i] += 1
    return {k: int(a) for k, a in zip(keys, alloc)}


def stratified_downsample(pool: Sequence[NegExample], target: int, proportions: Mapping,
                          rng) -> list:
    """Sample ``target`` examples with label shares ``proportions``.

    Labels with too few examples contribute all of them, with a warning.
    """
    want = largest_remainder(target, proportions)
    by_label: dict = {}
    for ex in pool:
        by_label.setdefault(ex.relation, []).append(ex)
    out = []
    for rel in sorted(want, key=str):
        have = by_label.get(rel, [])
        n = want[rel]
        if len(have) < n:
            warnings.warn(f"only {len(have)} '{rel}' examples available, wanted {n}",
                          RuntimeWarning, stacklevel=2)
            n = len(have)
        idx = rng.choice(len(have), size=n, replace=False) if n else []
        out.extend(have[i] for i in sorted(idx))
    return out


def label_counts(examples) -> dict:
    counts: dict = {}
    for ex in examples:
        counts[ex.relation] = counts.get(ex.relation, 0) + 1
    return counts


@dataclass
class NegationDataset:
    train: list
    tests: dict
    stats: dict


def generate_dataset(base: Sequence[NegExample], train_depth: int = 2,
                     test_depths: Sequence[int] = (3, 4, 5, 6),
                     downsample_to: int | None = 10000, seed: int = 0,
                     cumulative_tests: bool = False) -> NegationDataset:
    """Train on everything up to ``train_depth``; test per deeper level.

    Each surface pair belongs to the level of its shallowest derivation, so
    train and test pairs never overlap. Test level k holds exactly-level-k
    pairs (or levels ``train_depth+1..k`` with ``cumulative_tests``),
    downsampled to ``downsample_to`` with the train label shares.
    """
    test_depths = sorted(set(test_depths))
    if test_depths and train_depth >= test_depths[0]:
        raise ValueError("train_depth must be < every test depth")
    max_depth = max([train_depth, *test_depths])
    merged, per_level = derive_all(base, max_depth)
    order = sorted(merged.values(), key=lambda e: (e.level, e.base[0].word, e.base[1].word,
                                                   e.premise.negations, e.hypothesis.negations))
    train = [e for e in order if e.level <= train_depth]
    counts = label_counts(train)
    rng = np.random.default_rng(seed)
    tests = {}
    for k in test_depths:
        lo = train_depth + 1 if cumulative_tests else k
        pool = [e for e in order if lo <= e.level <= k]
        if downsample_to is not None and len(pool) > 0:
            pool = stratified_downsample(pool, min(downsample_to, len(pool)), counts, rng)
        tests[k] = pool
    stats = {
        "base": per_level[0],
        "train_derivations": sum(per_level[:train_depth + 1]),
        "train": len(train),
        "train_labels": {str(k): v for k, v in sorted(counts.items(), key=str)},
        "tests": {k: len(v) for k, v in tests.items()},
    }
    log.info("negation data: %s", stats)
    return NegationDataset(train, tests, stats)


class DegenerateDenotation(ValueError):
    pass


def set_semantics_oracle(denotations: Mapping[str, Iterable], p: Term, q: Term,
                         universe: Iterable | None = None) -> Relation:
    """Relation between two terms read as sets, with negation as complement.

    Base denotations must be nonempty proper subsets of the universe and
    ``p | q`` must not cover it, otherwise some relations collapse and the
    check is meaningless.
    """
    if universe is None:
        universe = set().union(*map(set, denotations.values()))
    universe = frozenset(universe)
    dp, dq = frozenset(denotations[p.word]), frozenset(denotations[q.word])
    for w, d in ((p.word, dp), (q.word, dq)):
        if not d or d == universe or not d <= universe:
            raise DegenerateDenotation(f"{w!r} must denote a nonempty proper subset")
    if dp | dq == universe:
        raise DegenerateDenotation(f"{p.word!r} and {q.word!r} cover the universe")
    a = universe - dp if p.negations % 2 else dp
    b = universe - dq if q.negations % 2 else dq
    if a == b:
        return Relation.EQUAL
    if a < b:
        return Relation.HYPONYM
    if a > b:
        return Relation.HYPERNYM
    if not a & b:
        return Relation.DISJOINT
    return Relation.NEUTRAL


def read_tsv(source) -> list:
    """``premise<TAB>hypothesis<TAB>relation`` lines as level-0 examples."""
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
        try:
            rel = Relation(parts[2].strip().lower())
        except ValueError:
            raise ValueError(f"line {lineno}: unknown relation {parts[2]!r}") from None
        out.append(NegExample(Term.parse(parts[0]), Term.parse(parts[1]), rel))
    return out


def format_tsv(examples: Iterable[NegExample]) -> str:
    return "".join(f"{e.premise.surface}\t{e.hypothesis.surface}\t{e.relation.value}\n"
                   for e in examples)
