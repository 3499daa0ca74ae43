import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pretrain_nli.negation import (BASE_RELATIONS, NEGATION_TABLE, DegenerateDenotation,
                                   NegExample, Relation, Term, combine_labels, derive_all,
                                   expand_once, format_tsv, generate_dataset, implies,
                                   label_counts, largest_remainder, negate_relation,
                                   read_tsv, replay, set_semantics_oracle,
                                   stratified_downsample)

R = Relation
ALL = list(Relation)
PATTERNS = [(True, True), (False, True), (True, False)]


def base(p, q, rel):
    return NegExample(Term(p), Term(q), R(rel))


def random_denotations(rng, size=12):
    """Nonempty proper subsets p, q of range(size) whose union is not everything."""
    while True:
        p = {i for i in range(size) if rng.random() < 0.4}
        q = {i for i in range(size) if rng.random() < 0.4}
        if rng.random() < 0.25:
            q = set(p)
        elif rng.random() < 0.25 and p:
            q = p | {i for i in range(size) if rng.random() < 0.2}
        if p and q and len(p) < size and len(q) < size and len(p | q) < size:
            return {"p": p, "q": q}, range(size)


# -------------------------------------------------------------------- table

def test_table_examples():
    assert negate_relation(R.DISJOINT, True, True) is R.NEUTRAL
    assert negate_relation(R.EQUAL, False, True) is R.DISJOINT
    assert negate_relation(R.HYPONYM, True, True) is R.HYPERNYM
    for r in ALL:
        assert negate_relation(r, False, False) is r


def test_full_negation_twice_restores_containment():
    for r in (R.HYPERNYM, R.HYPONYM, R.EQUAL):
        assert negate_relation(negate_relation(r, True, True), True, True) is r


def test_single_negation_swap_symmetry():
    for r in ALL:
        assert negate_relation(r, True, False).swap() is negate_relation(r.swap(), False, True)


def test_set_semantics_agrees_with_table():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        den, uni = random_denotations(rng)
        rel = set_semantics_oracle(den, Term("p"), Term("q"), uni)
        np_, nq = PATTERNS[rng.integers(3)]
        got = set_semantics_oracle(den, Term("p", int(np_)), Term("q", int(nq)), uni)
        assert got is negate_relation(rel, np_, nq)


def test_oracle_examples_and_guard():
    uni = range(1, 5)
    assert set_semantics_oracle({"p": {1}, "q": {1, 2}}, Term("p"), Term("q"), uni) is R.HYPONYM
    assert set_semantics_oracle({"p": {1}, "q": {2}}, Term("p"), Term("q"), uni) is R.DISJOINT
    assert set_semantics_oracle({"p": {1}, "q": {2}}, Term("p", 1), Term("q", 1),
                                uni) is R.NEUTRAL
    with pytest.raises(DegenerateDenotation):
        set_semantics_oracle({"p": set(), "q": {2}}, Term("p"), Term("q"), uni)
    with pytest.raises(DegenerateDenotation):
        set_semantics_oracle({"p": {1, 2}, "q": {3, 4}}, Term("p"), Term("q"), uni)


# ------------------------------------------------------------------- terms

def test_term_surface_and_parse():
    t = Term("dog", 2)
    assert t.surface == "not not dog" and t.tokens == ["not", "not", "dog"]
    assert Term.parse("not not dog") == t
    assert Term.parse("not") == Term("not")
    with pytest.raises(ValueError):
        Term.parse("dog not")
    with pytest.raises(ValueError):
        Term("two words")


# --------------------------------------------------------------- expansion

def test_expand_once_equal():
    out = expand_once([base("p", "q", "equal")])
    got = {(e.premise.surface, e.hypothesis.surface, e.relation) for e in out}
    assert got == {("not p", "not q", R.EQUAL), ("p", "not q", R.DISJOINT),
                   ("not p", "q", R.DISJOINT)}
    assert all(e.level == 1 for e in out)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(BASE_RELATIONS), min_size=1, max_size=6))
def test_expand_cardinality(rels):
    exs = [base(f"a{k}", f"b{k}", r) for k, r in enumerate(rels)]
    assert len(expand_once(exs)) == 3 * len(exs)
    assert len(expand_once(expand_once(exs))) == 9 * len(exs)


def test_thirteen_derivations_per_base_before_dedup():
    exs = [base(f"a{k}", f"b{k}", r) for k, r in enumerate(BASE_RELATIONS)]
    merged, per_level = derive_all(exs, 2)
    assert sum(per_level) == 13 * len(exs)
    assert len(merged) <= 13 * len(exs)


def test_merge_labels():
    assert combine_labels([R.HYPONYM, R.NEUTRAL]) is R.HYPONYM
    assert combine_labels([R.HYPONYM, R.HYPERNYM]) is R.EQUAL
    assert combine_labels([R.NEUTRAL, R.NEUTRAL]) is R.NEUTRAL
    with pytest.raises(ValueError, match="contradictory"):
        combine_labels([R.DISJOINT, R.HYPONYM])
    assert implies(R.EQUAL, R.HYPONYM) and not implies(R.HYPONYM, R.EQUAL)
    assert all(implies(r, R.NEUTRAL) for r in ALL)


def test_equal_root_merges_to_equal():
    merged, _ = derive_all([base("a", "b", "equal")], 3)
    ex = merged[(Term("a", 1), Term("b", 3))]
    assert ex.relation is R.EQUAL


@pytest.mark.parametrize("rel", BASE_RELATIONS)
def test_merged_labels_sound_under_set_semantics(rel):
    """Every merged label holds for a concrete set model of the root."""
    models = {R.HYPONYM: ({1}, {1, 2}), R.HYPERNYM: ({1, 2}, {1}), R.EQUAL: ({1}, {1}),
              R.DISJOINT: ({1}, {2})}
    p, q = models[rel]
    den, uni = {"a": p, "b": q}, range(1, 6)
    merged, _ = derive_all([base("a", "b", rel)], 5)
    for (pt, qt), ex in merged.items():
        truth = set_semantics_oracle(den, pt, qt, uni)
        assert implies(truth, ex.relation), (pt.surface, qt.surface, ex.relation, truth)
        assert implies(ex.relation, replay(ex))


# ------------------------------------------------------------- downsampling

def test_largest_remainder():
    assert largest_remainder(100, {"n": 50, "a": 25, "b": 25}) == {"n": 50, "a": 25, "b": 25}
    assert largest_remainder(10, {"x": 1, "y": 1, "z": 1}) == {"x": 4, "y": 3, "z": 3}
    assert sum(largest_remainder(7, {"x": 0.3, "y": 0.7}).values()) == 7


def test_stratified_downsample_shortage_warns():
    pool = [base(f"w{i}", "q", "neutral") for i in range(3)] + [base("x", "y", "hyponym")]
    with pytest.warns(RuntimeWarning, match="only 1"):
        out = stratified_downsample(pool, 4, {R.NEUTRAL: 1, R.HYPONYM: 1},
                                    np.random.default_rng(0))
    assert label_counts(out) == {R.NEUTRAL: 2, R.HYPONYM: 1}


def small_base():
    words = [f"w{k}" for k in range(12)]
    rels = list(BASE_RELATIONS)
    return [base(words[k], words[(k * 5 + 1) % 12], rels[k % 4]) for k in range(12)]


def test_generate_dataset_splits():
    ds = generate_dataset(small_base(), 2, (3, 4), downsample_to=60, seed=1)
    train_keys = {(e.premise, e.hypothesis) for e in ds.train}
    assert all(e.level <= 2 for e in ds.train)
    for k, exs in ds.tests.items():
        assert all(e.level == k for e in exs)
        assert not train_keys & {(e.premise, e.hypothesis) for e in exs}
        assert all(implies(e.relation, replay(e)) for e in exs)
    cum = generate_dataset(small_base(), 2, (3, 4), None, 1, cumulative_tests=True)
    assert {e.level for e in cum.tests[4]} == {3, 4}


def test_generate_dataset_label_shares_and_determinism():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = generate_dataset(small_base(), 2, (3, 4, 5), downsample_to=80, seed=3)
        b = generate_dataset(small_base(), 2, (3, 4, 5), downsample_to=80, seed=3)
    assert format_tsv(a.train) == format_tsv(b.train)
    counts = label_counts(a.train)
    for k, exs in a.tests.items():
        assert format_tsv(exs) == format_tsv(b.tests[k])
        want = largest_remainder(len(exs), counts)
        got = label_counts(exs)
        # shares match train within one example per label (when the pool allows)
        if len(exs) == 80:
            assert all(abs(got.get(r, 0) - n) <= 1 for r, n in want.items())


def test_generate_dataset_validates():
    with pytest.raises(ValueError):
        generate_dataset(small_base(), 3, (3, 4))
    with pytest.raises(ValueError):
        generate_dataset([base("a", "b", "neutral")], 2, (3,))


def test_tsv_roundtrip():
    exs = [NegExample(Term("a", 2), Term("b"), R.HYPONYM)]
    text = format_tsv(exs)
    assert text == "not not a\tb\thyponym\n"
    assert read_tsv(io.StringIO(text)) == exs
    with pytest.raises(ValueError, match="line 1"):
        read_tsv(io.StringIO("a\tb\tsynonym\n"))


def test_table_covers_every_relation():
    assert set(NEGATION_TABLE) == set(ALL)
    assert all(len(row) == 3 for row in NEGATION_TABLE.values())
