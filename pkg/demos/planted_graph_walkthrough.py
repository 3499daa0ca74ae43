"""Walk through retrofitting and negation data on a planted concept tree.

Run with ``python3 demos/planted_graph_walkthrough.py``. Takes a few seconds.
"""

import warnings

import numpy as np

from pretrain_nli.embeddings import preprocess, random_embeddings
from pretrain_nli.negation import generate_dataset, label_counts
from pretrain_nli.retrofit import RetrofitConfig, objective_value, retrofit
from pretrain_nli.synthetic import as_negation_base, balanced_pairs, planted_taxonomy


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def mean_link_cosine(emb, lex):
    sims = [cosine(emb[w], emb[u]) for w in emb.vocab for u in lex.neighbors(w) if u in emb]
    return float(np.mean(sims))


def main():
    tax = planted_taxonomy(branching=4, depth=3, synonym_rate=0.3, seed=0)
    lex = tax.lexicon()
    print(f"{len(tax.words)} words, {sum(len(lex.neighbors(w)) for w in tax.words) // 2} links")

    base = random_embeddings(tax.words, 32, 1.0, seed=0)
    cfg = RetrofitConfig(alpha=0.2, max_iterations=50)
    retro = retrofit(base, lex, cfg)
    print("objective before/after retrofit: "
          f"{objective_value(base, base, lex, cfg):.1f} -> {objective_value(base, retro, lex, cfg):.1f}")
    print(f"mean cosine across links: random {mean_link_cosine(base, lex):+.3f}, "
          f"retrofitted {mean_link_cosine(retro, lex):+.3f}")
    pre = preprocess(retro)
    print(f"after preprocessing: column means ~{np.abs(pre.vectors.mean(0)).max():.1e}, "
          f"column std {pre.vectors.std(0).mean():.3f}")

    pairs = balanced_pairs(tax, 5, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ds = generate_dataset(as_negation_base(pairs), 2, (3, 4, 5, 6), 200, seed=0)
    print(f"negation train set: {len(ds.train)} pairs, labels "
          f"{ {str(k): v for k, v in label_counts(ds.train).items()} }")
    for depth, exs in ds.tests.items():
        ex = exs[0]
        print(f"  depth {depth}: {len(exs)} pairs, e.g. '{ex.premise.surface}' / "
              f"'{ex.hypothesis.surface}' -> {ex.relation}")


if __name__ == "__main__":
    main()
