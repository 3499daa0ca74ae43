"""Independent reference computations shared by the tests."""

import numpy as np

from pretrain_nli.embeddings import EmbeddingMatrix
from pretrain_nli.retrofit import Lexicon


def direct_solve(e: EmbeddingMatrix, lex: Lexicon, alpha=1.0, beta="inverse_degree"):
    """Dense solve of the stationarity system the update iterates towards."""
    n = len(e)
    idx = {w: k for k, w in enumerate(e.vocab)}
    nbrs = [[idx[u] for u in lex.neighbors(w) if u in idx] for w in e.vocab]
    A = np.zeros((n, n))
    b = np.array(e.vectors, copy=True)
    for j in range(n):
        if not nbrs[j]:
            A[j, j] = 1.0
            continue
        bj = 1.0 / len(nbrs[j]) if beta == "inverse_degree" else 1.0
        A[j, j] = alpha + bj * len(nbrs[j])
        for i in nbrs[j]:
            A[j, i] -= bj
        b[j] = alpha * e.vectors[j]
    return np.linalg.solve(A, b)


def random_instance(rng, n, d, p=0.3):
    words = [f"v{k}" for k in range(n)]
    edges = [(words[a], words[b]) for a in range(n) for b in range(a + 1, n)
             if rng.random() < p]
    e = EmbeddingMatrix(words, rng.standard_normal((n, d)))
    return e, Lexicon.from_edges(edges)
