"""Finite-difference oracle for the classifier gradients."""

import numpy as np

from pretrain_nli import seq2seq as s2s
from pretrain_nli.initializers import InitSpec


def tiny_problem(d=8, layers=2, attention=True, labels=3, batch=4, vocab=10, seed=0,
                 dropout_p=0.2):
    config = s2s.ModelConfig(d=d, layers=layers, num_labels=labels, dropout_p=dropout_p,
                             attention=attention, window_D=5)
    params = s2s.init_params(config, vocab, InitSpec("gaussian", 1.0, layers, seed))
    rng = np.random.default_rng(seed + 1)
    lengths = [(3, 2), (5, 4), (2, 5), (4, 1)]
    batch_ = [(list(rng.integers(1, vocab, p)), list(rng.integers(1, vocab, h)),
               int(rng.integers(labels))) for p, h in lengths[:batch]]
    return config, params, batch_


def mean_loss(params, config, batch, dropout_seed):
    rng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
    probs, _, _ = s2s.forward(params, config, [b[0] for b in batch], [b[1] for b in batch], rng)
    return -np.mean(np.log(probs[np.arange(len(batch)), [b[2] for b in batch]]))


def numeric_gradients(params, config, batch, dropout_seed=5, eps=1e-3):
    """Fourth-order central differences: error O(eps^4) plus roundoff ~1e-16/eps."""
    out = {}
    f = lambda: mean_loss(params, config, batch, dropout_seed)
    for name, p in params.items():
        flat = p.reshape(-1)
        g = np.empty(flat.size)
        for k in range(flat.size):
            old = flat[k]
            vals = []
            for step in (2 * eps, eps, -eps, -2 * eps):
                flat[k] = old + step
                vals.append(f())
            flat[k] = old
            g[k] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * eps)
        out[name] = g.reshape(p.shape)
    return out


def max_relative_error(config, params, batch, dropout_seed=5):
    """Largest ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-7)``."""
    _, grads = s2s.loss_and_gradients(batch, params, config, dropout_seed)
    num = numeric_gradients(params, config, batch, dropout_seed)
    worst = 0.0
    for name in params:
        a, n = grads[name], num[name]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)
        worst = max(worst, float(err.max()))
    return worst
