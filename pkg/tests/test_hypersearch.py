import io
import json
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pretrain_nli import hypersearch as hs


def lr_space():
    return hs.SearchSpace((hs.Continuous("lr", 0.001, 3.0, "log_uniform"),))


def two_dim():
    return hs.SearchSpace((hs.Continuous("lr", 0.001, 3.0, "log_uniform"),
                           hs.Continuous("m", 0.0, 1.0),
                           hs.Categorical("scheme", ("gaussian", "orthogonal"))))


def bowl(params, seed=None):
    return -((math.log(params["lr"]) - math.log(0.1)) ** 2 + (params["m"] - 0.3) ** 2)


# -------------------------------------------------------------------- space

def test_dimension_validation():
    with pytest.raises(ValueError):
        hs.Continuous("x", 1.0, 1.0)
    with pytest.raises(ValueError):
        hs.Continuous("x", 0.0, 1.0, "log_uniform")
    with pytest.raises(ValueError):
        hs.Categorical("c", ())
    with pytest.raises(ValueError):
        hs.SearchSpace((hs.Continuous("x", 0, 1), hs.Continuous("x", 0, 2)))


def test_parse_space():
    space = hs.parse_space("lr = log_uniform 0.001 3  # rate\n\nscheme = choice a b\n")
    assert space.dims == (hs.Continuous("lr", 0.001, 3.0, "log_uniform"),
                          hs.Categorical("scheme", ("a", "b")))
    assert hs.load_space(io.StringIO("x = uniform 0 1\n")).dims[0].name == "x"
    with pytest.raises(ValueError, match="line 1"):
        hs.parse_space("x = gamma 1 2\n")
    with pytest.raises(ValueError, match="line 1"):
        hs.parse_space("x = uniform 1\n")


def test_default_space():
    space = hs.default_space()
    assert [d.name for d in space.dims] == ["learning_rate", "kappa", "init_scheme"]
    assert space.continuous[0].lower == 0.001 and space.continuous[0].upper == 3.0


# ------------------------------------------------------------------ sampling

def test_log_uniform_median():
    space = lr_space()
    rng = np.random.default_rng(0)
    draws = np.array([hs._draw(space, rng)["lr"] for _ in range(100000)])
    assert abs(np.mean(draws < math.sqrt(0.001 * 3.0)) - 0.5) < 0.01


def test_collapsed_interval_and_determinism():
    space = hs.SearchSpace((hs.Continuous("x", 1.0, 1.0 + 1e-12),))
    assert all(abs(hs.sample(space, s)["x"] - 1.0) < 1e-11 for s in range(20))
    assert hs.sample(two_dim(), 5) == hs.sample(two_dim(), 5)


# ------------------------------------------------------------------- coarse

def test_coarse_single_trial():
    best, trials = hs.coarse_search(two_dim(), bowl, 1, seed=0)
    assert len(trials) == 1 and best is trials[0]


def test_coarse_finds_log_optimum():
    f = lambda p, s: -(math.log(p["lr"]) - math.log(0.1)) ** 2
    best, _ = hs.coarse_search(lr_space(), f, 500, seed=1)
    assert 0.05 <= best.params["lr"] <= 0.2


def test_coarse_failures_score_minus_inf():
    def boom(p, s):
        raise RuntimeError("no")
    best, trials = hs.coarse_search(lr_space(), boom, 4, seed=0)
    assert len(trials) == 4 and best.score == -math.inf
    assert all(t.error.startswith("RuntimeError") for t in trials)


def test_nan_score_counts_as_failure():
    best, _ = hs.coarse_search(lr_space(), lambda p, s: float("nan"), 2, seed=0)
    assert best.score == -math.inf


def test_coarse_ties_go_to_lowest_index():
    best, trials = hs.coarse_search(lr_space(), lambda p, s: 1.0, 5, seed=0)
    assert best.index == 0


def test_threads_give_identical_results():
    seen = set()

    def f(p, s):
        seen.add(threading.get_ident())
        return bowl(p) + 1e-3 * np.random.default_rng(s).random()

    _, serial = hs.coarse_search(two_dim(), f, 40, seed=3, threads=1)
    _, pooled = hs.coarse_search(two_dim(), f, 40, seed=3, threads=4)
    assert [t.score for t in serial] == [t.score for t in pooled]
    assert [t.params for t in serial] == [t.params for t in pooled]


# ------------------------------------------------------------------- anneal

def test_anneal_box_width_and_clipping():
    space = lr_space()
    lo, hi = space.continuous[0].scaled_bounds
    mid = math.exp(0.5 * (lo + hi))
    for k in (1, 3, 7):
        a, b = hs.anneal_boxes(space, {"lr": mid}, 0.9, k)["lr"]
        assert (b - a) / (hi - lo) == pytest.approx(0.9 ** k, rel=1e-12)
    a, b = hs.anneal_boxes(space, {"lr": 0.001}, 0.9, 1)["lr"]
    assert a == lo and b == pytest.approx(lo + 0.45 * (hi - lo))


def test_anneal_rejects_start_outside_space():
    start = hs.Trial({"lr": 10.0}, 0.0, 0)
    with pytest.raises(ValueError):
        hs.annealed_search(lr_space(), bowl, hs.AnnealConfig(), start, 0)


def test_anneal_freezes_categorical_and_named_dims():
    space = two_dim()
    start = hs.Trial({"lr": 0.5, "m": 0.9, "scheme": "orthogonal"}, -1e9, 0)
    cfg = hs.AnnealConfig(iterations=3, trials_per_iteration=10, freeze=("m",))
    best, hist = hs.annealed_search(space, bowl, cfg, start, seed=2)
    assert all(t.params["scheme"] == "orthogonal" and t.params["m"] == 0.9 for t in hist)


def test_anneal_log_and_reproducibility(tmp_path):
    space = two_dim()
    start, _ = hs.coarse_search(space, bowl, 10, seed=0)
    cfg = hs.AnnealConfig(iterations=2, trials_per_iteration=5)
    log_path = tmp_path / "trials.jsonl"
    b1, h1 = hs.annealed_search(space, bowl, cfg, start, 4, log_path=log_path)
    b2, h2 = hs.annealed_search(space, bowl, cfg, start, 4)
    assert [t.params for t in h1] == [t.params for t in h2]
    recs = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert len(recs) == 10
    assert set(recs[0]) == {"iteration", "index", "params", "score", "seed", "wall_time",
                            "error"}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.3, 0.95), st.integers(1, 6))
def test_anneal_invariants(seed, shrink, iterations):
    space = two_dim()
    start, _ = hs.coarse_search(space, bowl, 5, seed=seed)
    cfg = hs.AnnealConfig(shrink=shrink, iterations=iterations, trials_per_iteration=8)
    best, hist = hs.annealed_search(space, bowl, cfg, start, seed)
    assert all(space.contains(t.params) for t in hist)
    running = start.score
    for k in range(1, iterations + 1):
        it = [t.score for t in hist if t.iteration == k]
        assert len(it) == 8
        nxt = max(running, max(it))
        assert nxt >= running
        running = nxt
    assert best.score == running
