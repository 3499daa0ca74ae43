"""Two-stage random hyperparameter search.

Stage one samples the whole space. Stage two anneals: each iteration samples
a box centred on the incumbent whose width (in the dimension's sampling
scale, i.e. log space for log-uniform dimensions) is ``shrink**k`` times the
original width, clipped to the original bounds.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

SCALES = ("uniform", "log_uniform")


@dataclass(frozen=True)
class Continuous:
    name: str
    lower: float
    upper: float
    scale: str = "uniform"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"unknown scale {self.scale!r}")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.scale == "log_uniform" and self.lower <= 0:
            raise ValueError(f"{self.name}: log_uniform needs lower > 0")

    def to_scale(self, v):
        return np.log(v) if self.scale == "log_uniform" else v

    def from_scale(self, u):
        return float(np.exp(u)) if self.scale == "log_uniform" else float(u)

    @property
    def scaled_bounds(self):
        return float(self.to_scale(self.lower)), float(self.to_scale(self.upper))

    def clip(self, v):
        return min(max(v, self.lower), self.upper)


@dataclass(frozen=True)
class Categorical:
    name: str
    choices: tuple

    def __post_init__(self):
        if not self.choices:
            raise ValueError(f"{self.name}: no choices")
        object.__setattr__(self, "choices", tuple(self.choices))


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("duplicate dimension names")

    @property
    def continuous(self):
        return [d for d in self.dims if isinstance(d, Continuous)]

    @property
    def categorical(self):
        return [d for d in self.dims if isinstance(d, Categorical)]

    def contains(self, params) -> bool:
        for d in self.dims:
            v = params.get(d.name)
            if isinstance(d, Continuous):
                if v is None or not d.lower <= v <= d.upper:
                    return False
            elif v not in d.choices:
                return False
        return True


def default_space() -> SearchSpace:
    """Learning rate and kappa log-uniform on [0.001, 3], scheme categorical."""
    return SearchSpace((
        Continuous("learning_rate", 0.001, 3.0, "log_uniform"),
        Continuous("kappa", 0.001, 3.0, "log_uniform"),
        Categorical("init_scheme", ("gaussian", "orthogonal")),
    ))


def load_space(source) -> SearchSpace:
    """Read a space file (path or text stream); see :func:`parse_space`."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as f:
            return parse_space(f.read())
    return parse_space(source.read())


def parse_space(text: str) -> SearchSpace:
    """Parse ``name = scale lower upper`` / ``name = choice a b ...`` lines."""
    dims = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'name = ...'")
        name, rhs = (s.strip() for s in line.split("=", 1))
        kind, *rest = rhs.split()
        if kind == "choice":
            dims.append(Categorical(name, tuple(rest)))
        elif kind in SCALES:
            if len(rest) != 2:
                raise ValueError(f"line {lineno}: expected '{kind} lower upper'")
            dims.append(Continuous(name, float(rest[0]), float(rest[1]), kind))
        else:
            raise ValueError(f"line {lineno}: unknown dimension kind {kind!r}")
    return SearchSpace(dims)


@dataclass
class Trial:
    params: dict
    score: float
    seed: int
    iteration: int = 0
    index: int = 0
    wall_time: float = 0.0
    error: str | None = None

    def to_record(self):
        return {"iteration": self.iteration, "index": self.index, "params": self.params,
                "score": self.score, "seed": self.seed, "wall_time": self.wall_time,
                "error": self.error}


@dataclass(frozen=True)
class AnnealConfig:
    shrink: float = 0.9
    iterations: int = 5
    trials_per_iteration: int = 50
    freeze: tuple = ()

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must be in (0, 1)")
        if self.iterations < 1 or self.trials_per_iteration < 1:
            raise ValueError("iterations and trials_per_iteration must be >= 1")


def _draw(space: SearchSpace, rng, boxes=None, fixed=None) -> dict:
    params = {}
    for d in space.dims:
        if fixed and d.name in fixed:
            params[d.name] = fixed[d.name]
        elif isinstance(d, Continuous):
            lo, hi = boxes[d.name] if boxes else d.scaled_bounds
            params[d.name] = d.clip(d.from_scale(rng.uniform(lo, hi)))
        else:
            params[d.name] = d.choices[int(rng.integers(len(d.choices)))]
    return params


def sample(space: SearchSpace, seed: int) -> dict:
    """One point: uniform in each dimension's sampling scale."""
    return _draw(space, np.random.default_rng(seed))


def trial_seed(seed: int, iteration: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, index]).generate_state(1)[0])


def _evaluate(evaluator, params, seed, iteration, index) -> Trial:
    t0 = time.perf_counter()
    try:
        score = float(evaluator(params, seed))
        if math.isnan(score):
            raise ValueError("evaluator returned NaN")
        err = None
    except Exception as exc:  # failed trials are recorded, not fatal
        log.warning("trial %d/%d failed: %s", iteration, index, exc)
        score, err = -math.inf, f"{type(exc).__name__}: {exc}"
    return Trial(dict(params), score, seed, iteration, index,
                 time.perf_counter() - t0, err)


def _run_batch(evaluator, jobs, threads):
    if threads <= 1:
        return [_evaluate(evaluator, *j) for j in jobs]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda j: _evaluate(evaluator, *j), jobs))


def _argmax(trials: Sequence[Trial]) -> Trial:
    best = trials[0]
    for t in trials[1:]:
        if t.score > best.score:
            best = t
    return best


def coarse_search(space: SearchSpace, evaluator: Callable[[dict, int], float], n: int,
                  seed: int, threads: int = 1, log_path=None):
    """Evaluate ``n`` independent samples; returns ``(best, trials)``.

    ``evaluator(params, seed)`` returns a score to maximise. Ties go to the
    lowest trial index. Exceptions score ``-inf``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    jobs = []
    for k in range(n):
        s = trial_seed(seed, 0, k)
        jobs.append((sample(space, s), s, 0, k))
    trials = _run_batch(evaluator, jobs, threads)
    if log_path is not None:
        append_trials(log_path, trials)
    return _argmax(trials), trials


def box_width(dim: Continuous, shrink: float, k: int) -> float:
    """Nominal scaled width of ``dim``'s box at anneal iteration ``k``."""
    lo, hi = dim.scaled_bounds
    return shrink ** k * (hi - lo)


def anneal_boxes(space: SearchSpace, center: dict, shrink: float, k: int) -> dict:
    """Sampling box per continuous dimension at anneal iteration ``k`` (1-based).

    Nominal width is ``shrink**k`` of the original scaled width; the box is
    centred on ``center`` and then clipped to the original bounds.
    """
    boxes = {}
    for d in space.continuous:
        lo, hi = d.scaled_bounds
        half = 0.5 * box_width(d, shrink, k)
        c = float(d.to_scale(center[d.name]))
        boxes[d.name] = (max(lo, c - half), min(hi, c + half))
    return boxes


def annealed_search(space: SearchSpace, evaluator, cfg: AnnealConfig, start: Trial,
                    seed: int, threads: int = 1, log_path=None):
    """Iteratively annealed refinement around ``start``.

    Categorical dimensions (and any names in ``cfg.freeze``) are held at the
    incumbent's values throughout. Returns ``(best, history)`` where history
    excludes ``start``.
    """
    if not space.contains(start.params):
        raise ValueError("start params are outside the search space")
    fixed_names = {d.name for d in space.categorical} | set(cfg.freeze)
    best = start
    history = []
    for k in range(1, cfg.iterations + 1):
        boxes = anneal_boxes(space, best.params, cfg.shrink, k)
        fixed = {n: best.params[n] for n in fixed_names}
        jobs = []
        for j in range(cfg.trials_per_iteration):
            s = trial_seed(seed, k, j)
            jobs.append((_draw(space, np.random.default_rng(s), boxes, fixed), s, k, j))
        trials = _run_batch(evaluator, jobs, threads)
        history.extend(trials)
        if log_path is not None:
            append_trials(log_path, trials)
        cand = _argmax(trials)
        if cand.score > best.score:
            best = cand
        log.info("anneal iteration %d: best %.4f", k, best.score)
    return best, history


def append_trials(path, trials) -> None:
    """Append one JSON record per trial."""
    with open(path, "a", encoding="utf-8") as f:
        for t in trials:
            f.write(json.dumps(t.to_record(), sort_keys=True) + "\n")
