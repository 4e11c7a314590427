"""Sensor-subset search: greedy forward selection, random subsets, exhaustive oracle."""
from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linop import DESIGN, substream

Criterion = Callable[[np.ndarray], float]

EXHAUSTIVE_LIMIT = 10**6


@dataclass
class DesignSearchResult:
    """Outcome of a subset search over ``d`` candidates."""

    w: np.ndarray
    indices: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    step_seconds: list = field(default_factory=list)
    n_evaluations: int = 0

    @property
    def value(self) -> float:
        return self.trace[-1] if self.trace else float("nan")

    def to_json(self) -> str:
        return json.dumps({"w": self.w.tolist(), "indices": self.indices, "trace": self.trace,
                           "n_evaluations": self.n_evaluations})


class GreedyAborted(RuntimeError):
    """A criterion evaluation failed; ``partial`` holds the steps completed so far."""

    def __init__(self, partial: DesignSearchResult, cause: BaseException):
        super().__init__(f"greedy search aborted after {len(partial.indices)} steps: {cause}")
        self.partial = partial


def _score(criterion: Criterion, w) -> float:
    return float(criterion(w))


def greedy_minimize(criterion: Criterion, d: int, k: int) -> DesignSearchResult:
    """Add one sensor at a time, each time the one giving the smallest criterion.

    Ties go to the lowest index. Uses ``d + (d-1) + ... + (d-k+1)`` evaluations.
    """
    if not 0 <= k <= d:
        raise ValueError(f"design size {k} must be in [0, {d}]")
    w = np.zeros(d, dtype=np.int64)
    res = DesignSearchResult(w.copy())
    for _ in range(k):
        t0 = time.perf_counter()
        best, best_j = np.inf, -1
        for j in np.flatnonzero(w == 0):
            trial = w.copy()
            trial[j] = 1
            try:
                val = _score(criterion, trial)
            except Exception as exc:
                res.w = w.copy()
                raise GreedyAborted(res, exc) from exc
            res.n_evaluations += 1
            if val < best:
                best, best_j = val, int(j)
        w[best_j] = 1
        res.indices.append(best_j)
        res.trace.append(best)
        res.step_seconds.append(time.perf_counter() - t0)
    res.w = w
    return res


def random_design(d: int, k: int, seed: int) -> np.ndarray:
    """Uniformly random ``k``-subset of ``d`` candidates as a 0/1 vector."""
    if not 0 <= k <= d:
        raise ValueError(f"design size {k} must be in [0, {d}]")
    w = np.zeros(d, dtype=np.int64)
    w[substream(seed, DESIGN).choice(d, size=k, replace=False)] = 1
    return w


def exhaustive_minimize(criterion: Criterion, d: int, k: int) -> DesignSearchResult:
    """True minimizer over all ``k``-subsets (guarded against combinatorial blow-up)."""
    if not 0 <= k <= d:
        raise ValueError(f"design size {k} must be in [0, {d}]")
    count = math.comb(d, k)
    if count > EXHAUSTIVE_LIMIT:
        raise ValueError(f"C({d}, {k}) = {count} subsets exceeds the limit {EXHAUSTIVE_LIMIT}")
    best, best_idx = np.inf, None
    for idx in itertools.combinations(range(d), k):
        w = np.zeros(d, dtype=np.int64)
        w[list(idx)] = 1
        val = _score(criterion, w)
        if val < best:
            best, best_idx = val, idx
    w = np.zeros(d, dtype=np.int64)
    w[list(best_idx)] = 1
    return DesignSearchResult(w, list(best_idx), [best], [], count)
