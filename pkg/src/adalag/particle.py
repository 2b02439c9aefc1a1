"""Bootstrap particle filter, categorical sampling and genealogy tracking.

Indices are zero based throughout. Resampling is multinomial and happens at
every step.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import DegenerateWeightsError, RetentionError, WeightCollapseError
from .models import ModelSpec

Array = np.ndarray
TestFunction = Callable[[Array], Array]


@dataclass(frozen=True)
class WeightedSample:
    """One particle generation.

    ``ancestors[i]`` is the index in the previous generation that particle
    ``i`` was propagated from; it is ``None`` for the initial generation.
    """

    t: int
    particles: Array
    weights: Array
    ancestors: Array | None = None

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weights)

    def normalized_weights(self) -> Array:
        return self.weights / self.weights.sum()

    def ess(self) -> float:
        w = self.normalized_weights()
        return float(1.0 / np.dot(w, w))


def _cumulative(weights: Array) -> Array:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or len(w) == 0:
        raise DegenerateWeightsError("weights must be a non-empty vector")
    cum = np.cumsum(w)
    total = cum[-1]
    if not (total > 0 and math.isfinite(total)) or np.any(w < 0):
        raise DegenerateWeightsError(f"cannot sample from weights with total {total}")
    return cum


def categorical_draws(weights, rng: np.random.Generator, size: int) -> Array:
    """``size`` independent indices with ``P(i) = w_i / sum(w)``.

    Inverse CDF: the returned index is the first whose cumulative weight
    exceeds ``u * total``, so zero-weight atoms are never selected.
    """
    cum = _cumulative(weights)
    u = rng.random(size) * cum[-1]
    return np.searchsorted(cum, u, side="right")


def categorical_draw(weights, rng: np.random.Generator) -> int:
    return int(categorical_draws(weights, rng, 1)[0])


def _weights(model: ModelSpec, y, particles: Array, t: int) -> Array:
    w = np.exp(model.log_likelihood(np.asarray(y, dtype=float), particles))
    if not np.any(w > 0) or not np.all(np.isfinite(w)):
        raise WeightCollapseError(t)
    return w


def bootstrap_init(model: ModelSpec, n_particles: int, rng: np.random.Generator,
                   y=None) -> WeightedSample:
    """Draw from the initial law and weight by the first likelihood."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    y = model.observation(0) if y is None else y
    particles = model.sample_initial(rng, n_particles)
    return WeightedSample(t=0, particles=particles, weights=_weights(model, y, particles, 0))


def bootstrap_step(sample: WeightedSample, model: ModelSpec, rng: np.random.Generator,
                   y=None) -> WeightedSample:
    """Resample, propagate through the dynamics and reweight.

    ``y`` defaults to the observation bound in ``model`` at ``sample.t + 1``.
    """
    t = sample.t + 1
    y = model.observation(t) if y is None else y
    ancestors = categorical_draws(sample.weights, rng, sample.size)
    particles = model.sample_transition(sample.particles[ancestors], rng)
    return WeightedSample(t=t, particles=particles,
                          weights=_weights(model, y, particles, t), ancestors=ancestors)


def run_filter(model: ModelSpec, n_particles: int, rng: np.random.Generator) -> Iterator[WeightedSample]:
    """Yield the filter samples for every observation bound in ``model``."""
    sample = bootstrap_init(model, n_particles, rng)
    yield sample
    for _ in range(model.horizon):
        sample = bootstrap_step(sample, model, rng)
        yield sample


def _evaluate(f: TestFunction, particles: Array) -> Array:
    return np.broadcast_to(np.asarray(f(particles), dtype=float), (len(particles),))


def weighted_mean(weights: Array, values: Array) -> float:
    """Self-normalised mean, exactly rounded so it is permutation invariant."""
    total = math.fsum(weights)
    if not total > 0:
        raise DegenerateWeightsError("total weight is zero")
    return math.fsum(np.asarray(weights) * np.asarray(values)) / total


def filter_estimate(sample: WeightedSample, f: TestFunction) -> float:
    return weighted_mean(sample.weights, _evaluate(f, sample.particles))


class GenealogyStore:
    """Ring buffer of the last ``window`` particle generations.

    Keeps particles, weights and ancestor indices so that genealogical
    indices ``G_{s|t}`` can be traced for any retained ``s``.
    """

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._gens: deque[WeightedSample] = deque(maxlen=window)

    def push(self, sample: WeightedSample) -> None:
        if self._gens and sample.t != self._gens[-1].t + 1:
            raise ValueError(f"expected generation {self._gens[-1].t + 1}, got {sample.t}")
        self._gens.append(sample)

    @property
    def latest(self) -> int:
        if not self._gens:
            raise RetentionError("store is empty")
        return self._gens[-1].t

    @property
    def oldest(self) -> int:
        if not self._gens:
            raise RetentionError("store is empty")
        return self._gens[0].t

    def generation(self, t: int) -> WeightedSample:
        if not self._gens or not self.oldest <= t <= self.latest:
            raise RetentionError(f"generation {t} is not retained")
        return self._gens[t - self.oldest]

    def ancestors_of(self, s: int, t: int | None = None) -> Array:
        """Genealogical indices ``G_{s|t}`` of every particle at time ``t``."""
        t = self.latest if t is None else t
        if s > t:
            raise ValueError(f"need s <= t, got s={s}, t={t}")
        self.generation(s)
        idx = np.arange(self.generation(t).size)
        for u in range(t, s, -1):
            idx = self.generation(u).ancestors[idx]
        return idx


def poor_mans_estimate(store: GenealogyStore, s: int, f: TestFunction, t: int | None = None) -> float:
    """Weights at time ``t`` applied to ``f`` at the time-``s`` ancestors."""
    t = store.latest if t is None else t
    idx = store.ancestors_of(s, t)
    values = _evaluate(f, store.generation(s).particles)[idx]
    return weighted_mean(store.generation(t).weights, values)


def unique_ancestors(store: GenealogyStore, s: int, t: int | None = None) -> int:
    return len(np.unique(store.ancestors_of(s, t)))
