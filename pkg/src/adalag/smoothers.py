"""Particle-based marginal smoothers.

The adaptive-lag smoother keeps a bank of active estimators, one per
marginal ``s``. Each holds a vector of statistics ``tau_{s|t}^i`` estimating
``E[h_s(X_s) | X_t = xi_t^i, y_{0:t-1}]``. Every step the statistics are
pushed forward by averaging ``K`` backward draws (PaRIS update); a marginal
is finalised as soon as the weighted variance of its statistics drops below
the tolerance.

Also here: the O(N^2) forward-filtering backward-smoothing update used as a
correctness oracle, and the fixed-lag smoother baseline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ActiveSetOverflowError,
    DegenerateBackwardWeightsError,
    InvalidParameterError,
)
from .models import ModelSpec
from .particle import (
    GenealogyStore,
    WeightedSample,
    _cumulative,
    bootstrap_init,
    bootstrap_step,
    poor_mans_estimate,
)
from .results import SmoothedMarginal

Array = np.ndarray
Objective = Callable[[int, Array], Array]


def identity(s: int, x: Array) -> Array:
    return x[:, 0]


def square(s: int, x: Array) -> Array:
    return x[:, 0] ** 2


def zero(s: int, x: Array) -> Array:
    return np.zeros(len(x))


OBJECTIVES: dict[str, Objective] = {"identity": identity, "square": square, "zero": zero}


def objective_by_name(name: str) -> Objective:
    try:
        return OBJECTIVES[name]
    except KeyError:
        raise InvalidParameterError(
            f"unknown objective {name!r}; known: {sorted(OBJECTIVES)}") from None


def register_objective(name: str, fn: Objective) -> None:
    """Make ``fn`` selectable by name from configs and the CLI."""
    OBJECTIVES[name] = fn


# ---------------------------------------------------------------------------
# backward sampling

def _exact_backward(prev: WeightedSample, targets: Array, model: ModelSpec,
                    rng: np.random.Generator, owners: Array | None = None) -> Array:
    """One exact draw per target row from ``Pr({w_l q(xi_l, target)}_l)``; O(N) each."""
    logq = model.log_transition(prev.particles[None, :, :], targets[:, None, :])
    top = np.max(logq, axis=1, keepdims=True)
    bad = np.flatnonzero(~np.isfinite(top[:, 0]))
    if bad.size:
        raise DegenerateBackwardWeightsError(None if owners is None else int(owners[bad[0]]))
    # rescaling by exp(-top) leaves the normalised law unchanged
    cum = np.cumsum(prev.weights[None, :] * np.exp(logq - top), axis=1)
    total = cum[:, -1]
    bad = np.flatnonzero(~(total > 0))
    if bad.size:
        raise DegenerateBackwardWeightsError(None if owners is None else int(owners[bad[0]]))
    u = rng.random(len(targets)) * total
    return np.minimum((cum <= u[:, None]).sum(axis=1), prev.size - 1)


def backward_indices(prev: WeightedSample, targets: Array, model: ModelSpec,
                     rng: np.random.Generator, precision: int = 1,
                     max_trials: int | None = None, switch_ratio: float = 16.0) -> Array:
    """Draw ``precision`` indices per target from the particle backward kernel.

    Row ``i`` of the result holds independent draws from
    ``Pr({w_l q(xi_l, targets[i])}_l)``. Draws are produced by rejection
    sampling against ``model.density_upper_bound``. A draw still pending
    after ``max_trials`` proposals (default ``N``) is taken from the exact
    categorical law instead. The remaining draws also switch to the exact
    law once ``pending * N <= switch_ratio * n_draws``, i.e. when the exact
    computation is cheaper than further vectorised rounds; either way the
    output law is unchanged.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, model.state_dim)
    n_targets = len(targets)
    max_trials = prev.size if max_trials is None else max_trials
    cum = _cumulative(prev.weights)
    total = cum[-1]
    log_bound = model.log_density_upper_bound

    owner = np.repeat(np.arange(n_targets), precision)
    out = np.empty(n_targets * precision, dtype=np.intp)
    pending = np.arange(len(out))
    budget = switch_ratio * len(out)
    for _ in range(max_trials):
        if pending.size == 0 or pending.size * prev.size <= budget:
            break
        prop = np.searchsorted(cum, rng.random(pending.size) * total, side="right")
        logq = model.log_transition(prev.particles[prop], targets[owner[pending]])
        accept = np.log(rng.random(pending.size)) < logq - log_bound
        out[pending[accept]] = prop[accept]
        pending = pending[~accept]

    if pending.size:
        out[pending] = _exact_backward(prev, targets[owner[pending]], model, rng, owner[pending])
    return out.reshape(n_targets, precision)


def backward_index(prev: WeightedSample, x_new, model: ModelSpec, rng: np.random.Generator,
                   max_trials: int | None = None) -> int:
    return int(backward_indices(prev, x_new, model, rng, 1, max_trials)[0, 0])


def ffbsm_update(stats_prev, prev: WeightedSample, new: WeightedSample, model: ModelSpec) -> Array:
    """Exact particle backward-kernel average; O(N^2).

    ``stats_prev`` may be one vector of length N or a stack of shape (S, N).
    """
    stats_prev = np.asarray(stats_prev, dtype=float)
    logq = model.log_transition(prev.particles[None, :, :], new.particles[:, None, :])
    top = np.max(logq, axis=1, keepdims=True)
    bad = ~np.isfinite(top[:, 0])
    top[bad] = 0.0
    kernel = prev.weights[None, :] * np.exp(logq - top)
    denom = kernel.sum(axis=1)
    zero_rows = np.flatnonzero(~(denom > 0))
    if zero_rows.size:
        raise DegenerateBackwardWeightsError(int(zero_rows[0]))
    kernel /= denom[:, None]
    return stats_prev @ kernel.T


def _rowwise_dot(rows: Array, w: Array) -> Array:
    # one 1-D dot per row: a row's result does not depend on which other rows
    # are stacked with it, unlike a matrix-vector product
    if rows.ndim == 1:
        return np.dot(rows, w)
    return np.array([np.dot(r, w) for r in rows.reshape(-1, rows.shape[-1])]).reshape(rows.shape[:-1])


def variance_criterion(weights, stats) -> Array | float:
    """Weighted population variance of ``stats`` (last axis) under normalised weights."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    stats = np.asarray(stats, dtype=float)
    mean = _rowwise_dot(stats, w)
    dev = stats - np.expand_dims(mean, -1)
    out = _rowwise_dot(dev * dev, w)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# estimator bank

@dataclass
class EstimatorBank:
    """Active marginals and their statistic vectors.

    ``stats`` has one row per entry of ``active`` (kept in increasing ``s``)
    and one column per particle.
    """

    epsilon: float
    precision: int = 2
    objective: Objective = identity
    track: Callable[[int], bool] | None = None
    max_active: int | None = None
    active: list[int] = field(default_factory=list)
    activation_time: dict[int, int] = field(default_factory=dict)
    stats: Array | None = None

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise InvalidParameterError("epsilon must be >= 0")
        if self.precision < 1:
            raise InvalidParameterError("precision must be >= 1")

    def __len__(self) -> int:
        return len(self.active)

    def activate(self, s: int, values: Array) -> None:
        values = np.asarray(values, dtype=float).reshape(1, -1)
        self.stats = values if self.stats is None or not self.active else np.vstack([self.stats, values])
        self.active.append(s)
        self.activation_time[s] = s
        if self.max_active is not None and len(self.active) > self.max_active:
            raise ActiveSetOverflowError(
                f"{len(self.active)} active estimators exceed the cap {self.max_active}")

    def keep(self, mask: Array) -> None:
        self.active = [s for s, k in zip(self.active, mask) if k]
        self.stats = self.stats[mask]
        for s in list(self.activation_time):
            if s not in self.active:
                del self.activation_time[s]

    def statistics(self, s: int) -> Array:
        return self.stats[self.active.index(s)]


def paris_update(bank: EstimatorBank, prev: WeightedSample, new: WeightedSample,
                 model: ModelSpec, rng: np.random.Generator,
                 indices: Array | None = None, max_trials: int | None = None) -> EstimatorBank:
    """Replace every active statistic vector by its backward-sampled average.

    One set of ``K`` backward indices is drawn per particle of ``new`` and
    shared by all active marginals.
    """
    if indices is None:
        indices = backward_indices(prev, new.particles, model, rng, bank.precision, max_trials)
    if not bank.active:
        return bank
    picked = bank.stats[:, indices]
    updated = picked.mean(axis=2)
    if bank.precision > 2:
        # float rounding of the mean may leave the hull of the picked values
        updated = np.clip(updated, picked.min(axis=2), picked.max(axis=2))
    bank.stats = updated
    return bank


def _emit(bank: EstimatorBank, sample: WeightedSample, final: bool) -> list[SmoothedMarginal]:
    if not bank.active:
        return []
    crit = np.atleast_1d(variance_criterion(sample.weights, bank.stats))
    estimates = _rowwise_dot(bank.stats, sample.weights / sample.weights.sum())
    done = crit < bank.epsilon
    fire = np.ones_like(done) if final else done
    out = [
        SmoothedMarginal(s=s, estimate=float(estimates[k]), stop_time=sample.t,
                         variance_at_stop=float(crit[k]), truncated_by_horizon=not bool(done[k]))
        for k, s in enumerate(bank.active) if fire[k]
    ]
    bank.keep(~fire)
    return out


def adaptive_lag_step(bank: EstimatorBank, prev: WeightedSample | None, new: WeightedSample,
                      model: ModelSpec, rng: np.random.Generator, is_final: bool = False,
                      max_trials: int | None = None) -> tuple[EstimatorBank, list[SmoothedMarginal]]:
    """One pass of the adaptive-lag loop body for the generation ``new``.

    Updates the active statistics (skipped at t = 0, when ``prev`` is None,
    and when no estimator is active), activates marginal ``new.t``, then finalises every marginal whose
    variance criterion is strictly below ``bank.epsilon``. With ``is_final``
    the remaining marginals are finalised too and flagged as truncated.
    """
    if prev is not None and bank.active:
        paris_update(bank, prev, new, model, rng, max_trials=max_trials)
    if bank.track is None or bank.track(new.t):
        bank.activate(new.t, bank.objective(new.t, new.particles))
    return bank, _emit(bank, new, is_final)


class AdaptiveLagSmoother:
    """Online adaptive-lag smoother fed one observation at a time.

    The particle filter runs on one random stream spawned from ``seed``; the
    backward draws of step ``t`` use a stream derived from ``seed`` and ``t``
    alone. Steps with no active estimator skip the backward draws, which
    then changes no other step's randomness: the filter path and every
    statistic vector are the same whatever the tolerance or tracked set.
    """

    def __init__(self, model: ModelSpec, n_particles: int, epsilon: float, precision: int = 2,
                 objective: Objective = identity, seed=None, *, track=None,
                 max_active: int | None = None, max_trials: int | None = None):
        self.model = model
        self.n_particles = n_particles
        self.bank = EstimatorBank(epsilon=epsilon, precision=precision, objective=objective,
                                  track=track, max_active=max_active)
        root = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.filter_rng, backward = root.spawn(2)
        self._backward_key = [int(v) for v in backward.integers(0, 2**63, size=2)]
        self.max_trials = max_trials
        self.sample: WeightedSample | None = None
        self.active_counts: list[int] = []
        self.finished = False

    def backward_rng(self, t: int) -> np.random.Generator:
        return np.random.default_rng([*self._backward_key, t])

    @property
    def t(self) -> int:
        return -1 if self.sample is None else self.sample.t

    def step(self, y=None, is_final: bool = False) -> list[SmoothedMarginal]:
        """Assimilate the next observation; returns the marginals finalised now."""
        if self.finished:
            raise RuntimeError("smoother already finished")
        prev = self.sample
        if y is None:
            y = self.model.observation(self.t + 1)
        if prev is None:
            new = bootstrap_init(self.model, self.n_particles, self.filter_rng, y)
        else:
            new = bootstrap_step(prev, self.model, self.filter_rng, y)
        _, emitted = adaptive_lag_step(self.bank, prev, new, self.model,
                                       self.backward_rng(new.t), is_final, self.max_trials)
        self.sample = new
        self.active_counts.append(len(self.bank))
        self.finished = is_final
        return emitted

    def criteria(self) -> dict[int, float]:
        """Current variance criterion of every active marginal."""
        if not self.bank.active:
            return {}
        crit = np.atleast_1d(variance_criterion(self.sample.weights, self.bank.stats))
        return dict(zip(self.bank.active, crit.tolist()))

    def finish(self) -> list[SmoothedMarginal]:
        """Finalise all still-active marginals at the current time."""
        self.finished = True
        return _emit(self.bank, self.sample, final=True)


@dataclass
class AdaptiveRun:
    marginals: list[SmoothedMarginal]
    active_counts: list[int]
    runtime: float

    def by_s(self) -> dict[int, SmoothedMarginal]:
        return {m.s: m for m in self.marginals}


def adaptive_lag_run(model: ModelSpec, n_particles: int, epsilon: float, precision: int = 2,
                     objective: Objective = identity, seed=None, **kwargs) -> AdaptiveRun:
    """Run the adaptive-lag smoother over every observation bound in ``model``."""
    smoother = AdaptiveLagSmoother(model, n_particles, epsilon, precision, objective, seed, **kwargs)
    horizon = model.horizon
    out: list[SmoothedMarginal] = []
    start = time.perf_counter()
    for t in range(horizon + 1):
        out.extend(smoother.step(is_final=t == horizon))
    return AdaptiveRun(marginals=out, active_counts=smoother.active_counts,
                       runtime=time.perf_counter() - start)


def criterion_trace(model: ModelSpec, n_particles: int, precision: int = 2, s: int = 0,
                    objective: Objective = identity, seed=None, horizon: int | None = None) -> Array:
    """Variance criterion of marginal ``s`` at every ``t >= s``, never stopping."""
    horizon = model.horizon if horizon is None else horizon
    smoother = AdaptiveLagSmoother(model, n_particles, 0.0, precision, objective, seed,
                                   track=lambda u: u == s)
    trace = []
    for t in range(horizon + 1):
        smoother.step()
        if t >= s:
            trace.append(smoother.criteria()[s])
    return np.array(trace)


# ---------------------------------------------------------------------------
# fixed-lag baseline

def fixed_lag_runs(model: ModelSpec, deltas: Sequence[int], n_particles: int,
                   objective: Objective = identity, seed=None,
                   marginals: Iterable[int] | None = None) -> dict[int, list[SmoothedMarginal]]:
    """Fixed-lag estimates for several lags sharing one particle filter run.

    Marginal ``s`` is estimated at ``(s + delta) ∧ T`` from the genealogy of
    that generation. ``marginals`` restricts which ``s`` are estimated.
    """
    deltas = [int(d) for d in deltas]
    if not deltas or min(deltas) < 1:
        raise InvalidParameterError("lags must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    horizon = model.horizon
    wanted = None if marginals is None else set(marginals)
    store = GenealogyStore(max(deltas) + 1)
    out: dict[int, list[SmoothedMarginal]] = {d: [] for d in deltas}

    def estimate(d: int, s: int, t: int) -> None:
        if wanted is not None and s not in wanted:
            return
        value = poor_mans_estimate(store, s, lambda x: objective(s, x), t)
        out[d].append(SmoothedMarginal(s=s, estimate=value, stop_time=t,
                                       variance_at_stop=float("nan"),
                                       truncated_by_horizon=s + d > t))

    sample = None
    for t in range(horizon + 1):
        sample = bootstrap_init(model, n_particles, rng) if sample is None \
            else bootstrap_step(sample, model, rng)
        store.push(sample)
        for d in deltas:
            if t - d >= 0:
                estimate(d, t - d, t)
            if t == horizon:
                for s in range(max(0, t - d + 1), t + 1):
                    estimate(d, s, t)
    return out


def fixed_lag_run(model: ModelSpec, delta: int, n_particles: int,
                  objective: Objective = identity, seed=None,
                  marginals: Iterable[int] | None = None) -> list[SmoothedMarginal]:
    return fixed_lag_runs(model, [delta], n_particles, objective, seed, marginals)[delta]
