"""Exact computations for linear Gaussian models.

Contains the Kalman filter, a disturbance smoother used as the ground-truth
oracle, the Gaussian backward kernel and the exact adaptive-lag algorithm for
affine objectives ``h_s(x) = alpha_s . x + beta_s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import InvalidParameterError, NumericalError
from .models import LgssmParams
from .results import SmoothedMarginal

Array = np.ndarray
AffineObjective = Union[tuple, Callable[[int], tuple]]


@dataclass(frozen=True)
class KalmanState:
    """Filter moments of ``X_t`` given ``y_{0:t}``."""

    t: int
    mean: Array
    cov: Array


@dataclass(frozen=True)
class KalmanAffineStat:
    """``T_{s|t}(x) = alpha . x + beta``."""

    s: int
    alpha: Array
    beta: float

    def __call__(self, x) -> Array:
        return np.asarray(x, dtype=float) @ self.alpha + self.beta


@dataclass(frozen=True)
class BackwardGaussian:
    """Law of ``X_t`` given ``X_{t+1} = x`` and ``y_{0:t}``.

    Its mean is ``gain_state @ x + gain_filter`` and its covariance ``cov``.
    """

    gain_state: Array
    gain_filter: Array
    cov: Array

    def mean(self, x_next) -> Array:
        return self.gain_state @ np.asarray(x_next, dtype=float) + self.gain_filter


def _solve(a: Array, b: Array, what: str) -> Array:
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        raise NumericalError(f"singular {what}") from None


def _spd_inverse(mat: Array, what: str) -> Array:
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite") from None
    eye = np.eye(mat.shape[0])
    inv_chol = np.linalg.solve(chol, eye)
    return inv_chol.T @ inv_chol


def _sym(mat: Array) -> Array:
    return 0.5 * (mat + mat.T)


def _update(mean: Array, cov: Array, y, params: LgssmParams, t: int) -> KalmanState:
    B, Sv = params.B, params.Sigma_V
    y = np.asarray(y, dtype=float).reshape(params.obs_dim)
    innov_cov = B @ cov @ B.T + Sv
    gain = _solve(innov_cov, B @ cov, "innovation covariance").T
    new_mean = mean + gain @ (y - B @ mean)
    # Joseph form keeps the covariance symmetric and PSD
    ikb = np.eye(params.state_dim) - gain @ B
    new_cov = _sym(ikb @ cov @ ikb.T + gain @ Sv @ gain.T)
    return KalmanState(t=t, mean=new_mean, cov=new_cov)


def kalman_init(params: LgssmParams, y0) -> KalmanState:
    """Condition the initial law on the first observation."""
    return _update(params.initial_mean, params.initial_cov, y0, params, 0)


def kalman_step(state: KalmanState, y, params: LgssmParams) -> KalmanState:
    """Predict one step through the dynamics, then condition on ``y``."""
    A = params.A
    pred_mean = A @ state.mean
    pred_cov = _sym(A @ state.cov @ A.T + params.Sigma_U)
    return _update(pred_mean, pred_cov, y, params, state.t + 1)


def kalman_filter(params: LgssmParams, observations) -> list[KalmanState]:
    obs = np.asarray(observations, dtype=float).reshape(-1, params.obs_dim)
    if len(obs) == 0:
        raise ValueError("need at least one observation")
    states = [kalman_init(params, obs[0])]
    for y in obs[1:]:
        states.append(kalman_step(states[-1], y, params))
    return states


def disturbance_smoother(params: LgssmParams, observations) -> tuple[Array, Array]:
    """Smoothed means and covariances of every ``X_s`` given all observations.

    A forward pass stores innovations and predicted moments; one backward
    sweep of the ``(r, N)`` recursion then yields all marginals.

    Returns
    -------
    means : ndarray, shape (T+1, n_x)
    covs : ndarray, shape (T+1, n_x, n_x)
    """
    obs = np.asarray(observations, dtype=float).reshape(-1, params.obs_dim)
    if len(obs) == 0:
        raise ValueError("need at least one observation")
    A, B = params.A, params.B
    n_x, T1 = params.state_dim, len(obs)

    pred_means = np.empty((T1, n_x))
    pred_covs = np.empty((T1, n_x, n_x))
    innovations = []
    a, P = params.initial_mean.copy(), params.initial_cov.copy()
    for t in range(T1):
        pred_means[t], pred_covs[t] = a, P
        v = obs[t] - B @ a
        F = B @ P @ B.T + params.Sigma_V
        F_inv = _spd_inverse(F, "innovation covariance")
        K = A @ P @ B.T @ F_inv
        L = A - K @ B
        innovations.append((v, F_inv, L))
        a = A @ a + K @ v
        P = _sym(A @ P @ L.T + params.Sigma_U)

    means = np.empty((T1, n_x))
    covs = np.empty((T1, n_x, n_x))
    r = np.zeros(n_x)
    N = np.zeros((n_x, n_x))
    for t in range(T1 - 1, -1, -1):
        v, F_inv, L = innovations[t]
        r = B.T @ F_inv @ v + L.T @ r
        N = B.T @ F_inv @ B + L.T @ N @ L
        P = pred_covs[t]
        means[t] = pred_means[t] + P @ r
        covs[t] = _sym(P - P @ N @ P)
    return means, covs


def backward_params(state: KalmanState, params: LgssmParams) -> BackwardGaussian:
    su_inv = _spd_inverse(params.Sigma_U, "Sigma_U")
    filt_inv = _spd_inverse(state.cov, "filter covariance")
    A = params.A
    cov = _spd_inverse(_sym(A.T @ su_inv @ A + filt_inv), "backward precision")
    return BackwardGaussian(
        gain_state=cov @ A.T @ su_inv,
        gain_filter=cov @ filt_inv @ state.mean,
        cov=cov,
    )


def ideal_affine_update(stat: KalmanAffineStat, bg: BackwardGaussian) -> KalmanAffineStat:
    """Push an affine statistic one step forward through the backward kernel."""
    alpha = bg.gain_state.T @ stat.alpha
    beta = float(stat.alpha @ bg.gain_filter) + stat.beta
    return KalmanAffineStat(s=stat.s, alpha=alpha, beta=beta)


def ideal_variance(stat: KalmanAffineStat, state: KalmanState) -> float:
    return float(stat.alpha @ state.cov @ stat.alpha)


def _objective_at(objectives: AffineObjective, s: int, n_x: int) -> KalmanAffineStat:
    alpha, beta = objectives(s) if callable(objectives) else objectives
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (n_x,)).copy()
    return KalmanAffineStat(s=s, alpha=alpha, beta=float(beta))


@dataclass
class IdealRun:
    marginals: list[SmoothedMarginal]
    active_counts: list[int]
    filter_states: list[KalmanState]

    def estimates(self) -> Array:
        out = np.full(len(self.marginals), np.nan)
        for m in self.marginals:
            out[m.s] = m.estimate
        return out


def ideal_adaptive_lag_run(params: LgssmParams, observations, objectives: AffineObjective,
                           epsilon: float) -> IdealRun:
    """Exact adaptive-lag smoothing of affine objectives.

    ``objectives`` is either one ``(alpha, beta)`` pair used for every time
    or a callable ``s -> (alpha, beta)``. Marginals are emitted in stop
    order; those still active after the last observation are emitted with
    ``truncated_by_horizon`` set.
    """
    if not epsilon > 0:
        raise InvalidParameterError("epsilon must be > 0")
    obs = np.asarray(observations, dtype=float).reshape(-1, params.obs_dim)
    horizon = len(obs) - 1
    active: list[KalmanAffineStat] = []
    emitted: list[SmoothedMarginal] = []
    counts: list[int] = []
    states: list[KalmanState] = []
    state = None
    for t, y in enumerate(obs):
        if state is None:
            state = kalman_init(params, y)
        else:
            bg = backward_params(state, params)
            active = [ideal_affine_update(stat, bg) for stat in active]
            state = kalman_step(state, y, params)
        states.append(state)
        active.append(_objective_at(objectives, t, params.state_dim))
        still = []
        for stat in active:
            var = ideal_variance(stat, state)
            if var < epsilon or t == horizon:
                emitted.append(SmoothedMarginal(
                    s=stat.s, estimate=float(stat.alpha @ state.mean + stat.beta),
                    stop_time=t, variance_at_stop=var,
                    truncated_by_horizon=not var < epsilon,
                ))
            else:
                still.append(stat)
        active = still
        counts.append(len(active))
    return IdealRun(marginals=emitted, active_counts=counts, filter_states=states)


def smoothed_objective(params: LgssmParams, observations, alpha, beta: float = 0.0) -> Array:
    """Exact ``E[alpha . X_s + beta | y_{0:T}]`` for every ``s``."""
    means, _ = disturbance_smoother(params, observations)
    return means @ np.broadcast_to(np.asarray(alpha, dtype=float), (params.state_dim,)) + beta


def smoothed_second_moment(params: LgssmParams, observations, component: int = 0) -> Array:
    """Exact ``E[X_s[k]^2 | y_{0:T}]`` for every ``s``."""
    means, covs = disturbance_smoother(params, observations)
    return means[:, component] ** 2 + covs[:, component, component]


__all__: Sequence[str] = [
    "KalmanState", "KalmanAffineStat", "BackwardGaussian", "IdealRun",
    "kalman_init", "kalman_step", "kalman_filter", "disturbance_smoother",
    "backward_params", "ideal_affine_update", "ideal_variance", "ideal_adaptive_lag_run",
    "smoothed_objective", "smoothed_second_moment",
]
