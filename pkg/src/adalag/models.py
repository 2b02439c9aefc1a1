"""State-space model definitions, concrete instances and trajectory simulation.

A :class:`ModelSpec` bundles the initial law, the transition kernel and the
observation density of a fully dominated state-space model. All densities are
evaluated in log-space; the linear-domain accessors exponentiate at the end.

Particle arrays are always two dimensional with shape ``(n, state_dim)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .errors import InvalidParameterError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)

Array = np.ndarray


def _as_matrix(value: Any, name: str) -> Array:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise InvalidParameterError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


def _check_symmetric(mat: Array, name: str, tol: float = 1e-12) -> None:
    if mat.shape[0] != mat.shape[1]:
        raise InvalidParameterError(f"{name} must be square, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=0.0, atol=tol):
        raise InvalidParameterError(f"{name} is not symmetric")


def _cholesky(mat: Array, name: str) -> Array:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise InvalidParameterError(f"{name} is not positive definite") from None


def _psd_sqrt(mat: Array, name: str) -> Array:
    """Square-root factor of a PSD matrix that tolerates zero eigenvalues."""
    vals, vecs = np.linalg.eigh(mat)
    if vals.min(initial=0.0) < -1e-12 * max(1.0, abs(vals).max(initial=0.0)):
        raise InvalidParameterError(f"{name} is not positive semi-definite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


class GaussianNoise:
    """Zero-mean Gaussian with a fixed SPD covariance, evaluated in log-space."""

    def __init__(self, cov: Array, name: str = "cov"):
        self.cov = cov
        self.chol = _cholesky(cov, name)
        self.dim = cov.shape[0]
        self.log_norm = -0.5 * self.dim * LOG_2PI - float(np.sum(np.log(np.diag(self.chol))))

    def logpdf(self, z: Array) -> Array:
        """Log density at the rows of ``z`` (shape ``(..., dim)``)."""
        if self.dim == 1:
            c = self.chol[0, 0]
            with np.errstate(over="ignore"):  # far tails are -inf, not an error
                return self.log_norm - 0.5 * (z[..., 0] / c) ** 2
        flat = z.reshape(-1, self.dim)
        sol = np.linalg.solve(self.chol, flat.T)
        quad = np.einsum("ij,ij->j", sol, sol)
        return (self.log_norm - 0.5 * quad).reshape(z.shape[:-1])

    @property
    def mode_density(self) -> float:
        return math.exp(self.log_norm)


@dataclass(frozen=True)
class ModelSpec:
    """A fully dominated state-space model bound to an observation sequence.

    The callables work on batches: states have shape ``(n, state_dim)`` and
    observations shape ``(obs_dim,)``. ``log_transition(x, xp)`` broadcasts
    over the leading axes of both arguments.
    """

    state_dim: int
    obs_dim: int
    sample_initial: Callable[[np.random.Generator, int], Array]
    log_initial: Callable[[Array], Array]
    sample_transition: Callable[[Array, np.random.Generator], Array]
    log_transition: Callable[[Array, Array], Array]
    log_likelihood: Callable[[Array, Array], Array]
    sample_observation: Callable[[Array, np.random.Generator], Array]
    density_upper_bound: float
    observations: Array | None = None
    name: str = "model"
    params: Any = field(default=None, compare=False)

    @property
    def log_density_upper_bound(self) -> float:
        return math.log(self.density_upper_bound)

    @property
    def horizon(self) -> int:
        """Index of the last bound observation (-1 when nothing is bound)."""
        return -1 if self.observations is None else len(self.observations) - 1

    def initial_density(self, x) -> Array:
        return np.exp(self.log_initial(_states(x, self.state_dim)))

    def transition_density(self, x, xp) -> Array:
        return np.exp(self.log_transition(_states(x, self.state_dim), _states(xp, self.state_dim)))

    def observation(self, t: int) -> Array:
        if self.observations is None or not 0 <= t < len(self.observations):
            raise IndexError(f"no observation bound at t={t}")
        return self.observations[t]

    def log_observation_density(self, t: int, x) -> Array:
        return self.log_likelihood(self.observation(t), _states(x, self.state_dim))

    def observation_density(self, t: int, x) -> Array:
        return np.exp(self.log_observation_density(t, x))

    def with_observations(self, observations) -> ModelSpec:
        obs = np.asarray(observations, dtype=float).reshape(-1, self.obs_dim)
        return replace(self, observations=obs)

    def append_observation(self, y) -> ModelSpec:
        """Return a copy with ``y`` bound as the next observation."""
        y = np.asarray(y, dtype=float).reshape(1, self.obs_dim)
        obs = y if self.observations is None else np.vstack([self.observations, y])
        return replace(self, observations=obs)


def _states(x, dim: int) -> Array:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, dim) if dim > 1 else arr.reshape(-1, 1)
    return arr


@dataclass(frozen=True)
class LgssmParams:
    """Parameters of ``X' = A X + U``, ``Y = B X + V`` with Gaussian noise."""

    A: Array
    B: Array
    Sigma_U: Array
    Sigma_V: Array
    initial_mean: Array
    initial_cov: Array

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        n_x = A.shape[0]
        if A.shape != (n_x, n_x):
            raise InvalidParameterError("A must be square")
        if B.shape[1] != n_x:
            raise InvalidParameterError(f"B must have {n_x} columns, got {B.shape}")
        n_y = B.shape[0]
        Su = _as_matrix(self.Sigma_U, "Sigma_U")
        Sv = _as_matrix(self.Sigma_V, "Sigma_V")
        P0 = _as_matrix(self.initial_cov, "initial_cov")
        m0 = np.asarray(self.initial_mean, dtype=float).reshape(-1)
        for mat, name, dim in ((Su, "Sigma_U", n_x), (Sv, "Sigma_V", n_y), (P0, "initial_cov", n_x)):
            if mat.shape != (dim, dim):
                raise InvalidParameterError(f"{name} must be {dim}x{dim}, got {mat.shape}")
            _check_symmetric(mat, name)
        if m0.shape != (n_x,):
            raise InvalidParameterError(f"initial_mean must have length {n_x}")
        for name, val in (("A", A), ("B", B), ("Sigma_U", Su), ("Sigma_V", Sv),
                          ("initial_mean", m0), ("initial_cov", P0)):
            if not np.all(np.isfinite(val)):
                raise InvalidParameterError(f"{name} has non-finite entries")
            object.__setattr__(self, name, val)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.B.shape[0]

    @classmethod
    def scalar(cls, a: float, b: float, sigma_u: float, sigma_v: float,
               initial_mean: float = 0.0, initial_var: float | None = None) -> LgssmParams:
        """Scalar model; the initial variance defaults to the stationary one."""
        if initial_var is None:
            if abs(a) >= 1:
                raise InvalidParameterError("stationary initial variance needs |a| < 1")
            initial_var = sigma_u**2 / (1.0 - a**2)
        return cls(A=[[a]], B=[[b]], Sigma_U=[[sigma_u**2]], Sigma_V=[[sigma_v**2]],
                   initial_mean=[initial_mean], initial_cov=[[initial_var]])


@dataclass(frozen=True)
class SvParams:
    """Stochastic volatility: ``X' = phi X + sigma U``, ``Y = beta exp(X/2) V``."""

    phi: float
    sigma: float
    beta: float

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise InvalidParameterError(f"|phi| must be < 1, got {self.phi}")
        if not self.sigma > 0:
            raise InvalidParameterError(f"sigma must be > 0, got {self.sigma}")
        if not self.beta > 0:
            raise InvalidParameterError(f"beta must be > 0, got {self.beta}")

    @property
    def initial_var(self) -> float:
        return self.sigma**2 / (1.0 - self.phi**2)


def benchmark_lgssm_params(a: float = 0.95, b: float = 0.5, sigma_u: float = 0.5,
                           sigma_v: float = 2.0) -> LgssmParams:
    """Scalar benchmark model with initial law N(0, sigma_v^2 / (1 - a^2))."""
    return LgssmParams.scalar(a, b, sigma_u, sigma_v, 0.0, sigma_v**2 / (1.0 - a**2))


def benchmark_sv_params() -> SvParams:
    return SvParams(phi=0.98, sigma=math.sqrt(0.1), beta=math.sqrt(0.7))


def make_lgssm(params: LgssmParams, observations=None, *,
               simulation_only: bool = False) -> ModelSpec:
    """Build the linear Gaussian model.

    With ``simulation_only=True`` singular noise covariances are accepted;
    the resulting spec can be simulated from but its densities raise.
    """
    A, B = params.A, params.B
    n_x, n_y = params.state_dim, params.obs_dim
    m0 = params.initial_mean

    if simulation_only:
        root_u = _psd_sqrt(params.Sigma_U, "Sigma_U")
        root_v = _psd_sqrt(params.Sigma_V, "Sigma_V")
        root_0 = _psd_sqrt(params.initial_cov, "initial_cov")

        def unavailable(*_):
            raise NumericalError("densities are undefined for a simulation-only model")

        log_initial = log_transition = log_likelihood = unavailable
        upper = math.inf
    else:
        noise_u = GaussianNoise(params.Sigma_U, "Sigma_U")
        noise_v = GaussianNoise(params.Sigma_V, "Sigma_V")
        noise_0 = GaussianNoise(params.initial_cov, "initial_cov")
        root_u, root_v, root_0 = noise_u.chol, noise_v.chol, noise_0.chol
        upper = noise_u.mode_density

        def log_initial(x):
            return noise_0.logpdf(x - m0)

        def log_transition(x, xp):
            return noise_u.logpdf(xp - x @ A.T)

        def log_likelihood(y, x):
            return noise_v.logpdf(y - x @ B.T)

    def sample_initial(rng, n):
        return m0 + rng.standard_normal((n, n_x)) @ root_0.T

    def sample_transition(x, rng):
        return x @ A.T + rng.standard_normal(x.shape) @ root_u.T

    def sample_observation(x, rng):
        return x @ B.T + rng.standard_normal((x.shape[0], n_y)) @ root_v.T

    spec = ModelSpec(
        state_dim=n_x, obs_dim=n_y,
        sample_initial=sample_initial, log_initial=log_initial,
        sample_transition=sample_transition, log_transition=log_transition,
        log_likelihood=log_likelihood, sample_observation=sample_observation,
        density_upper_bound=upper, name="lgssm", params=params,
    )
    return spec if observations is None else spec.with_observations(observations)


def make_sv(params: SvParams, observations=None) -> ModelSpec:
    """Build the stochastic volatility model (scalar state and observation)."""
    phi, sigma, beta = params.phi, params.sigma, params.beta
    init_sd = math.sqrt(params.initial_var)
    log_trans_norm = -0.5 * LOG_2PI - math.log(sigma)
    log_init_norm = -0.5 * LOG_2PI - math.log(init_sd)
    log_beta2 = 2.0 * math.log(beta)

    def sample_initial(rng, n):
        return init_sd * rng.standard_normal((n, 1))

    def log_initial(x):
        return log_init_norm - 0.5 * (x[..., 0] / init_sd) ** 2

    def sample_transition(x, rng):
        return phi * x + sigma * rng.standard_normal(x.shape)

    def log_transition(x, xp):
        return log_trans_norm - 0.5 * ((xp[..., 0] - phi * x[..., 0]) / sigma) ** 2

    def log_likelihood(y, x):
        log_var = log_beta2 + x[..., 0]
        return -0.5 * (LOG_2PI + log_var) - 0.5 * y[0] ** 2 * np.exp(-log_var)

    def sample_observation(x, rng):
        return beta * np.exp(x / 2.0) * rng.standard_normal(x.shape)

    spec = ModelSpec(
        state_dim=1, obs_dim=1,
        sample_initial=sample_initial, log_initial=log_initial,
        sample_transition=sample_transition, log_transition=log_transition,
        log_likelihood=log_likelihood, sample_observation=sample_observation,
        density_upper_bound=math.exp(log_trans_norm), name="sv", params=params,
    )
    return spec if observations is None else spec.with_observations(observations)


@dataclass(frozen=True)
class Trajectory:
    states: Array
    observations: Array
    seed: int | None = None

    def __post_init__(self):
        if len(self.states) != len(self.observations):
            raise ValueError("states and observations must have equal length")

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def to_csv(self, target) -> None:
        """Write to a path or an open text file."""
        if hasattr(target, "write"):
            self._write_csv(target)
        else:
            with open(target, "w", newline="") as fh:
                self._write_csv(fh)

    def _write_csv(self, fh) -> None:
        n_x, n_y = self.states.shape[1], self.observations.shape[1]
        header = ["t"] + [f"x_{k}" for k in range(n_x)] + [f"y_{k}" for k in range(n_y)]
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, (x, y) in enumerate(zip(self.states, self.observations)):
            writer.writerow([t] + [format(v, ".17g") for v in (*x, *y)])

    @classmethod
    def from_csv(cls, path, seed: int | None = None) -> Trajectory:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        x_cols = [k for k, h in enumerate(header) if h.startswith("x_")]
        y_cols = [k for k, h in enumerate(header) if h.startswith("y_")]
        data = np.array([[float(v) for v in row] for row in body], dtype=float)
        data = data.reshape(len(body), len(header))
        return cls(states=data[:, x_cols], observations=data[:, y_cols], seed=seed)


def read_observations(path) -> Array:
    """Observation columns ``y_*`` of a trajectory CSV (state columns may be absent)."""
    return Trajectory.from_csv(path).observations


def simulate(model: ModelSpec, horizon: int, seed: int | None = None) -> Trajectory:
    """Draw ``x_{0:T}`` and ``y_{0:T}`` from the joint law; deterministic given ``seed``."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = np.random.default_rng(seed)
    states = np.empty((horizon + 1, model.state_dim))
    obs = np.empty((horizon + 1, model.obs_dim))
    x = model.sample_initial(rng, 1)
    for t in range(horizon + 1):
        if t > 0:
            x = model.sample_transition(x, rng)
        states[t] = x[0]
        obs[t] = model.sample_observation(x, rng)[0]
    return Trajectory(states=states, observations=obs, seed=seed)
