"""Seeded experiment harness for the benchmark studies.

Three studies are provided:

* :func:`run_lgssm_experiment` -- adaptive-lag and exact Kalman variants on a
  linear Gaussian model against the disturbance smoother;
* :func:`run_sv_experiment` -- adaptive-lag on the stochastic volatility model
  against an average of long-run, never-stopping particle smoothers;
* :func:`run_fixed_vs_adaptive` -- fixed-lag versus adaptive-lag at one probe
  marginal.

Every replicate ``r`` draws from its own stream seeded by
``SeedSequence([seed, stream_tag, r])``. Reports written by
:func:`write_report` are byte-identical for identical configs; wall-clock
timings go to a separate ``timing.json``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import InvalidParameterError
from .kalman import ideal_adaptive_lag_run, smoothed_objective, smoothed_second_moment
from .models import (
    LgssmParams,
    ModelSpec,
    SvParams,
    benchmark_lgssm_params,
    make_lgssm,
    make_sv,
    simulate,
)
from .smoothers import (
    adaptive_lag_run,
    criterion_trace,
    fixed_lag_runs,
    objective_by_name,
)

DATA, ADAPTIVE, FIXED, REFERENCE, TRACE = range(5)

LGSSM_DEFAULTS = {"a": 0.95, "b": 0.5, "sigma_u": 0.5, "sigma_v": 2.0}
SV_DEFAULTS = {"phi": 0.98, "sigma": math.sqrt(0.1), "beta": math.sqrt(0.7)}


@dataclass
class ExperimentConfig:
    """Settings shared by all studies; see ``README.md`` for the file schema."""

    model: str = "lgssm"
    params: dict = field(default_factory=dict)
    horizon: int = 200
    epsilons: list = field(default_factory=lambda: [0.5, 0.2, 0.1, 1e-3])
    lags: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128])
    n_particles: int = 400
    precision: int = 2
    replicates: int = 100
    seed: int = 0
    data_seed: int | None = None
    objective: str = "identity"
    probe: int = 750
    reference_particles: int = 2000
    reference_replicates: int = 10
    output_dir: str = "out"
    cache_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model not in ("lgssm", "sv"):
            raise InvalidParameterError(f"unknown model {self.model!r}")
        if self.replicates < 1:
            raise InvalidParameterError("replicates must be >= 1")
        if self.horizon < 1:
            raise InvalidParameterError("horizon must be >= 1")
        if not self.epsilons or any(not e >= 0 for e in self.epsilons):
            raise InvalidParameterError("epsilons must be a non-empty list of tolerances >= 0")
        if not self.lags or any(int(d) < 1 for d in self.lags):
            raise InvalidParameterError("lags must be a non-empty list of integers >= 1")
        if self.n_particles < 1 or self.precision < 1:
            raise InvalidParameterError("n_particles and precision must be >= 1")
        objective_by_name(self.objective)

    @property
    def model_params(self) -> dict:
        base = LGSSM_DEFAULTS if self.model == "lgssm" else SV_DEFAULTS
        unknown = set(self.params) - set(base)
        if unknown:
            raise InvalidParameterError(f"unknown {self.model} parameters {sorted(unknown)}")
        return {**base, **self.params}

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidParameterError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


def lgssm_params_from(p: dict) -> LgssmParams:
    return benchmark_lgssm_params(p["a"], p["b"], p["sigma_u"], p["sigma_v"])


def build_model(config: ExperimentConfig, observations=None) -> ModelSpec:
    p = config.model_params
    if config.model == "lgssm":
        return make_lgssm(lgssm_params_from(p), observations)
    return make_sv(SvParams(**p), observations)


def stream(seed: int, tag: int, r: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, r]))


def efficiency(mse: float, runtime_seconds: float) -> float:
    """Reciprocal of MSE times runtime."""
    if not (mse > 0 and runtime_seconds > 0):
        raise InvalidParameterError("mse and runtime must both be positive")
    return 1.0 / (mse * runtime_seconds)


@dataclass
class MethodResult:
    """Aggregates for one method at one parameter value (tolerance or lag)."""

    method: str
    param: float
    s: list
    mean: list
    std: list
    lag_mean: list
    mse: float | None = None
    max_active: list | None = None
    values: list | None = None
    runtime: float | None = None

    @property
    def efficiency(self) -> float | None:
        if self.runtime is None or not self.mse or not self.runtime > 0:
            return None
        return efficiency(self.mse, self.runtime)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("runtime")
        return out


@dataclass
class Report:
    study: str
    config: dict
    reference: dict
    results: list[MethodResult]
    variance_trace: list | None = None

    def result(self, method: str, param: float) -> MethodResult:
        for r in self.results:
            if r.method == method and r.param == param:
                return r
        raise KeyError((method, param))

    def to_dict(self) -> dict:
        return {
            "study": self.study,
            "config": self.config,
            "reference": self.reference,
            "results": [r.to_dict() for r in self.results],
            "variance_trace": self.variance_trace,
        }

    def timing(self) -> dict:
        return {
            "study": self.study,
            "results": [
                {"method": r.method, "param": r.param, "mse": r.mse,
                 "runtime": r.runtime, "efficiency": r.efficiency}
                for r in self.results if r.runtime is not None
            ],
        }


def _aggregate(method: str, param: float, s: Sequence[int], estimates: np.ndarray,
               lags: np.ndarray, reference: np.ndarray | None, keep_values: bool = False,
               **extra) -> MethodResult:
    """``estimates`` and ``lags`` have shape (replicates, len(s))."""
    mse = None if reference is None else float(np.mean((estimates - reference[None, :]) ** 2))
    std = estimates.std(axis=0, ddof=1) if len(estimates) > 1 else np.zeros(estimates.shape[1])
    return MethodResult(
        method=method, param=float(param), s=[int(v) for v in s],
        mean=estimates.mean(axis=0).tolist(), std=std.tolist(),
        lag_mean=lags.mean(axis=0).tolist(), mse=mse,
        values=estimates[:, 0].tolist() if keep_values else None, **extra)


# ---------------------------------------------------------------------------
# replicate workers; module-level so they pickle for process pools

class _Only:
    def __init__(self, s: int):
        self.s = s

    def __call__(self, u: int) -> bool:
        return u == self.s


def _adaptive_job(job: dict) -> dict:
    config = ExperimentConfig.from_dict(job["config"])
    model = build_model(config, job["observations"])
    track = None if job.get("probe") is None else _Only(job["probe"])
    run = adaptive_lag_run(model, job["n_particles"], job["epsilon"], config.precision,
                           objective_by_name(config.objective),
                           stream(config.seed, job["tag"], job["r"]), track=track)
    by_s = run.by_s()
    s_values = sorted(by_s)
    return {
        "s": s_values,
        "estimate": [by_s[s].estimate for s in s_values],
        "lag": [by_s[s].lag for s in s_values],
        "active": run.active_counts,
        "runtime": run.runtime,
    }


def _fixed_job(job: dict) -> dict:
    config = ExperimentConfig.from_dict(job["config"])
    model = build_model(config, job["observations"])
    runs = fixed_lag_runs(model, config.lags, config.n_particles,
                          objective_by_name(config.objective),
                          stream(config.seed, FIXED, job["r"]), marginals=[job["probe"]])
    return {int(d): (runs[d][0].estimate, runs[d][0].lag) for d in runs}


def _map(fn: Callable[[dict], Any], jobs: list[dict], workers: int) -> list:
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _adaptive_replicates(config: ExperimentConfig, observations: np.ndarray, epsilon: float,
                         *, tag: int = ADAPTIVE, replicates: int | None = None,
                         n_particles: int | None = None, probe: int | None = None) -> dict:
    replicates = config.replicates if replicates is None else replicates
    jobs = [
        {"config": config.to_dict(), "observations": observations, "epsilon": epsilon,
         "n_particles": config.n_particles if n_particles is None else n_particles,
         "tag": tag, "r": r, "probe": probe}
        for r in range(replicates)
    ]
    outs = _map(_adaptive_job, jobs, config.workers)
    return {
        "s": outs[0]["s"],
        "estimates": np.array([o["estimate"] for o in outs]),
        "lags": np.array([o["lag"] for o in outs], dtype=float),
        "active": np.array([o["active"] for o in outs]),
        "runtime": float(np.mean([o["runtime"] for o in outs])),
    }


def simulate_data(config: ExperimentConfig) -> np.ndarray:
    model = build_model(config)
    return simulate(model, config.horizon, seed=config.effective_data_seed).observations


def exact_reference(config: ExperimentConfig, observations: np.ndarray) -> np.ndarray:
    params = lgssm_params_from(config.model_params)
    if config.objective == "identity":
        return smoothed_objective(params, observations, np.eye(params.state_dim)[0])
    if config.objective == "square":
        return smoothed_second_moment(params, observations)
    if config.objective == "zero":
        return np.zeros(len(observations))
    raise InvalidParameterError(f"no exact reference for objective {config.objective!r}")


# ---------------------------------------------------------------------------
# studies

def run_lgssm_experiment(config: ExperimentConfig) -> Report:
    """Adaptive-lag and exact Kalman variants on one simulated LGSSM dataset."""
    if config.model != "lgssm":
        raise InvalidParameterError("the LGSSM study needs model = 'lgssm'")
    obs = simulate_data(config)
    ref = exact_reference(config, obs)
    s_all = list(range(len(obs)))
    results = []
    for eps in config.epsilons:
        rep = _adaptive_replicates(config, obs, eps)
        results.append(_aggregate("adaptive", eps, rep["s"], rep["estimates"], rep["lags"], ref,
                                  max_active=rep["active"].max(axis=0).tolist(),
                                  runtime=rep["runtime"]))
    if config.objective == "identity":
        params = lgssm_params_from(config.model_params)
        alpha = np.eye(params.state_dim)[0]
        for eps in config.epsilons:
            if not eps > 0:
                continue
            run = ideal_adaptive_lag_run(params, obs, (alpha, 0.0), eps)
            by_s = {m.s: m for m in run.marginals}
            est = np.array([[by_s[s].estimate for s in s_all]])
            lags = np.array([[by_s[s].lag for s in s_all]], dtype=float)
            results.append(_aggregate("kalman", eps, s_all, est, lags, ref,
                                      max_active=list(run.active_counts)))
    trace = criterion_trace(build_model(config, obs), config.n_particles, config.precision, 0,
                            objective_by_name(config.objective), stream(config.seed, TRACE))
    return Report(study="lgssm", config=config.to_dict(),
                  reference={"s": s_all, "mean": ref.tolist()},
                  results=results, variance_trace=trace.tolist())


def _cache_key(config: ExperimentConfig, observations: np.ndarray, probe: int | None) -> str:
    payload = json.dumps({
        "model": config.model, "params": config.model_params, "objective": config.objective,
        "n": config.reference_particles, "k": config.precision,
        "reps": config.reference_replicates, "seed": config.seed, "probe": probe,
    }, sort_keys=True).encode() + observations.tobytes()
    return hashlib.sha256(payload).hexdigest()[:24]


def particle_reference(config: ExperimentConfig, observations: np.ndarray,
                       probe: int | None = None) -> np.ndarray:
    """Estimates of never-stopping smoother replicates, shape (reps, n_marginals).

    Cached on disk under ``cache_dir`` keyed by model, data and settings.
    """
    cache_dir = Path(config.cache_dir or Path(config.output_dir) / "cache")
    path = cache_dir / f"reference-{_cache_key(config, observations, probe)}.npy"
    if path.exists():
        return np.load(path)
    rep = _adaptive_replicates(config, observations, 0.0, tag=REFERENCE,
                               replicates=config.reference_replicates,
                               n_particles=config.reference_particles, probe=probe)
    cache_dir.mkdir(parents=True, exist_ok=True)
    np.save(path, rep["estimates"])
    return rep["estimates"]


def run_sv_experiment(config: ExperimentConfig) -> Report:
    """Adaptive-lag on the SV model against the averaged full-smoother reference."""
    if config.model != "sv":
        raise InvalidParameterError("the SV study needs model = 'sv'")
    obs = simulate_data(config)
    ref_runs = particle_reference(config, obs)
    ref = ref_runs.mean(axis=0)
    s_all = list(range(len(obs)))
    results = []
    for eps in config.epsilons:
        rep = _adaptive_replicates(config, obs, eps)
        results.append(_aggregate("adaptive", eps, rep["s"], rep["estimates"], rep["lags"], ref,
                                  max_active=rep["active"].max(axis=0).tolist(),
                                  runtime=rep["runtime"]))
    trace = criterion_trace(build_model(config, obs), config.n_particles, config.precision, 0,
                            objective_by_name(config.objective), stream(config.seed, TRACE))
    return Report(study="sv", config=config.to_dict(),
                  reference={"s": s_all, "mean": ref.tolist(),
                             "min": ref_runs.min(axis=0).tolist(),
                             "max": ref_runs.max(axis=0).tolist()},
                  results=results, variance_trace=trace.tolist())


def run_fixed_vs_adaptive(config: ExperimentConfig) -> Report:
    """Distribution of fixed-lag and adaptive-lag estimates at ``config.probe``."""
    probe = config.probe
    if not 0 <= probe <= config.horizon:
        raise InvalidParameterError("probe must lie in [0, horizon]")
    obs = simulate_data(config)
    if config.model == "lgssm":
        ref_value = float(exact_reference(config, obs)[probe])
        reference = {"s": [probe], "mean": [ref_value]}
    else:
        ref_runs = particle_reference(config, obs, probe=probe)[:, 0]
        ref_value = float(ref_runs.mean())
        reference = {"s": [probe], "mean": [ref_value],
                     "min": [float(ref_runs.min())], "max": [float(ref_runs.max())]}
    ref = np.array([ref_value])

    fixed = _map(_fixed_job, [{"config": config.to_dict(), "observations": obs, "r": r,
                               "probe": probe} for r in range(config.replicates)],
                 config.workers)
    results = []
    for d in config.lags:
        d = int(d)
        est = np.array([[f[d][0]] for f in fixed])
        lags = np.array([[f[d][1]] for f in fixed], dtype=float)
        results.append(_aggregate("fixed", d, [probe], est, lags, ref, keep_values=True))
    for eps in config.epsilons:
        rep = _adaptive_replicates(config, obs, eps, probe=probe)
        results.append(_aggregate("adaptive", eps, rep["s"], rep["estimates"], rep["lags"], ref,
                                  keep_values=True, runtime=rep["runtime"]))
    return Report(study="compare-lags", config=config.to_dict(), reference=reference,
                  results=results)


# ---------------------------------------------------------------------------
# output files

def _dumps(data: Any) -> str:
    return json.dumps(data, indent=1, sort_keys=True, allow_nan=True) + "\n"


def write_report(report: Report, output_dir) -> dict[str, Path]:
    """Write ``report.json``, ``estimates.csv``, ``variance_trace.csv`` and ``timing.json``.

    Only ``timing.json`` depends on wall-clock measurements.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in
             ("report.json", "estimates.csv", "variance_trace.csv", "timing.json")}
    paths["report.json"].write_text(_dumps(report.to_dict()))

    lines = ["method,param,s,mean,std,lag_mean"]
    ref = report.reference
    for k, s in enumerate(ref["s"]):
        lines.append(f"reference,,{s},{ref['mean'][k]!r},,")
    for r in report.results:
        for k, s in enumerate(r.s):
            lines.append(f"{r.method},{r.param!r},{s},{r.mean[k]!r},{r.std[k]!r},{r.lag_mean[k]!r}")
    paths["estimates.csv"].write_text("\n".join(lines) + "\n")

    trace = report.variance_trace or []
    paths["variance_trace.csv"].write_text(
        "t,criterion\n" + "".join(f"{t},{v!r}\n" for t, v in enumerate(trace)))
    paths["timing.json"].write_text(_dumps(report.timing()))
    return paths


STUDIES: dict[str, Callable[[ExperimentConfig], Report]] = {
    "lgssm-study": run_lgssm_experiment,
    "sv-study": run_sv_experiment,
    "compare-lags": run_fixed_vs_adaptive,
}

STUDY_DEFAULTS: dict[str, dict] = {
    "lgssm-study": {"model": "lgssm", "horizon": 200, "epsilons": [0.5, 0.2, 0.1, 1e-3],
                    "replicates": 100},
    "sv-study": {"model": "sv", "horizon": 200, "epsilons": [0.5, 0.1, 1e-3],
                 "replicates": 200},
    "compare-lags": {"model": "lgssm", "horizon": 1000, "objective": "square",
                     "epsilons": [0.5, 0.2, 0.1, 1e-3, 1e-6], "replicates": 200, "probe": 750},
}
