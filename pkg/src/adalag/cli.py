"""Command line entry point.

Subcommands: ``simulate``, ``smooth``, ``lgssm-study``, ``sv-study`` and
``compare-lags``. Settings come from an optional JSON config file and any
number of ``--key=value`` overrides, e.g. ``--epsilons=0.5,1e-3``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import typing

from .errors import AdalagError
from .experiments import (
    STUDIES,
    STUDY_DEFAULTS,
    ExperimentConfig,
    build_model,
    write_report,
)
from .models import read_observations, simulate
from .particle import GenealogyStore, unique_ancestors
from .results import write_marginals
from .smoothers import AdaptiveLagSmoother, objective_by_name

_LIST_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)
              if typing.get_origin(f.type) is list or f.type in ("list", list)}


def _parse_value(key: str, raw: str):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if key in _LIST_KEYS and not isinstance(value, list):
        value = [json.loads(v) for v in str(raw).split(",") if v]
    return value


def parse_overrides(extra: list[str]) -> dict:
    out = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise SystemExit(f"expected --key=value, got {item!r}")
        key, raw = item[2:].split("=", 1)
        key = key.replace("-", "_")
        if key.startswith("params."):
            out.setdefault("params", {})[key[len("params."):]] = _parse_value(key, raw)
        else:
            out[key] = _parse_value(key, raw)
    return out


def load_config(command: str, path: str | None, extra: list[str]) -> ExperimentConfig:
    data = dict(STUDY_DEFAULTS.get(command, {}))
    if path:
        with open(path) as fh:
            data.update(json.load(fh))
    overrides = parse_overrides(extra)
    if "params" in overrides and "params" in data:
        overrides["params"] = {**data["params"], **overrides["params"]}
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def _warn_precision(config: ExperimentConfig) -> None:
    if config.precision == 1:
        print("warning: precision K = 1 makes the backward statistics degenerate; "
              "use K >= 2", file=sys.stderr)


def cmd_simulate(config: ExperimentConfig, args) -> None:
    traj = simulate(build_model(config), config.horizon, seed=config.effective_data_seed)
    traj.to_csv(args.out or sys.stdout)


def cmd_smooth(config: ExperimentConfig, args) -> None:
    _warn_precision(config)
    obs = read_observations(args.observations)
    model = build_model(config)
    epsilon = config.epsilons[0] if args.epsilon is None else args.epsilon
    smoother = AdaptiveLagSmoother(model, config.n_particles, epsilon, config.precision,
                                   objective_by_name(config.objective), config.seed)
    store = GenealogyStore(len(obs)) if args.diagnostics else None
    diag = ["t,ess,unique_ancestors_at_0"]
    out = sys.stdout
    write_marginals([], out)
    for t, y in enumerate(obs):
        emitted = smoother.step(y, is_final=t == len(obs) - 1)
        write_marginals(emitted, out, header=False)
        out.flush()
        if store is not None:
            store.push(smoother.sample)
            diag.append(f"{t},{smoother.sample.ess()!r},{unique_ancestors(store, 0)}")
    if store is not None:
        with open(args.diagnostics, "w") as fh:
            fh.write("\n".join(diag) + "\n")


def cmd_study(config: ExperimentConfig, args) -> None:
    _warn_precision(config)
    report = STUDIES[args.command](config)
    paths = write_report(report, config.output_dir)
    for path in paths.values():
        print(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adalag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a trajectory and write it as CSV")
    p.add_argument("--out", help="output CSV path (default stdout)")
    p = sub.add_parser("smooth", help="stream adaptive-lag estimates for an observation CSV")
    p.add_argument("observations", help="CSV with y_* columns")
    p.add_argument("--epsilon", type=float, help="tolerance (default: first of epsilons)")
    p.add_argument("--diagnostics", help="write t,ess,unique_ancestors_at_0 to this CSV")
    for name in STUDIES:
        sub.add_parser(name, help=f"run the {name} study")
    for p in sub.choices.values():
        p.add_argument("--config", help="JSON config file")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        config = load_config(args.command, args.config, extra)
        if args.command == "simulate":
            cmd_simulate(config, args)
        elif args.command == "smooth":
            cmd_smooth(config, args)
        else:
            cmd_study(config, args)
    except AdalagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
