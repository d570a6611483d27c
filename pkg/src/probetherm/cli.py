"""Command-line front end. Each subcommand parses a config and calls the library."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .detector import DetectorConfig, FilterInstabilityError, run_noisy_strategy, write_record_csv
from .fisher import fisher_finite_time
from .inference import (
    ESTIMATORS,
    PosteriorUnderflowError,
    TemperatureGrid,
    bayes_update,
    estimate_ml,
    estimate_mp,
    flat_prior,
    write_posterior_csv,
)
from .jump_process import (
    BathModel,
    InitMode,
    ValidationError,
    read_trajectory_csv,
    sample_trajectory,
    sufficient_stats,
    write_trajectory_csv,
)
from .strategy import (
    ConvergenceError,
    Mode,
    adaptive_bound,
    bound_prior,
    optimal_adaptive_ratio,
    optimize_gap_nonadaptive,
)

SCHEMA_VERSION = "1"
STOCHASTIC = {"simulate", "montecarlo", "noisy", "bias-sweep", "bvm-check"}

# parameter name -> (type, default); None default means required or unset
COMMON = {"bath": (str, "bosonic"), "coupling": (float, 1.0)}
PRIOR = {"tmin": (float, 0.1), "tmax": (float, 10.0), "nodes": (int, 400)}
DETECTOR = {"lambda": (float, None), "gamma": (float, 10.0), "dt": (float, None)}
ENSEMBLE = {"mode": (str, "nonadaptive"), "n_trajectories": (int, 1000), "tau": (float, 100.0),
            "gap": (float, None), "workers": (int, None), "seed": (int, None)}

PARAMS = {
    "simulate": {**COMMON, "gap": (float, None), "temperature": (float, None), "tau": (float, None),
                 "n0": (str, "thermal"), "seed": (int, None)},
    "estimate": {**COMMON, **PRIOR, "trajectory": (str, None), "gap": (float, None), "init": (str, "fixed")},
    "fisher": {**COMMON, "gap": (float, None), "temperature": (list, None), "tau": (list, None),
               "init": (str, "thermal"), "p1_0": (float, 0.0)},
    "optimize-gap": {**COMMON, "tmin": (float, 0.1), "tmax": (float, 10.0)},
    "montecarlo": {**COMMON, **PRIOR, **ENSEMBLE, **DETECTOR},
    "noisy": {**COMMON, **PRIOR, "lambda": (float, None), "gamma": (float, 10.0), "dt": (float, None),
              "tau": (float, None), "gap": (float, None), "temperature": (float, None), "seed": (int, None)},
    "bias-sweep": {**COMMON, **PRIOR, **ENSEMBLE, **DETECTOR, "n_trajectories": (int, 200),
                   "n_temperatures": (int, 35)},
    "bvm-check": {**COMMON, **PRIOR, "temperature": (float, 1.0), "tau": (float, None),
                  "gap": (float, None), "n_runs": (int, 100), "seed": (int, None)},
}
REQUIRED = {
    "simulate": ("gap", "temperature", "tau"),
    "estimate": ("trajectory", "gap"),
    "fisher": ("gap", "temperature", "tau"),
    "noisy": ("lambda", "tau", "gap", "temperature"),
}


class UsageError(ValidationError):
    pass


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probetherm", description="Thermometry with a monitored two-level probe.")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, params in PARAMS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="JSON config file (flags override it)")
        sp.add_argument("--out", default="out", help="output directory")
        for name, (typ, _) in params.items():
            if typ is list:
                sp.add_argument(_flag(name), dest=name, type=float, nargs="+", default=None)
            else:
                sp.add_argument(_flag(name), dest=name, type=typ, default=None)
    return p


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"config: cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config: top level must be an object")
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise UsageError(f"schema_version: expected {SCHEMA_VERSION!r}, got {version!r}")
    return doc


def resolve(cmd: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags; reject unknown config keys."""
    params = PARAMS[cmd]
    cfg = {name: default for name, (_, default) in params.items()}
    if args.config:
        doc = load_config(args.config)
        doc.pop("command", None)
        for key, value in doc.items():
            if key not in params:
                raise UsageError(f"{key}: unknown config key for {cmd}")
            typ = params[key][0]
            try:
                cfg[key] = [float(v) for v in np.atleast_1d(value)] if typ is list else typ(value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"{key}: {exc}") from exc
    for name in params:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    if cmd in STOCHASTIC and cfg.get("seed") is None:
        raise UsageError("seed: --seed is required for stochastic subcommands")
    for name in REQUIRED.get(cmd, ()):
        if cfg[name] is None:
            raise UsageError(f"{name}: missing required parameter {_flag(name)}")
    return cfg


def _bath(cfg) -> BathModel:
    try:
        return BathModel(cfg["bath"], cfg["coupling"])
    except ValueError as exc:
        raise UsageError(f"bath: {exc}") from exc


def _grid(cfg) -> TemperatureGrid:
    return TemperatureGrid.log_uniform(cfg["tmin"], cfg["tmax"], cfg["nodes"])


def _detector(cfg) -> DetectorConfig | None:
    if cfg.get("lambda") is None:
        return None
    if cfg.get("dt") is None:
        return DetectorConfig.with_default_dt(cfg["lambda"], cfg["gamma"])
    return DetectorConfig(cfg["lambda"], cfg["gamma"], cfg["dt"])


def _mc_config(cfg) -> harness.McConfig:
    return harness.McConfig(
        bath=_bath(cfg), t_min=cfg["tmin"], t_max=cfg["tmax"], mode=Mode(cfg["mode"]),
        n_trajectories=cfg["n_trajectories"], tau_max=cfg["tau"], detector=_detector(cfg),
        master_seed=cfg["seed"], grid_nodes=cfg["nodes"], initial_gap=cfg["gap"], workers=cfg["workers"],
    )


def cmd_simulate(cfg, out: Path) -> dict:
    n0 = cfg["n0"] if cfg["n0"] == "thermal" else int(cfg["n0"])
    rng = np.random.default_rng(cfg["seed"])
    traj = sample_trajectory(_bath(cfg), cfg["gap"], cfg["temperature"], cfg["tau"], n0=n0, rng=rng)
    path = out / "trajectory.csv"
    write_trajectory_csv(traj, path)
    s = sufficient_stats(traj)
    return {"k": s.k, "l": s.l, "tau1": s.tau1, "n0": s.n0, "trajectory_csv_path": str(path)}


def cmd_estimate(cfg, out: Path) -> dict:
    model, grid = _bath(cfg), _grid(cfg)
    traj = read_trajectory_csv(cfg["trajectory"])
    post = bayes_update(flat_prior(grid), traj, model, cfg["gap"], InitMode(cfg["init"]))
    estimates = {name: f(post) for name, f in ESTIMATORS.items()}
    estimates["ml"] = estimate_ml(traj, model, cfg["gap"])
    estimates["mp"] = estimate_mp(traj, model, cfg["gap"], grid)
    path = out / "posterior.csv"
    write_posterior_csv(post, path)
    s = sufficient_stats(traj)
    return {"k": s.k, "l": s.l, "tau1": s.tau1, "estimates": estimates, "posterior_csv_path": str(path)}


def cmd_fisher(cfg, out: Path) -> dict:
    model = _bath(cfg)
    rows = []
    for T in cfg["temperature"]:
        for tau in cfg["tau"]:
            f = fisher_finite_time(model, cfg["gap"], T, tau, p1_0=cfg["p1_0"], init=InitMode(cfg["init"]))
            rows.append((T, cfg["gap"], tau, f.total, f.initial_term, f.linear_term))
    path = out / "fisher.csv"
    with open(path, "w") as fh:
        fh.write("T,omega,tau,F_total,F_initial,F_linear\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return {"rows": len(rows), "fisher_csv_path": str(path)}


def cmd_optimize_gap(cfg, out: Path) -> dict:
    model = _bath(cfg)
    prior = bound_prior(cfg["tmin"], cfg["tmax"])
    omega, coeff = optimize_gap_nonadaptive(model, prior)
    x_star, c_star = optimal_adaptive_ratio(model)
    summary = {"omega_star": omega, "bound_coeff": coeff, "x_star": x_star, "c_star": c_star,
               "adaptive_bound_coeff": adaptive_bound(model, prior)}
    (out / "optimize_gap.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_montecarlo(cfg, out: Path) -> dict:
    res = harness.run_error_curve(_mc_config(cfg))
    path = out / "results.csv"
    res.write_csv(path)
    return {"final_tau": float(res.sample_times[-1]), "final_mean_DR": float(res.mean_DR[-1]),
            "final_stderr_DR": float(res.stderr_DR[-1]), "crb_nonadaptive": float(res.crb_nonadaptive[-1]),
            "crb_adaptive": float(res.crb_adaptive[-1]), "n_failed": res.n_failed, "valid": res.valid,
            "results_csv_path": str(path)}


def cmd_noisy(cfg, out: Path) -> dict:
    model, det = _bath(cfg), _detector(cfg)
    prior = flat_prior(_grid(cfg))
    rng = np.random.default_rng(cfg["seed"])
    run = run_noisy_strategy(model, prior, cfg["temperature"], cfg["tau"], det, cfg["gap"], rng)
    rec_path, post_path, est_path = out / "record.csv", out / "posterior.csv", out / "estimate.json"
    write_record_csv(run.record, rec_path)
    write_posterior_csv(run.posteriors[-1], post_path)
    estimates = {name: f(run.posteriors[-1]) for name, f in ESTIMATORS.items()}
    est_path.write_text(json.dumps(estimates, indent=2, sort_keys=True) + "\n")
    return {"estimates": estimates, "dt": det.dt, "n_steps": run.record.n_steps,
            "record_csv_path": str(rec_path), "posterior_csv_path": str(post_path),
            "estimate_json_path": str(est_path)}


def cmd_bias_sweep(cfg, out: Path) -> dict:
    temps = harness.default_bias_temperatures(cfg["tmin"], cfg["tmax"], cfg["n_temperatures"])
    res = harness.run_bias_sweep(_mc_config(cfg), temps)
    path = out / "bias.csv"
    res.write_csv(path)
    return {"n_temperatures": len(res.rows), "n_failed": sum(r.n_failed for r in res.rows),
            "bias_csv_path": str(path)}


def cmd_bvm_check(cfg, out: Path) -> dict:
    rep = harness.run_bvm_check(
        _bath(cfg), T_true=cfg["temperature"], tau=cfg["tau"], omega=cfg["gap"], n_runs=cfg["n_runs"],
        master_seed=cfg["seed"], t_min=cfg["tmin"], t_max=cfg["tmax"], grid_nodes=cfg["nodes"],
    )
    summary = {"status": rep.status, "relaxations": rep.relaxations, "fisher": rep.fisher,
               "variance_ratio": rep.variance_ratio, "mean_offset": rep.mean_offset, "n_runs": rep.n_runs}
    (out / "bvm.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "fisher": cmd_fisher,
    "optimize-gap": cmd_optimize_gap,
    "montecarlo": cmd_montecarlo,
    "noisy": cmd_noisy,
    "bias-sweep": cmd_bias_sweep,
    "bvm-check": cmd_bvm_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args.command, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PosteriorUnderflowError, FilterInstabilityError, ConvergenceError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
