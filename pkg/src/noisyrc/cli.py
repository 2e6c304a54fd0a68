"""Noise-regularized reservoir computing: ``noisyrc {gen,optimize,train,predict,sweep,report}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import harness, hyperopt
from .dynsys import Dataset
from .errors import (ConfigError, DegenerateChannelError, DegenerateMatrixError, IntegrationDiverged,
                     RankDeficientError, ReservoirDiverged)
from .metrics import Projection
from .reservoir import Hyperparams, TrainedModel, predict, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
NUMERIC_ERRORS = (IntegrationDiverged, ReservoirDiverged, RankDeficientError,
                  DegenerateMatrixError, DegenerateChannelError, np.linalg.LinAlgError,
                  FloatingPointError)


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def sweep_config(cfg: dict, profile: str = None, system: str = None) -> harness.SweepConfig:
    """Merge a parsed TOML config over a named profile."""
    profile = cfg.get("profile", profile or "desk")
    system = cfg.get("system", system or "MG30")
    base = harness.profile(profile, system)
    sweep = dict(cfg.get("sweep", {}))
    unknown = set(sweep) - set(harness.SweepConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown [sweep] keys: {sorted(unknown)}")
    if "sigma_points" in cfg.get("grid", {}):
        sweep["sigma_grid"] = harness.log_grid(int(cfg["grid"]["sigma_points"]))
    metric = dict(cfg.get("metric", {}))
    if "projection" in metric:
        metric["projection"] = Projection(**metric["projection"])
    try:
        m = replace(base.metric, **metric)
        out = replace(base, metric=m, dataset={**base.dataset, **cfg.get("dataset", {})}, **sweep)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if "n_ensemble" in sweep:
        out = replace(out, metric=replace(out.metric, n_ensemble=out.n_ensemble))
    return out


def _hyperparams(args, cfg) -> Hyperparams:
    values = dict(cfg.get("hyperparams", {}))
    if args.hyperparams:
        values.update(json.loads(Path(args.hyperparams).read_text()))
    for k in ("rho", "gamma", "alpha", "beta", "p", "sigma", "n_nodes"):
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    try:
        return Hyperparams(**values)
    except TypeError as exc:
        raise ConfigError(f"incomplete hyperparameters: {exc}") from exc


def cmd_gen(args, cfg):
    spec = dict(cfg.get("dataset", {}))
    for key in ("tau", "train_len", "test_len", "transient", "seed"):
        v = getattr(args, key)
        if v is not None:
            spec[key] = v
    ds = harness.dataset_from_spec(args.system, spec)
    ds.save(args.out)
    print(f"wrote {args.out}: {ds.n_channels} channel(s) x {ds.data.shape[1]} steps, dt={ds.dt}")


def cmd_optimize(args, cfg):
    ds = Dataset.load(args.data)
    frozen = {"sigma": args.sigma} if args.sigma is not None else {}
    space = hyperopt.reservoir_space(**frozen)
    objective = hyperopt.make_objective(ds, space, args.n_nodes, n_rep=args.n_rep,
                                        t_opt=args.t_opt, seed=args.seed)
    result = hyperopt.optimize(objective, space, args.budget, seed=args.seed)
    if args.trace:
        hyperopt.write_trace(result, args.trace)
    best = {**result.best_dict(), "n_nodes": args.n_nodes}
    if args.out:
        Path(args.out).write_text(json.dumps(best, indent=1))
    print(json.dumps({"best_value": result.best_value, "hyperparams": best}))


def cmd_train(args, cfg):
    ds = Dataset.load(args.data)
    hp = _hyperparams(args, cfg)
    model = train(ds, hp, args.seed, noise_mode=args.noise_mode)
    model.save(args.out)
    print(f"wrote {args.out}: fit_rmse={model.fit_rmse:.6g}")


def cmd_predict(args, cfg):
    model = TrainedModel.load(args.model)
    ds = Dataset.load(args.data)
    pred = predict(model, ds.warmup(args.warmup), args.horizon)
    if args.raw:
        pred = pred * model.norm.std[:, None] + model.norm.mean[:, None]
    np.savetxt(args.out, pred.T, delimiter=",", fmt="%.17g")
    print(f"wrote {args.out}: {pred.shape[1]} steps")


def cmd_sweep(args, cfg):
    config = sweep_config(cfg, args.profile, args.system)
    if args.master_seed is not None:
        config = replace(config, master_seed=args.master_seed)
    records = harness.run_sweep(config, args.checkpoint, workers=args.workers)
    if args.out:
        harness.report(records, args.out)
    summary = {"sigmas": [r.sigma for r in records],
               "rmse_median": [r.median("rmse") for r in records]}
    s = harness.resonance(records)
    if s is not None:
        summary.update(best_sigma=s.best_sigma, interior=s.interior, dv_best_sigma=float(s.sigmas[s.dv_argmin]))
    print(json.dumps(summary))


def cmd_report(args, cfg):
    paths = sorted(Path(args.checkpoint).glob("sigma_*.json"))
    if not paths:
        raise ConfigError(f"no sweep records in {args.checkpoint}")
    records = [harness.SweepRecord.from_dict(json.loads(p.read_text())) for p in paths]
    print(harness.report(records, args.out))


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; exit code 2 is reserved for numerics
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="noisyrc", description="Noise-regularized reservoir computing on chaotic benchmarks.")
    ap.add_argument("--config", help="TOML config file")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset")
    p.add_argument("--system", default="MG", choices=["MG", "KS"])
    p.add_argument("--tau", type=float)
    p.add_argument("--train-len", dest="train_len", type=int)
    p.add_argument("--test-len", dest="test_len", type=int)
    p.add_argument("--transient", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("optimize", help="surrogate hyperparameter search (sigma free or frozen)")
    p.add_argument("--data", required=True)
    p.add_argument("--budget", type=int, default=150)
    p.add_argument("--sigma", type=float, help="freeze the noise amplitude")
    p.add_argument("--n-nodes", dest="n_nodes", type=int, default=300)
    p.add_argument("--n-rep", dest="n_rep", type=int, default=3)
    p.add_argument("--t-opt", dest="t_opt", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="CSV trace output")
    p.add_argument("--out", help="JSON file for the best hyperparameters")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("train", help="train a reservoir and save the model")
    p.add_argument("--data", required=True)
    p.add_argument("--hyperparams", help="JSON file of hyperparameters")
    for k in ("rho", "gamma", "alpha", "beta", "p", "sigma"):
        p.add_argument(f"--{k}", type=float)
    p.add_argument("--n-nodes", dest="n_nodes", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-mode", dest="noise_mode", default="series",
                   choices=["series", "input-only"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="closed-loop forecast from the test start")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, default=300)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--raw", action="store_true", help="undo normalization")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="noise-amplitude sweep with per-sigma re-optimization")
    p.add_argument("--profile", choices=["desk", "full", "micro"])
    p.add_argument("--system", choices=["MG30", "MG17", "KS"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="CSV and SVG plots from a sweep checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, load_config(args.config))
    except (ConfigError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
