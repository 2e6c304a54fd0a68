"""Noise-amplitude sweeps: per-sigma re-optimization, seeded ensembles, checkpoints, reports.

For every noise amplitude on the grid the remaining five hyperparameters
are optimized with sigma frozen; an ensemble of independently seeded
reservoirs is then trained and scored on short-term (RMSE, horizon,
stability) and long-term (deviation value) measures.

Per-run seeds depend only on ``(master_seed, sigma_index, run_index)`` so
results are independent of execution order and of ensemble size (prefix
stable). Each finished sigma point is written to its own JSON file; an
interrupted sweep resumes from those files.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import hyperopt
from .dynsys import Dataset, KSConfig, KSParams, MGConfig, MGParams, build_dataset
from .errors import (ConfigError, DegenerateMatrixError, EmptyEnsembleError, RankDeficientError,
                     ReservoirDiverged)
from .metrics import MetricConfig, Projection, deviation_value, pointwise_error, short_term, stability
from .reservoir import Hyperparams, predict, seed_sequence, train

log = logging.getLogger(__name__)

THREADS_ENV = "NOISYRC_THREADS"
SIGMA_MIN, SIGMA_MAX = 1e-8, 10 ** -0.5
FIVE = ("rho", "gamma", "alpha", "beta", "p")
MEASURES = ("rmse", "t_s", "dv", "one_step")

# seed-stream tags
_OPT_STREAM = 1
_OBJECTIVE_STREAM = 2
_RUN_STREAM = 3


# Desk-scale MG grid: dense around the expected optimum, anchored at both bounds.
DESK_GRID = [1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1, 10 ** -0.5]


def log_grid(n: int, lo: float = SIGMA_MIN, hi: float = SIGMA_MAX) -> List[float]:
    """``n`` noise amplitudes uniformly spaced in log10 between ``lo`` and ``hi``."""
    return [float(v) for v in np.logspace(np.log10(lo), np.log10(hi), n)]


@dataclass
class SweepConfig:
    sigma_grid: List[float]
    system: str = "MG"
    dataset: Dict = field(default_factory=dict)
    n_ensemble: int = 80
    budget: int = 150
    n_rep: int = 3
    n_nodes: int = 1200
    metric: MetricConfig = field(default_factory=MetricConfig)
    master_seed: int = 0
    warmup: int = 100
    washout: Optional[int] = None
    noise_mode: str = "series"
    t_opt: Optional[int] = None

    def __post_init__(self):
        if not self.sigma_grid:
            raise ConfigError("sigma_grid is empty")
        for s in self.sigma_grid:
            if not SIGMA_MIN * (1 - 1e-9) <= s <= SIGMA_MAX * (1 + 1e-9):
                raise ConfigError(f"sigma {s} outside [1e-8, 10^-0.5]")
        if self.n_ensemble < 2:
            raise ConfigError("n_ensemble must be >= 2 for error bars")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metric"]["projection"] = asdict(self.metric.projection)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        metric = dict(d.pop("metric", {}))
        if "projection" in metric:
            metric["projection"] = Projection(**metric["projection"])
        return cls(metric=MetricConfig(**metric), **d)

    def build_dataset(self) -> Dataset:
        return dataset_from_spec(self.system, self.dataset)


def dataset_from_spec(system: str, spec: dict) -> Dataset:
    """Build a dataset from a flat dict of generation overrides.

    Keys matching the system parameters (``tau``, ``L``, ``Q``, ...) go into
    the params object; the rest are config fields (``train_len``, ...).
    """
    spec = dict(spec)
    system = system.upper()
    if system == "MG":
        pkeys = {k: spec.pop(k) for k in list(spec) if k in MGParams.__dataclass_fields__}
        return build_dataset("MG", MGConfig(params=MGParams(**{"tau": 30.0, **pkeys})), **spec)
    if system == "KS":
        pkeys = {k: spec.pop(k) for k in list(spec) if k in KSParams.__dataclass_fields__}
        return build_dataset("KS", KSConfig(params=KSParams(**pkeys)), **spec)
    raise ConfigError(f"unknown system {system!r}")


def profile(name: str, system: str = "MG30") -> SweepConfig:
    """Named presets: ``"desk"`` (CI-friendly) and ``"full"`` (reported scale).

    ``system`` is ``"MG30"``, ``"MG17"`` or ``"KS"``.
    """
    if name not in ("desk", "full", "micro"):
        raise ConfigError(f"unknown profile {name!r}")
    desk = name != "full"
    if system in ("MG30", "MG17"):
        tau = 30 if system == "MG30" else 17
        window = 300 if tau == 30 else 900
        ds = {"tau": float(tau), "train_len": 30_000 if desk else 150_000, "test_len": 10_000}
        # full-resolution reference: a coarser one puts a floor under DV
        # that is larger than the differences between well-trained machines
        metric = MetricConfig(r_c=0.1, window=window, long_window=10_000,
                              n_ensemble=20 if desk else 80, dv_subsample=1,
                              projection=Projection.mg(tau))
        cfg = SweepConfig(sigma_grid=list(DESK_GRID) if desk else log_grid(16), system="MG", dataset=ds,
                          n_ensemble=metric.n_ensemble, budget=150 if desk else 300,
                          n_nodes=300 if desk else 1200, metric=metric)
    elif system == "KS":
        lt = 1.0 / 0.089
        dt = 0.25
        ds = {"train_lt": 200.0 if desk else 1000.0, "transient_lt": 50.0 if desk else 300.0,
              "test_lt": 100.0}
        metric = MetricConfig(r_c=8.0, window=int(round(5 * lt / dt)),
                              long_window=int(round(100 * lt / dt)),
                              n_ensemble=20 if desk else 80, dv_subsample=5,
                              projection=Projection.ks())
        cfg = SweepConfig(sigma_grid=log_grid(8 if desk else 16), system="KS", dataset=ds,
                          n_ensemble=metric.n_ensemble, budget=150 if desk else 300,
                          n_nodes=1000 if desk else 4000, metric=metric,
                          t_opt=int(round(6 * lt / dt)))
    else:
        raise ConfigError(f"unknown system preset {system!r}")
    if name == "micro":
        cfg = replace(cfg, sigma_grid=[1e-6, 1e-2], n_ensemble=3, budget=14, n_rep=1,
                      n_nodes=60, dataset={**cfg.dataset, "train_len": 3000, "test_len": 2000},
                      metric=replace(cfg.metric, n_ensemble=3, long_window=2000))
    return cfg


@dataclass
class RunMetrics:
    seed: int
    rmse: float
    t_s: float
    stable: bool
    dv: float
    one_step: float
    diverged: bool = False


@dataclass
class SweepRecord:
    sigma: float
    hyperparams: Dict[str, float]
    runs: List[RunMetrics]
    sigma_index: int = 0
    objective: float = float("nan")
    r_c: float = 0.1

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    def values(self, measure: str) -> np.ndarray:
        return np.array([getattr(r, measure) for r in self.runs], dtype=float)

    def mean(self, measure: str) -> float:
        return aggregate(self.values(measure))[0]

    def std(self, measure: str) -> float:
        return aggregate(self.values(measure))[1]

    def median(self, measure: str) -> float:
        return float(np.median(self.values(measure)))

    @property
    def Rs(self) -> float:
        return stability(self.values("rmse"), self.r_c)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "sigma_index": self.sigma_index, "objective": self.objective,
                "r_c": self.r_c, "hyperparams": self.hyperparams,
                "runs": [asdict(r) for r in self.runs]}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRecord":
        return cls(sigma=d["sigma"], hyperparams=d["hyperparams"],
                   runs=[RunMetrics(**r) for r in d["runs"]], sigma_index=d["sigma_index"],
                   objective=d["objective"], r_c=d["r_c"])


def aggregate(values) -> tuple:
    """``(mean, population std)``; any non-finite entry makes both ``inf``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EmptyEnsembleError("no runs to aggregate")
    if not np.all(np.isfinite(v)):
        return float("inf"), float("inf")
    return float(v.mean()), float(v.std())


def run_seed(master_seed: int, sigma_index: int, run_index: int) -> int:
    return int(seed_sequence(master_seed, _RUN_STREAM, sigma_index, run_index).generate_state(1)[0])


def evaluate_run(dataset: Dataset, hp: Hyperparams, seed: int, metric: MetricConfig,
                 warmup: int = 100, washout: Optional[int] = None,
                 noise_mode: str = "series", reference: Optional[np.ndarray] = None) -> RunMetrics:
    """Train one reservoir and score it on the test window."""
    n_steps = max(metric.window, metric.long_window)
    truth = dataset.test[:, :n_steps]
    if truth.shape[1] < n_steps:
        raise ConfigError(f"test window has {truth.shape[1]} steps, metrics need {n_steps}")
    reference = dataset.train if reference is None else reference
    diverged = False
    try:
        model = train(dataset, hp, seed, washout=washout, noise_mode=noise_mode)
        pred = predict(model, dataset.warmup(warmup), n_steps)
    except ReservoirDiverged as exc:
        diverged = True
        pred = np.full_like(truth, np.nan)
        if exc.partial is not None:
            k = min(exc.partial.shape[1], n_steps)
            pred[:, :k] = exc.partial[:, :k]
    except (DegenerateMatrixError, RankDeficientError, np.linalg.LinAlgError):
        diverged = True
        pred = np.full_like(truth, np.nan)
    st = short_term(pred[:, :metric.window], truth[:, :metric.window], metric, dataset.dt)
    dv = deviation_value(pred[:, :metric.long_window], reference, metric.projection,
                         metric.dv_subsample)
    one = float(pointwise_error(pred[:, :1], truth[:, :1])[0])
    return RunMetrics(seed=seed, rmse=st.rmse, t_s=float(st.t_s), stable=st.stable, dv=dv,
                      one_step=one, diverged=diverged)


@dataclass
class EnsembleResult:
    runs: List[RunMetrics]
    r_c: float

    def aggregates(self) -> Dict[str, tuple]:
        out = {m: aggregate([getattr(r, m) for r in self.runs]) for m in MEASURES}
        out["Rs"] = stability([r.rmse for r in self.runs], self.r_c)
        return out


def run_ensemble(dataset: Dataset, hp: Hyperparams, n: int, master_seed: int,
                 metric: MetricConfig, sigma_index: int = 0, **run_kwargs) -> EnsembleResult:
    """``n`` independently seeded train/predict runs with fixed hyperparameters."""
    if n < 1:
        raise EmptyEnsembleError("ensemble size must be >= 1")
    runs = [evaluate_run(dataset, hp, run_seed(master_seed, sigma_index, i), metric, **run_kwargs)
            for i in range(n)]
    return EnsembleResult(runs, metric.r_c)


def optimize_at_sigma(dataset: Dataset, config: SweepConfig, sigma: float, sigma_index: int):
    space = hyperopt.reservoir_space(sigma=sigma)
    objective = hyperopt.make_objective(
        dataset, space, config.n_nodes, n_rep=config.n_rep, t_opt=config.t_opt,
        seed=int(seed_sequence(config.master_seed, _OBJECTIVE_STREAM).generate_state(1)[0]),
        warmup=config.warmup, washout=config.washout, noise_mode=config.noise_mode)
    opt_seed = seed_sequence(config.master_seed, _OPT_STREAM, sigma_index)
    return hyperopt.optimize(objective, space, config.budget, seed=opt_seed)


def sweep_point(config: SweepConfig, sigma_index: int, dataset: Optional[Dataset] = None) -> SweepRecord:
    """Optimize the five free hyperparameters at one sigma, then evaluate the ensemble."""
    dataset = dataset if dataset is not None else config.build_dataset()
    sigma = config.sigma_grid[sigma_index]
    result = optimize_at_sigma(dataset, config, sigma, sigma_index)
    best = result.best_dict()
    hp = Hyperparams(**best, n_nodes=config.n_nodes)
    ens = run_ensemble(dataset, hp, config.n_ensemble, config.master_seed, config.metric,
                       sigma_index=sigma_index, warmup=config.warmup, washout=config.washout,
                       noise_mode=config.noise_mode)
    log.info("sigma=%.3g objective=%.4g median rmse=%.4g", sigma, result.best_value,
             np.median([r.rmse for r in ens.runs]))
    return SweepRecord(sigma=sigma, hyperparams={k: best[k] for k in FIVE}, runs=ens.runs,
                       sigma_index=sigma_index, objective=result.best_value, r_c=config.metric.r_c)


class Checkpoint:
    """One JSON file per finished sigma plus an ``index.json`` listing them."""

    def __init__(self, directory: Union[str, Path], config: SweepConfig):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.config = config.to_dict()
        index = self.dir / "index.json"
        if index.exists():
            stored = json.loads(index.read_text())
            if stored.get("config") != json.loads(json.dumps(self.config)):
                raise ConfigError(f"checkpoint in {self.dir} was written for a different config")

    def _path(self, i: int) -> Path:
        return self.dir / f"sigma_{i:03d}.json"

    def load(self, i: int) -> Optional[SweepRecord]:
        p = self._path(i)
        return SweepRecord.from_dict(json.loads(p.read_text())) if p.exists() else None

    def save(self, record: SweepRecord) -> None:
        p = self._path(record.sigma_index)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(record.to_dict()))
        os.replace(tmp, p)
        done = sorted(int(q.stem.split("_")[1]) for q in self.dir.glob("sigma_*.json"))
        tmp = self.dir / "index.tmp"
        tmp.write_text(json.dumps({"config": self.config, "completed": done}, indent=1))
        os.replace(tmp, self.dir / "index.json")


def _worker(args):
    config, i = args
    return sweep_point(config, i)


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer")


def run_sweep(config: SweepConfig, checkpoint_dir: Union[str, Path, None] = None,
              workers: Optional[int] = None, stop_after: Optional[int] = None) -> List[SweepRecord]:
    """Run (or resume) a sweep over ``config.sigma_grid``.

    Args:
        checkpoint_dir: Where finished sigma points are stored and resumed from.
        workers: Parallel processes over sigma points (default from the
            ``NOISYRC_THREADS`` environment variable, else 1).
        stop_after: Compute at most this many new sigma points and return the
            records finished so far (simulates an interruption).
    """
    ckpt = Checkpoint(checkpoint_dir, config) if checkpoint_dir is not None else None
    records: Dict[int, SweepRecord] = {}
    todo = []
    for i in range(len(config.sigma_grid)):
        rec = ckpt.load(i) if ckpt else None
        if rec is not None:
            records[i] = rec
        else:
            todo.append(i)
    if stop_after is not None:
        todo = todo[:stop_after]
    workers = workers or n_workers()
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, rec in zip(todo, pool.map(_worker, [(config, i) for i in todo])):
                records[i] = rec
                if ckpt:
                    ckpt.save(rec)
    else:
        dataset = config.build_dataset() if todo else None
        for i in todo:
            rec = sweep_point(config, i, dataset)
            records[i] = rec
            if ckpt:
                ckpt.save(rec)
    return [records[i] for i in sorted(records)]


@dataclass
class ResonanceSummary:
    sigmas: np.ndarray
    rmse_median: np.ndarray
    dv_median: np.ndarray
    rmse_argmin: int
    dv_argmin: int

    @property
    def interior(self) -> bool:
        return 0 < self.rmse_argmin < len(self.sigmas) - 1

    @property
    def dv_interior(self) -> bool:
        return 0 < self.dv_argmin < len(self.sigmas) - 1

    @property
    def gain_low(self) -> float:
        """Best median RMSE over median RMSE at the smallest sigma."""
        return float(self.rmse_median[self.rmse_argmin] / self.rmse_median[0])

    @property
    def gain_high(self) -> float:
        return float(self.rmse_median[self.rmse_argmin] / self.rmse_median[-1])

    @property
    def best_sigma(self) -> float:
        return float(self.sigmas[self.rmse_argmin])


def resonance(records: Sequence[SweepRecord]) -> Optional[ResonanceSummary]:
    """Locate the RMSE and DV optima (medians over the ensemble) along sigma.

    Returns ``None`` for grids of fewer than three points, where an interior
    optimum cannot exist.
    """
    if len(records) < 3:
        return None
    recs = sorted(records, key=lambda r: r.sigma)
    rm = np.array([r.median("rmse") for r in recs])
    dv = np.array([r.median("dv") for r in recs])
    return ResonanceSummary(np.array([r.sigma for r in recs]), rm, dv,
                            int(np.argmin(rm)), int(np.argmin(dv)))


# -- reporting ---------------------------------------------------------------

CSV_COLUMNS = ("sigma", "rmse_mean", "rmse_std", "Rs", "ts_mean", "ts_std", "dv_mean", "dv_std",
               "rho", "gamma", "alpha", "beta", "p")


def record_row(rec: SweepRecord) -> dict:
    rm, rs = aggregate(rec.values("rmse"))
    tm, ts = aggregate(rec.values("t_s"))
    dm, dsd = aggregate(rec.values("dv"))
    row = {"sigma": rec.sigma, "rmse_mean": rm, "rmse_std": rs, "Rs": rec.Rs, "ts_mean": tm,
           "ts_std": ts, "dv_mean": dm, "dv_std": dsd}
    row.update({k: rec.hyperparams[k] for k in FIVE})
    return row


def report(records: Sequence[SweepRecord], out_dir: Union[str, Path], plots: bool = True) -> Path:
    """Write ``sweep.csv`` (sorted by sigma) and one SVG per measure; returns the CSV path.

    Error bars are population standard deviations over the ensemble.
    """
    if not records:
        raise ConfigError("report needs at least one record")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = [record_row(r) for r in sorted(records, key=lambda r: r.sigma)]
        path = out / "sweep.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in rows:
                w.writerow([f"{row[c]:.17g}" for c in CSV_COLUMNS])
        if plots:
            _plot(rows, out)
    except OSError as exc:
        raise OSError(f"could not write report to {out}: {exc}") from exc
    return path


def read_report(path: Union[str, Path]) -> List[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _plot(rows, out: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    s = np.array([r["sigma"] for r in rows])
    panels = [("rmse", "rmse_mean", "rmse_std", "RMSE"), ("stability", "Rs", None, "R_s(r_c)"),
              ("horizon", "ts_mean", "ts_std", "t_s"), ("dv", "dv_mean", "dv_std", "DV")]
    for name, col, err, label in panels:
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        y = np.array([r[col] for r in rows])
        e = None if err is None else np.array([r[err] for r in rows])
        if e is not None:
            e = np.where(np.isfinite(e), e, 0.0)
        ax.errorbar(s, np.where(np.isfinite(y), y, np.nan), yerr=e, marker="o", capsize=3)
        ax.set_xscale("log")
        ax.set_xlabel("noise amplitude sigma")
        ax.set_ylabel(label)
        fig.tight_layout()
        fig.savefig(out / f"{name}.svg", format="svg")
        plt.close(fig)
