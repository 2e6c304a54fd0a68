"""RBF-surrogate global optimization of reservoir hyperparameters.

The optimizer samples a Latin-hypercube design, interpolates it with a cubic
RBF plus linear tail, and proposes new points by perturbing the incumbent
and scoring candidates with a merit that mixes surrogate value and distance
to already-evaluated points. Log-scaled dimensions are searched in exponent
space. Any dimension can be frozen, which is how the noise amplitude is
held fixed during sweeps.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from .dynsys import Dataset
from .errors import ConfigError, DegenerateMatrixError, RankDeficientError, ReservoirDiverged
from .metrics import rmse
from .reservoir import Hyperparams, predict, seed_sequence, train

log = logging.getLogger(__name__)

MERIT_WEIGHTS = (0.3, 0.5, 0.8, 0.95)
# Perturbation std per unit-cube coordinate is BASE_RADIUS * trust.
BASE_RADIUS = 0.2
TRUST_INIT = 1.0
TRUST_MIN = 2.0 ** -6
TRUST_MAX = 1.0
TOL_SUCCESS = 3
TOL_FAIL = 3
DUPLICATE_TOL = 1e-6


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    scale: str = "linear"
    frozen: Optional[float] = None

    def __post_init__(self):
        if self.scale not in ("linear", "log10"):
            raise ConfigError(f"unknown scale {self.scale!r}")
        if not self.lower < self.upper:
            raise ConfigError(f"{self.name}: lower must be < upper")
        if self.scale == "log10" and self.lower <= 0:
            raise ConfigError(f"{self.name}: log10 dimension needs positive bounds")
        if self.frozen is not None and not self.lower <= self.frozen <= self.upper:
            raise ConfigError(f"{self.name}: frozen value {self.frozen} outside bounds")

    def _bounds(self):
        if self.scale == "log10":
            return np.log10(self.lower), np.log10(self.upper)
        return self.lower, self.upper

    def from_unit(self, u):
        lo, hi = self._bounds()
        x = lo + np.asarray(u) * (hi - lo)
        return 10.0 ** x if self.scale == "log10" else x

    def to_unit(self, x):
        lo, hi = self._bounds()
        x = np.log10(x) if self.scale == "log10" else np.asarray(x)
        return (x - lo) / (hi - lo)


class SearchSpace:
    """Box of named dimensions; optimization runs over the non-frozen ones."""

    def __init__(self, dims: Sequence[Dimension]):
        self.dims = list(dims)
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate dimension names")
        self.active = [i for i, d in enumerate(self.dims) if d.frozen is None]
        if not self.active:
            raise ConfigError("all dimensions are frozen")

    @property
    def names(self) -> List[str]:
        return [d.name for d in self.dims]

    @property
    def n_active(self) -> int:
        return len(self.active)

    def freeze(self, **values) -> "SearchSpace":
        dims = []
        for d in self.dims:
            if d.name in values:
                d = Dimension(d.name, d.lower, d.upper, d.scale, values[d.name])
            dims.append(d)
        return SearchSpace(dims)

    def to_point(self, u: np.ndarray) -> np.ndarray:
        """Active unit-cube coordinates -> full natural-unit point."""
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        x = np.empty(len(self.dims))
        k = 0
        for i, d in enumerate(self.dims):
            if d.frozen is None:
                x[i] = d.from_unit(u[k])
                k += 1
            else:
                x[i] = d.frozen
        return x

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.dims[i].to_unit(x[i]) for i in self.active])


def reservoir_space(**frozen) -> SearchSpace:
    """Default bounds for ``(rho, gamma, alpha, beta, p, sigma)``."""
    space = SearchSpace([
        Dimension("rho", 0.01, 2.0),
        Dimension("gamma", 0.01, 3.0),
        Dimension("alpha", 0.05, 1.0),
        Dimension("beta", 1e-12, 1e-2, "log10"),
        Dimension("p", 0.01, 1.0),
        Dimension("sigma", 1e-8, 10 ** -0.5, "log10"),
    ])
    return space.freeze(**frozen) if frozen else space


# -- RBF interpolation -------------------------------------------------------

def _cubic(r):
    return r ** 3


def _tps(r):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r ** 2 * np.log(r)
    return np.where(r > 0, out, 0.0)


KERNELS = {"cubic": _cubic, "tps": _tps}


@dataclass
class RBFInterpolant:
    centers: np.ndarray
    weights: np.ndarray
    tail: np.ndarray  # constant term first, then linear coefficients
    kernel: str = "cubic"
    fallback: Optional[str] = None

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        Phi = KERNELS[self.kernel](cdist(X, self.centers))
        return Phi @ self.weights + self.tail[0] + X @ self.tail[1:]


def _solve_saddle(Phi, P, f, ridge=0.0):
    n, m = P.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Phi + ridge * np.eye(n)
    M[:n, n:] = P
    M[n:, :n] = P.T
    rhs = np.concatenate([f, np.zeros(m)])
    with warnings.catch_warnings():
        # an exactly singular pivot means this attempt failed; let the caller fall back
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    sol = scipy.linalg.lu_solve((lu, piv), rhs)
    return sol[:n], sol[n:]


def fit_rbf(points, values, tol: float = 1e-8) -> RBFInterpolant:
    """Interpolate ``values`` at ``points`` with a cubic RBF plus linear tail.

    If the bordered system is too ill-conditioned to reproduce the data to
    ``tol`` (relative to the value scale), a thin-plate-spline kernel is
    tried, then a ``1e-10`` ridge on the RBF block.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    f = np.asarray(values, dtype=float).ravel()
    n, d = X.shape
    if n != f.size:
        raise ConfigError("points and values differ in length")
    if n < d + 1:
        raise ConfigError(f"need at least {d + 1} points in {d} dimensions, got {n}")
    R = cdist(X, X)
    off = R[~np.eye(n, dtype=bool)]
    if off.size and off.min() == 0:
        raise ConfigError("duplicate interpolation points")
    P = np.hstack([np.ones((n, 1)), X])
    scale = max(1.0, float(np.max(np.abs(f))))
    attempts = [("cubic", 0.0, None), ("tps", 0.0, "tps"), ("cubic", 1e-10, "ridge")]
    best = None
    for kernel, ridge, tag in attempts:
        Phi = KERNELS[kernel](R)
        with np.errstate(all="ignore"):
            try:
                w, c = _solve_saddle(Phi, P, f, ridge)
            except (np.linalg.LinAlgError, ValueError, scipy.linalg.LinAlgWarning):
                continue
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(c))):
            continue
        model = RBFInterpolant(X.copy(), w, c, kernel, tag)
        resid = float(np.max(np.abs(Phi @ w + P @ c - f)))
        if tag == "ridge" or resid <= tol * scale:
            return model
        if best is None or resid < best[0]:
            best = (resid, model)
    if best is None:
        raise np.linalg.LinAlgError("RBF system could not be solved")
    return best[1]


# -- candidate search ---------------------------------------------------------

@dataclass
class SurrogateState:
    """Evaluated points (unit-cube, active dims) of the current restart."""

    X: np.ndarray
    f: np.ndarray
    rng: np.random.Generator
    rbf: Optional[RBFInterpolant] = None
    trust: float = TRUST_INIT
    n_success: int = 0
    n_fail: int = 0
    n_proposals: int = 0

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.f))

    @property
    def incumbent(self) -> np.ndarray:
        return self.X[self.best_index]

    @property
    def best_value(self) -> float:
        return float(self.f[self.best_index])

    def refit(self):
        # values above the median are flattened so outliers don't dominate the fit
        g = np.minimum(self.f, np.median(self.f))
        self.rbf = fit_rbf(self.X, g)


def _unit_scale(v):
    lo, hi = v.min(), v.max()
    return np.ones_like(v) if hi - lo <= 0 else (v - lo) / (hi - lo)


def propose(state: SurrogateState, n_candidates: Optional[int] = None,
            weight: Optional[float] = None) -> np.ndarray:
    """Pick the next point to evaluate (unit-cube coordinates).

    Candidates are Gaussian perturbations of the incumbent with standard
    deviation ``BASE_RADIUS * state.trust`` per coordinate, clipped to the
    cube. The
    weight cycles through ``MERIT_WEIGHTS`` unless given.
    """
    d = state.X.shape[1]
    n_candidates = n_candidates or 500 * d
    if weight is None:
        weight = MERIT_WEIGHTS[state.n_proposals % len(MERIT_WEIGHTS)]
    state.n_proposals += 1
    if state.rbf is None:
        state.refit()

    cand = state.incumbent + BASE_RADIUS * state.trust * state.rng.standard_normal((n_candidates, d))
    np.clip(cand, 0.0, 1.0, out=cand)
    dist = cdist(cand, state.X).min(axis=1)
    merit = weight * _unit_scale(state.rbf(cand)) + (1 - weight) * (1 - _unit_scale(dist))
    merit[dist < DUPLICATE_TOL] = np.inf
    if np.all(np.isinf(merit)):
        k = int(np.argmax(dist))
        if dist[k] < DUPLICATE_TOL:
            return state.rng.random(d)
        return cand[k]
    return cand[int(np.argmin(merit))]


# -- optimization loop --------------------------------------------------------

@dataclass
class TraceEntry:
    index: int
    point: np.ndarray
    value: float
    incumbent: float
    raw: float


@dataclass
class OptimizeResult:
    best_point: np.ndarray
    best_value: float
    trace: List[TraceEntry] = field(default_factory=list)
    names: List[str] = field(default_factory=list)
    n_restarts: int = 0

    def best_dict(self) -> dict:
        return dict(zip(self.names, map(float, self.best_point)))


def latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return qmc.LatinHypercube(d=d, seed=rng).random(n)


def optimize(objective: Callable[[np.ndarray], float], space: SearchSpace, budget: int,
             seed=0, n_init: Optional[int] = None, n_candidates: Optional[int] = None,
             callback: Optional[Callable[[TraceEntry], None]] = None) -> OptimizeResult:
    """Minimize ``objective`` over ``space`` with at most ``budget`` evaluations.

    ``objective`` receives the full natural-unit point (frozen dimensions
    included, in ``space.names`` order). Non-finite results are recorded as
    ten times the worst finite value seen so far.
    """
    d = space.n_active
    n_init = n_init or 2 * (d + 1)
    if budget < n_init:
        raise ConfigError(f"budget {budget} smaller than initial design {n_init}")
    rng = np.random.default_rng(seed)

    result = OptimizeResult(best_point=None, best_value=np.inf, names=space.names)
    worst = [None]

    def evaluate(u):
        x = space.to_point(u)
        raw = float(objective(x))
        if np.isfinite(raw):
            worst[0] = raw if worst[0] is None else max(worst[0], raw)
            val = raw
        else:
            val = 10.0 * abs(worst[0]) if worst[0] not in (None, 0.0) else 1e10
        if val < result.best_value:
            result.best_value, result.best_point = val, x
        entry = TraceEntry(len(result.trace), x, val, result.best_value, raw)
        result.trace.append(entry)
        if callback:
            callback(entry)
        return val

    def fresh_design():
        n = min(n_init, budget - len(result.trace))
        U = latin_hypercube(n_init, d, rng)[:n]
        return SurrogateState(U, np.array([evaluate(u) for u in U]), rng)

    state = fresh_design()
    while len(result.trace) < budget:
        if len(state.f) < d + 1:
            state = fresh_design()
            continue
        state.refit()
        u = propose(state, n_candidates)
        before = state.best_value
        y = evaluate(u)
        state.X = np.vstack([state.X, u])
        state.f = np.append(state.f, y)
        if y < before - 1e-3 * abs(before):
            state.n_success += 1
            state.n_fail = 0
        else:
            state.n_fail += 1
            state.n_success = 0
        if state.n_success >= TOL_SUCCESS:
            state.trust = min(2 * state.trust, TRUST_MAX)
            state.n_success = 0
        if state.n_fail >= TOL_FAIL:
            state.trust = max(state.trust / 2, TRUST_MIN)
            state.n_fail = 0
            if state.trust <= TRUST_MIN and len(result.trace) < budget:
                log.debug("restart after %d evaluations", len(result.trace))
                result.n_restarts += 1
                state = fresh_design()
    return result


def write_trace(result: OptimizeResult, path: Union[str, Path]) -> None:
    """CSV columns: eval_index, one per dimension, objective, incumbent."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eval_index", *result.names, "objective", "incumbent"])
        for e in result.trace:
            w.writerow([e.index, *(f"{v:.17g}" for v in e.point), f"{e.value:.17g}",
                        f"{e.incumbent:.17g}"])


# -- reservoir objective ------------------------------------------------------

def default_t_opt(dataset: Dataset) -> int:
    """Optimization test length: 900/300 steps for MG tau=17/30, six Lyapunov times for KS."""
    if dataset.system == "MG":
        tau = dataset.params.get("tau", 30)
        return int(round((900 if round(tau) == 17 else 300) / dataset.dt))
    if dataset.system == "KS" and dataset.lyapunov_time:
        return int(round(6 * dataset.lyapunov_time / dataset.dt))
    return min(dataset.split.test_len, 300)


def hyperparams_from(point, names, n_nodes: int) -> Hyperparams:
    return Hyperparams(**{k: float(v) for k, v in zip(names, point)}, n_nodes=n_nodes)


def reservoir_objective(dataset: Dataset, hp: Hyperparams, n_rep: int = 3,
                        t_opt: Optional[int] = None, seed: int = 0, warmup: int = 100,
                        washout: Optional[int] = None, noise_mode: str = "series") -> float:
    """Mean closed-loop RMSE over ``t_opt`` steps after training, across ``n_rep`` seeds.

    A repetition that diverges or cannot be built (e.g. a recurrent matrix
    with zero spectral radius) scores ``inf``; returns ``inf`` if all do.
    """
    t_opt = t_opt or default_t_opt(dataset)
    truth = dataset.test[:, :t_opt]
    if truth.shape[1] < t_opt:
        raise ConfigError(f"test window has {truth.shape[1]} steps, need {t_opt}")
    errs = []
    for rep in range(n_rep):
        rep_seed = int(seed_sequence(seed, rep).generate_state(1)[0])
        try:
            model = train(dataset, hp, rep_seed, washout=washout, noise_mode=noise_mode)
            errs.append(rmse(predict(model, dataset.warmup(warmup), t_opt), truth))
        except (ReservoirDiverged, DegenerateMatrixError, RankDeficientError, np.linalg.LinAlgError):
            errs.append(np.inf)
    errs = np.asarray(errs)
    if not np.any(np.isfinite(errs)):
        return float("inf")
    return float(np.mean(errs))


def make_objective(dataset: Dataset, space: SearchSpace, n_nodes: int, **kwargs):
    """Wrap :func:`reservoir_objective` as a point -> value function for :func:`optimize`."""
    names = space.names

    def objective(x):
        try:
            hp = hyperparams_from(x, names, n_nodes)
        except ConfigError:
            return float("inf")
        return reservoir_objective(dataset, hp, **kwargs)

    return objective
