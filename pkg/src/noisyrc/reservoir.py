"""Echo-state network with noise-injected training and closed-loop prediction.

State update::

    r(t+1) = (1 - alpha) r(t) + alpha tanh(A r(t) + W_in u(t))

Readout ``v(t) = W_out [r(t); r(t)**2]``. The state reached after consuming
``u(t)`` is regressed onto ``u(t+1)``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .dynsys import Dataset, NormStats
from .errors import (ConfigError, DegenerateMatrixError, DimensionError,
                     RankDeficientError, ReservoirDiverged)

# Above this link probability the recurrent matrix is stored dense.
DENSE_THRESHOLD = 0.25

WASHOUT = {"MG": 1000, "KS": 500}
N_NODES = {"MG": 1200, "KS": 4000}


@dataclass(frozen=True)
class Hyperparams:
    rho: float
    gamma: float
    alpha: float
    beta: float
    p: float
    sigma: float = 0.0
    n_nodes: int = 300

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.p <= 1:
            raise ConfigError(f"p must be in (0, 1], got {self.p}")
        if not self.beta >= 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise ConfigError(f"n_nodes must be a positive integer, got {self.n_nodes}")

    @property
    def mean_degree(self) -> float:
        return self.p * self.n_nodes

    def to_dict(self):
        return asdict(self)


# Optimal values reported for the three benchmark settings.
PUBLISHED_OPTIMA = {
    "MG17": Hyperparams(rho=1.62, gamma=0.55, alpha=0.64, beta=10 ** -6.0, p=0.99,
                        sigma=10 ** -3.42, n_nodes=N_NODES["MG"]),
    "MG30": Hyperparams(rho=1.27, gamma=0.23, alpha=0.57, beta=10 ** -6.4, p=0.09,
                        sigma=10 ** -1.97, n_nodes=N_NODES["MG"]),
    "KS": Hyperparams(rho=0.01, gamma=0.35, alpha=0.62, beta=10 ** -9.0, p=0.21,
                      sigma=10 ** -2.35, n_nodes=N_NODES["KS"]),
}


def seed_sequence(*keys) -> np.random.SeedSequence:
    """Deterministic child seed from integer keys (order matters)."""
    return np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])


def spectral_radius(A, iters: int = 1000, tol: float = 1e-6, seed=None) -> float:
    """Estimate ``max |lambda(A)|`` by power iteration.

    The estimate is the geometric-mean growth factor of ``||A^k x||`` over
    the second half of the iterates seen so far, which stays accurate when
    the leading eigenvalues form a complex pair or are nearly degenerate.
    """
    rng = np.random.default_rng(seed)
    n = A.shape[0]
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    logs = np.zeros(iters + 1)
    prev = None
    for k in range(1, iters + 1):
        y = A @ x
        nrm = np.linalg.norm(y)
        if not nrm > 0 or not np.isfinite(nrm):
            return 0.0
        logs[k] = logs[k - 1] + np.log(nrm)
        x = y / nrm
        if k >= 200 and k % 50 == 0:
            m = k // 2
            est = np.exp((logs[k] - logs[k - m]) / m)
            if prev is not None and abs(est - prev) <= tol * est:
                return float(est)
            prev = est
    m = iters // 2 if iters >= 2 else 1
    return float(np.exp((logs[iters] - logs[iters - m]) / m))


class Reservoir:
    """Recurrent network ``A``, input matrix ``W_in``, leakage, and state.

    ``A`` is a CSR matrix or (for dense networks) an ndarray. ``W_in`` has
    exactly one nonzero per row; it is kept both dense and as
    ``(win_channel, win_value)`` for the compiled kernels.
    """

    def __init__(self, A, win_channel, win_value, input_dim, alpha, state=None):
        self.A = A
        self.win_channel = np.asarray(win_channel, dtype=np.int64)
        self.win_value = np.asarray(win_value, dtype=float)
        self.input_dim = int(input_dim)
        self.alpha = float(alpha)
        n = A.shape[0]
        self.state = np.zeros(n) if state is None else np.asarray(state, dtype=float).copy()

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]

    @property
    def W_in(self) -> np.ndarray:
        W = np.zeros((self.n_nodes, self.input_dim))
        W[np.arange(self.n_nodes), self.win_channel] = self.win_value
        return W

    @property
    def is_dense(self) -> bool:
        return isinstance(self.A, np.ndarray)

    def reset(self):
        self.state = np.zeros(self.n_nodes)

    def _kernel_args(self):
        if self.is_dense:
            dense = np.ascontiguousarray(self.A, dtype=float)
            empty_i = np.zeros(1, dtype=np.int32)
            return (True, dense, empty_i, empty_i, np.zeros(1))
        A = self.A.tocsr()
        return (False, np.zeros((1, 1)), A.indptr.astype(np.int32),
                A.indices.astype(np.int32), A.data.astype(float))

    def copy(self) -> "Reservoir":
        return Reservoir(self.A, self.win_channel, self.win_value, self.input_dim,
                         self.alpha, self.state)


def build_reservoir(hp: Hyperparams, input_dim: int, seed=None, A=None) -> Reservoir:
    """Random Erdos-Renyi reservoir rescaled to spectral radius ``hp.rho``.

    ``A`` injects a fixed recurrent matrix before rescaling (testing hook).
    """
    n = hp.n_nodes
    if input_dim < 1 or n < input_dim:
        raise ConfigError(f"need 1 <= input_dim <= n_nodes, got {input_dim}, {n}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng_a, rng_in, rng_pi = [np.random.default_rng(s) for s in ss.spawn(3)]

    if A is None:
        mask = rng_a.random((n, n)) < hp.p
        vals = rng_a.uniform(-1.0, 1.0, (n, n))
        M = np.where(mask, vals, 0.0)
        A = M if hp.p >= DENSE_THRESHOLD else sp.csr_matrix(M)
    elif not sp.issparse(A):
        A = np.asarray(A, dtype=float)
    if A.shape != (n, n):
        raise DimensionError(f"A must be {n}x{n}")

    radius = spectral_radius(A, seed=rng_pi)
    if not radius > 1e-12:
        raise DegenerateMatrixError(f"recurrent matrix has spectral radius {radius:g} (p={hp.p}, n={n})")
    A = A * (hp.rho / radius)

    channels = np.arange(n) % input_dim
    rng_in.shuffle(channels)
    values = rng_in.uniform(-hp.gamma, hp.gamma, n)
    return Reservoir(A, channels, values, input_dim, hp.alpha)


def add_noise(series: np.ndarray, sigma: float, seed=None) -> np.ndarray:
    """Return ``series`` plus i.i.d. Gaussian noise of standard deviation ``sigma``."""
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    series = np.asarray(series, dtype=float)
    if sigma == 0:
        return series.copy()
    rng = np.random.default_rng(seed)
    return series + sigma * rng.standard_normal(series.shape)


@numba.njit(cache=True)
def _step(is_dense, dense, indptr, indices, data, win_ch, win_val, alpha, r, u, pre):
    """One leaky-tanh update of ``r`` in place; ``pre`` is scratch."""
    n = r.shape[0]
    if is_dense:
        pre[:] = dense @ r
    else:
        for i in range(n):
            acc = 0.0
            for j in range(indptr[i], indptr[i + 1]):
                acc += data[j] * r[indices[j]]
            pre[i] = acc
    finite = True
    for i in range(n):
        x = (1.0 - alpha) * r[i] + alpha * math.tanh(pre[i] + win_val[i] * u[win_ch[i]])
        if not math.isfinite(x):
            finite = False
        r[i] = x
    return finite


@numba.njit(cache=True)
def _drive_kernel(is_dense, dense, indptr, indices, data, win_ch, win_val, alpha, r, U):
    # states are written row-per-step (T x n) for contiguous stores
    n = r.shape[0]
    T = U.shape[1]
    states = np.empty((T, n))
    pre = np.empty(n)
    u = np.empty(U.shape[0])
    for t in range(T):
        u[:] = U[:, t]
        ok = _step(is_dense, dense, indptr, indices, data, win_ch, win_val, alpha, r, u, pre)
        states[t] = r
        if not ok:
            return states[:t + 1], False
    return states, True


@numba.njit(cache=True)
def _closed_loop_kernel(is_dense, dense, indptr, indices, data, win_ch, win_val, alpha,
                        r, W1, W2, horizon):
    n = r.shape[0]
    D = W1.shape[0]
    out = np.empty((D, horizon))
    pre = np.empty(n)
    v = np.empty(D)
    for t in range(horizon):
        finite = True
        for d in range(D):
            acc = 0.0
            for i in range(n):
                acc += W1[d, i] * r[i] + W2[d, i] * r[i] * r[i]
            v[d] = acc
            out[d, t] = acc
            if not math.isfinite(acc):
                finite = False
        if not finite:
            return out[:, :t + 1], False
        if t == horizon - 1:
            break
        _step(is_dense, dense, indptr, indices, data, win_ch, win_val, alpha, r, v, pre)
    return out, True


def drive(reservoir: Reservoir, inputs: np.ndarray) -> np.ndarray:
    """Teacher-force the reservoir; returns the ``n_nodes x T`` post-update states.

    The reservoir's state is left at the final value.
    """
    U = np.ascontiguousarray(np.atleast_2d(inputs), dtype=float)
    if U.shape[0] != reservoir.input_dim:
        raise DimensionError(f"inputs have {U.shape[0]} channels, reservoir expects {reservoir.input_dim}")
    if not np.all(np.isfinite(U)):
        raise ConfigError("inputs must be finite")
    r = reservoir.state.copy()
    states, ok = _drive_kernel(*reservoir._kernel_args(), reservoir.win_channel,
                               reservoir.win_value, reservoir.alpha, r, U)
    reservoir.state = r
    if not ok:
        raise ReservoirDiverged(f"reservoir state non-finite at step {states.shape[0] - 1}")
    return states.T


def augment(states: np.ndarray) -> np.ndarray:
    return np.vstack([states, states * states])


def train_readout(states: np.ndarray, targets: np.ndarray, beta: float) -> np.ndarray:
    """Ridge regression ``W_out = Y X^T (X X^T + beta I)^-1`` with ``X = [r; r^2]``.

    Solved through a symmetric positive-definite factorization of the
    regularized Gram matrix. With ``beta == 0`` an ill-conditioned system
    raises :class:`RankDeficientError`.
    """
    states = np.atleast_2d(states)
    Y = np.atleast_2d(targets)
    if states.shape[1] != Y.shape[1]:
        raise DimensionError(f"states have {states.shape[1]} steps, targets {Y.shape[1]}")
    X = augment(states)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ConfigError("states and targets must be finite")
    G = X @ X.T
    G[np.diag_indices_from(G)] += beta
    rhs = X @ Y.T
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            sol = scipy.linalg.solve(G, rhs, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            if beta == 0:
                raise RankDeficientError(f"unregularized readout system is singular: {exc}") from exc
            sol = None
    if sol is None:
        sol = scipy.linalg.lstsq(G, rhs)[0]
    return np.ascontiguousarray(sol.T)


@dataclass
class TrainedModel:
    reservoir: Reservoir
    W_out: np.ndarray
    hyperparams: Hyperparams
    seed: int
    fit_rmse: float
    norm: Optional[NormStats] = None
    washout: int = 0
    noise_mode: str = "series"

    def readout(self, states: np.ndarray) -> np.ndarray:
        """Apply the readout to an (n,) state or an (n, T) block of states."""
        if states.ndim == 1:
            return self.W_out @ augment(states[:, None])[:, 0]
        return self.W_out @ augment(states)

    def save(self, path: Union[str, Path]) -> None:
        """Write to ``.npz``: JSON ``header``, dense ``W_out``, ``W_in``, and ``A`` as COO triplets."""
        A = self.reservoir.A
        coo = sp.coo_matrix(A)
        header = {
            "format": "noisyrc-model/1",
            "hyperparams": self.hyperparams.to_dict(),
            "seed": int(self.seed),
            "fit_rmse": float(self.fit_rmse),
            "n_nodes": self.reservoir.n_nodes,
            "input_dim": self.reservoir.input_dim,
            "dense_A": self.reservoir.is_dense,
            "washout": self.washout,
            "noise_mode": self.noise_mode,
            "norm": None if self.norm is None else self.norm.to_dict(),
        }
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header)), W_out=self.W_out,
                     W_in=self.reservoir.W_in, A_row=coo.row.astype(np.int64),
                     A_col=coo.col.astype(np.int64), A_val=coo.data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainedModel":
        with np.load(path, allow_pickle=False) as z:
            h = json.loads(str(z["header"]))
            n = h["n_nodes"]
            A = sp.csr_matrix((z["A_val"], (z["A_row"], z["A_col"])), shape=(n, n))
            if h["dense_A"]:
                A = A.toarray()
            W_in = np.array(z["W_in"])
            W_out = np.array(z["W_out"])
        ch = np.argmax(np.abs(W_in), axis=1)
        res = Reservoir(A, ch, W_in[np.arange(n), ch], h["input_dim"], h["hyperparams"]["alpha"])
        return cls(reservoir=res, W_out=W_out, hyperparams=Hyperparams(**h["hyperparams"]),
                   seed=h["seed"], fit_rmse=h["fit_rmse"],
                   norm=None if h["norm"] is None else NormStats.from_dict(h["norm"]),
                   washout=h["washout"], noise_mode=h["noise_mode"])


def train(dataset: Dataset, hp: Hyperparams, seed: int = 0, washout: Optional[int] = None,
          noise_mode: str = "series") -> TrainedModel:
    """Fit a readout on the (noise-injected) training segment of ``dataset``.

    ``noise_mode="series"`` perturbs the training series once so inputs and
    one-step-ahead targets share the realization; ``"input-only"`` keeps
    clean targets.
    """
    if noise_mode not in ("series", "input-only"):
        raise ConfigError(f"unknown noise_mode {noise_mode!r}")
    if washout is None:
        washout = WASHOUT.get(dataset.system, 1000)
    u = dataset.train
    if u.shape[1] - 1 <= washout:
        raise ConfigError(f"training length {u.shape[1]} too short for washout {washout}")
    ss_res, ss_noise = seed_sequence(seed).spawn(2)
    noisy = add_noise(u, hp.sigma, ss_noise)
    inputs = noisy[:, :-1]
    targets = noisy[:, 1:] if noise_mode == "series" else u[:, 1:]

    reservoir = build_reservoir(hp, dataset.n_channels, ss_res)
    states = drive(reservoir, inputs)[:, washout:]
    Y = targets[:, washout:]
    W_out = train_readout(states, Y, hp.beta)
    resid = W_out @ augment(states) - Y
    fit_rmse = float(np.sqrt(np.mean(resid ** 2)))
    reservoir.reset()
    return TrainedModel(reservoir=reservoir, W_out=W_out, hyperparams=hp, seed=seed,
                        fit_rmse=fit_rmse, norm=dataset.norm, washout=washout,
                        noise_mode=noise_mode)


def predict(model: TrainedModel, warmup: np.ndarray, horizon: int) -> np.ndarray:
    """Closed-loop forecast of ``horizon`` steps following ``warmup``.

    The reservoir is reset, driven with the clean warmup, then run
    autonomously with its output fed back as input. Output ``[:, 0]`` is
    the forecast for the step right after the warmup.

    Raises:
        ReservoirDiverged: output became non-finite; ``partial`` holds the
            forecast up to and including the first bad step.
    """
    D = model.reservoir.input_dim
    if horizon < 0:
        raise ConfigError("horizon must be >= 0")
    if horizon == 0:
        return np.zeros((D, 0))
    res = model.reservoir.copy()
    res.reset()
    warmup = np.atleast_2d(warmup)
    if warmup.shape[1] > 0:
        drive(res, warmup)
    n = res.n_nodes
    W = np.ascontiguousarray(model.W_out, dtype=float)
    out, ok = _closed_loop_kernel(*res._kernel_args(), res.win_channel, res.win_value,
                                     res.alpha, res.state.copy(),
                                     np.ascontiguousarray(W[:, :n]),
                                     np.ascontiguousarray(W[:, n:]), int(horizon))
    if not ok:
        raise ReservoirDiverged(f"prediction non-finite at step {out.shape[1] - 1}", partial=out)
    return out
