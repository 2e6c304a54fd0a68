"""Ground-truth trajectories for the Mackey-Glass and Kuramoto-Sivashinsky systems.

The Mackey-Glass delay equation is integrated with fixed-step RK4 and a
circular history buffer; the Kuramoto-Sivashinsky equation with a
pseudo-spectral ETDRK4 scheme on a periodic domain. ``build_dataset`` wraps
both into z-scored :class:`Dataset` objects with train/test split geometry.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Union

import numba
import numpy as np

from .errors import ConfigError, DegenerateChannelError, DimensionError, IntegrationDiverged

# Largest Lyapunov exponents of the target systems (per time unit).
LYAPUNOV_MG = {17: 0.006, 30: 0.011}
LYAPUNOV_KS = 0.089


@dataclass(frozen=True)
class MGParams:
    a: float = 0.2
    b: float = 0.1
    c: float = 10.0
    tau: float = 17.0
    h: float = 0.01
    sample_every: int = 100

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError("h must be positive")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.sample_every < 1:
            raise ConfigError("sample_every must be >= 1")
        ratio = self.tau / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ConfigError(f"tau/h must be a positive integer, got {ratio}")

    @property
    def delay_steps(self) -> int:
        return int(round(self.tau / self.h))

    @property
    def dt(self) -> float:
        return self.sample_every * self.h

    @property
    def fixed_point(self) -> float:
        """Nonzero equilibrium ``(a/b - 1)**(1/c)``."""
        return (self.a / self.b - 1.0) ** (1.0 / self.c)


@dataclass(frozen=True)
class KSParams:
    mu: float = 1.0
    phi: float = 1.0
    L: float = 60.0
    Q: int = 64
    dt: float = 0.25
    sample_every: int = 1

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigError("L must be positive")
        if self.Q < 16 or self.Q & (self.Q - 1):
            raise ConfigError("Q must be a power of two >= 16")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.sample_every < 1:
            raise ConfigError("sample_every must be >= 1")

    @property
    def x(self) -> np.ndarray:
        return self.L * np.arange(self.Q) / self.Q


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(~(np.asarray(self.std) > 0)):
            raise DegenerateChannelError("normalization std must be positive")

    def to_dict(self):
        return {"mean": np.asarray(self.mean).tolist(), "std": np.asarray(self.std).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=float), std=np.asarray(d["std"], dtype=float))


@dataclass(frozen=True)
class Split:
    train_start: int
    train_len: int
    test_start: int
    test_len: int


@dataclass
class Dataset:
    """Normalized multichannel series (channels x steps) with split geometry."""

    data: np.ndarray
    dt: float
    norm: NormStats
    split: Split
    system: str = ""
    params: dict = field(default_factory=dict)
    lyapunov_time: Optional[float] = None

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if not np.all(np.isfinite(self.data)):
            raise ConfigError("dataset contains non-finite entries")
        s = self.split
        n = self.data.shape[1]
        if min(s.train_start, s.train_len, s.test_start, s.test_len) < 0:
            raise ConfigError("split indices must be non-negative")
        if s.train_start + s.train_len > s.test_start:
            raise ConfigError("train segment overlaps test segment")
        if s.test_start + s.test_len > n:
            raise ConfigError(f"split exceeds data length {n}")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def train(self) -> np.ndarray:
        s = self.split
        return self.data[:, s.train_start:s.train_start + s.train_len]

    @property
    def test(self) -> np.ndarray:
        s = self.split
        return self.data[:, s.test_start:s.test_start + s.test_len]

    def warmup(self, length: int) -> np.ndarray:
        """Ground truth immediately preceding the test window."""
        start = self.split.test_start
        if length > start:
            raise ConfigError(f"warmup {length} longer than data before test start {start}")
        return self.data[:, start - length:start]

    def raw(self) -> np.ndarray:
        return denormalize(self.data, self.norm)

    def save(self, path: Union[str, Path]) -> None:
        """Write to ``.npz``: a JSON ``header`` string plus the ``data`` matrix."""
        header = {
            "format": "noisyrc-dataset/1",
            "system": self.system,
            "params": self.params,
            "dt": self.dt,
            "norm": self.norm.to_dict(),
            "split": asdict(self.split),
            "lyapunov_time": self.lyapunov_time,
            "shape": list(self.data.shape),
        }
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header)), data=self.data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Dataset":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            data = np.array(z["data"])
        return cls(
            data=data,
            dt=header["dt"],
            norm=NormStats.from_dict(header["norm"]),
            split=Split(**header["split"]),
            system=header["system"],
            params=header["params"],
            lyapunov_time=header["lyapunov_time"],
        )


@numba.njit(cache=True)
def _mg_rk4(a, b, c, h, delay, sample_every, hist, n_total):
    size = delay + 1
    buf = hist.copy()  # buf[(j + delay) % size] holds s at step j
    out = np.empty(n_total)
    x = hist[delay]
    n = 0
    for k in range(n_total):
        out[k] = x
        if k == n_total - 1:
            break
        for _ in range(sample_every):
            d0 = buf[n % size]
            d1 = buf[(n + 1) % size]
            dm = 0.5 * (d0 + d1)
            k1 = a * d0 / (1.0 + d0 ** c) - b * x
            x2 = x + 0.5 * h * k1
            k2 = a * dm / (1.0 + dm ** c) - b * x2
            x3 = x + 0.5 * h * k2
            k3 = a * dm / (1.0 + dm ** c) - b * x3
            x4 = x + h * k3
            k4 = a * d1 / (1.0 + d1 ** c) - b * x4
            x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(x):
                return out[:k + 1], False
            n += 1
            buf[(n + delay) % size] = x
    return out, True


def mg_history(params: MGParams, seed=None) -> np.ndarray:
    """Default initial history: 1.2 plus a uniform [-0.1, 0.1] perturbation per grid point."""
    rng = np.random.default_rng(seed)
    return 1.2 + rng.uniform(-0.1, 0.1, params.delay_steps + 1)


def mg_integrate(
    params: MGParams,
    history: Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]],
    n_samples: int,
    transient_samples: int = 0,
) -> np.ndarray:
    """Integrate the Mackey-Glass equation and return a sampled scalar series.

    Args:
        params: System and discretization parameters.
        history: Initial history on ``[-tau, 0]``. A constant, a callable of
            time, or an array of ``delay_steps + 1`` values on the ``h`` grid
            (last entry is the state at ``t = 0``).
        n_samples: Number of samples to return.
        transient_samples: Samples discarded before the returned ones.

    Returns:
        Array of length ``n_samples``; sample ``k`` is the state at
        ``(transient_samples + k) * params.dt``.
    """
    if n_samples < 1 or transient_samples < 0:
        raise ConfigError("n_samples must be >= 1 and transient_samples >= 0")
    delay = params.delay_steps
    if callable(history):
        t = -params.tau + params.h * np.arange(delay + 1)
        hist = np.asarray(history(t), dtype=float) * np.ones(delay + 1)
    else:
        hist = np.asarray(history, dtype=float)
        if hist.ndim == 0:
            hist = np.full(delay + 1, float(hist))
    if hist.shape != (delay + 1,):
        raise DimensionError(f"history must have {delay + 1} entries, got {hist.shape}")
    total = transient_samples + n_samples
    out, ok = _mg_rk4(params.a, params.b, params.c, params.h, delay,
                      params.sample_every, hist, total)
    if not ok:
        raise IntegrationDiverged(f"Mackey-Glass state non-finite at sample {out.size - 1}")
    return out[transient_samples:]


class ETDRK4:
    """Pseudo-spectral ETDRK4 stepper for the periodic KS equation.

    Works on the real-FFT spectrum ``v = rfft(u)``. The nonlinear term is
    evaluated in physical space with 2/3-rule dealiasing.
    """

    n_contour = 16

    def __init__(self, params: KSParams, dt: Optional[float] = None):
        self.params = params
        h = params.dt if dt is None else dt
        self.h = h
        Q, L = params.Q, params.L
        m = np.arange(Q // 2 + 1)
        k = 2 * np.pi * m / L
        self.k = k
        self.lin = params.phi * k ** 2 - params.mu * k ** 4
        self.dealias = m <= Q // 3
        kd = k.copy()
        kd[-1] = 0.0  # odd derivative kills the Nyquist mode
        self.g = -0.5j * params.phi * kd * self.dealias

        Lh = h * self.lin
        self.E = np.exp(Lh)
        self.E2 = np.exp(Lh / 2)
        roots = np.exp(2j * np.pi * (np.arange(1, self.n_contour + 1) - 0.5) / self.n_contour)
        LR = Lh[:, None] + roots[None, :]
        eLR = np.exp(LR)
        self.Qc = h * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
        self.f1 = h * np.real(np.mean((-4 - LR + eLR * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=1))
        self.f2 = h * np.real(np.mean((2 + LR + eLR * (-2 + LR)) / LR ** 3, axis=1))
        self.f3 = h * np.real(np.mean((-4 - 3 * LR - LR ** 2 + eLR * (4 - LR)) / LR ** 3, axis=1))

    def nonlinear(self, v):
        u = np.fft.irfft(v * self.dealias, n=self.params.Q)
        return self.g * np.fft.rfft(u * u)

    def step(self, v):
        Nv = self.nonlinear(v)
        a = self.E2 * v + self.Qc * Nv
        Na = self.nonlinear(a)
        b = self.E2 * v + self.Qc * Na
        Nb = self.nonlinear(b)
        c = self.E2 * a + self.Qc * (2 * Nb - Nv)
        Nc = self.nonlinear(c)
        return self.E * v + Nv * self.f1 + 2 * (Na + Nb) * self.f2 + Nc * self.f3


def ks_integrate(
    params: KSParams,
    u0: np.ndarray,
    n_samples: int,
    transient_samples: int = 0,
    dt: Optional[float] = None,
) -> np.ndarray:
    """Integrate the KS equation from ``u0``; returns a ``Q x n_samples`` field.

    Sample ``k`` is taken after ``(transient_samples + k) * sample_every``
    steps, so sample 0 with no transient is ``u0`` itself. ``dt`` overrides
    ``params.dt`` (used for step-halving studies).
    """
    u0 = np.asarray(u0)
    if u0.shape != (params.Q,) or np.iscomplexobj(u0):
        raise DimensionError(f"u0 must be a real vector of length {params.Q}")
    if n_samples < 1 or transient_samples < 0:
        raise ConfigError("n_samples must be >= 1 and transient_samples >= 0")
    stepper = ETDRK4(params, dt)
    v = np.fft.rfft(u0.astype(float))
    out = np.empty((params.Q, n_samples))
    total = transient_samples + n_samples
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(total):
            if k >= transient_samples:
                out[:, k - transient_samples] = np.fft.irfft(v, n=params.Q)
            if k == total - 1:
                break
            for _ in range(params.sample_every):
                v = stepper.step(v)
            if not np.all(np.isfinite(v)):
                raise IntegrationDiverged(f"KS spectrum non-finite at sample {k + 1}")
    return out


def normalize(raw: np.ndarray, shared: bool = False):
    """Z-score each channel (population std). ``shared`` uses one mean/std for all channels.

    Returns:
        ``(normalized, NormStats)``; stats have one entry per channel.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if shared:
        mean = np.full(raw.shape[0], raw.mean())
        std = np.full(raw.shape[0], raw.std())
    else:
        mean = raw.mean(axis=1)
        std = raw.std(axis=1)
    if np.any(~(std > 0)):
        bad = np.flatnonzero(~(std > 0)).tolist()
        raise DegenerateChannelError(f"zero-variance channel(s) {bad}")
    z = (raw - mean[:, None]) / std[:, None]
    return z, NormStats(mean=mean, std=std)


def denormalize(z: np.ndarray, norm: NormStats) -> np.ndarray:
    z = np.atleast_2d(z)
    return z * norm.std[:, None] + norm.mean[:, None]


@dataclass(frozen=True)
class MGConfig:
    params: MGParams = field(default_factory=lambda: MGParams(tau=30.0))
    transient: int = 10_000
    train_len: int = 150_000
    test_len: int = 10_000
    seed: int = 0


@dataclass(frozen=True)
class KSConfig:
    """KS generation lengths, in Lyapunov times unless given in steps."""

    params: KSParams = field(default_factory=KSParams)
    lyapunov_exponent: float = LYAPUNOV_KS
    transient_lt: float = 300.0
    train_lt: float = 1000.0
    test_lt: float = 100.0
    train_len: Optional[int] = None  # step overrides
    test_len: Optional[int] = None
    transient: Optional[int] = None
    seed: int = 0

    def steps(self, lt: float) -> int:
        sample_dt = self.params.dt * self.params.sample_every
        return int(round(lt / self.lyapunov_exponent / sample_dt))


def build_dataset(system: str, config=None, **overrides) -> Dataset:
    """Generate, trim, and normalize a dataset for ``"MG"`` or ``"KS"``.

    Keyword overrides are applied on top of the default config for the
    system (e.g. ``build_dataset("MG", train_len=20_000)``).
    """
    system = system.upper()
    if system == "MG":
        config = replace(config or MGConfig(), **overrides)
        p = config.params
        if min(config.train_len, config.test_len) < 1 or config.transient < 0:
            raise ConfigError("dataset lengths must be positive")
        raw = mg_integrate(p, mg_history(p, config.seed),
                           config.train_len + config.test_len, config.transient)
        z, norm = normalize(raw[None, :])
        tau_key = int(round(p.tau))
        lam = LYAPUNOV_MG.get(tau_key)
        return Dataset(
            data=z,
            dt=p.dt,
            norm=norm,
            split=Split(0, config.train_len, config.train_len, config.test_len),
            system="MG",
            params={**asdict(p), "transient": config.transient, "seed": config.seed},
            lyapunov_time=None if lam is None else 1.0 / lam,
        )
    if system == "KS":
        config = replace(config or KSConfig(), **overrides)
        p = config.params
        transient = config.transient if config.transient is not None else config.steps(config.transient_lt)
        train_len = config.train_len if config.train_len is not None else config.steps(config.train_lt)
        test_len = config.test_len if config.test_len is not None else config.steps(config.test_lt)
        if min(train_len, test_len) < 1 or transient < 0:
            raise ConfigError("dataset lengths must be positive")
        rng = np.random.default_rng(config.seed)
        u0 = 0.1 * rng.standard_normal(p.Q)
        raw = ks_integrate(p, u0 - u0.mean(), train_len + test_len, transient)
        z, norm = normalize(raw, shared=True)
        return Dataset(
            data=z,
            dt=p.dt * p.sample_every,
            norm=norm,
            split=Split(0, train_len, train_len, test_len),
            system="KS",
            params={**asdict(p), "transient": transient, "seed": config.seed},
            lyapunov_time=1.0 / config.lyapunov_exponent,
        )
    raise ConfigError(f"unknown system {system!r}; expected 'MG' or 'KS'")
