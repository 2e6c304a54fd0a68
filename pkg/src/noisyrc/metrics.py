"""Short-term (RMSE, horizon, stability) and long-term (deviation value) measures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import ConfigError, DimensionError, EmptyEnsembleError


@dataclass(frozen=True)
class Projection:
    """A 2D view of a multichannel trajectory.

    ``kind="channels"`` plots channel ``i`` against channel ``j``;
    ``kind="delay"`` plots channel ``i`` at ``t`` against itself at
    ``t - lag`` (``j`` is the lag in samples).
    """

    kind: str = "channels"
    i: int = 0
    j: int = 1

    def __post_init__(self):
        if self.kind not in ("channels", "delay"):
            raise ConfigError(f"unknown projection kind {self.kind!r}")
        if self.kind == "delay" and self.j < 1:
            raise ConfigError("delay lag must be >= 1")

    def __call__(self, traj: np.ndarray) -> np.ndarray:
        traj = np.atleast_2d(traj)
        if self.kind == "channels":
            return np.column_stack([traj[self.i], traj[self.j]])
        x = traj[self.i]
        return np.column_stack([x[self.j:], x[:-self.j]])

    @classmethod
    def mg(cls, tau: float, dt: float = 1.0) -> "Projection":
        """``{s(t), s(t - tau)}`` plane."""
        return cls("delay", 0, int(round(tau / dt)))

    @classmethod
    def ks(cls) -> "Projection":
        """``{u(4, t), u(5, t)}`` plane (grid indices)."""
        return cls("channels", 4, 5)


@dataclass(frozen=True)
class MetricConfig:
    r_c: float = 0.1
    window: int = 300
    long_window: int = 10_000
    n_ensemble: int = 20
    dv_subsample: int = 10
    projection: Projection = Projection("delay", 0, 30)
    rmse_variant: str = "mean"
    horizon_variant: str = "pointwise"

    def __post_init__(self):
        if not self.r_c > 0:
            raise ConfigError("r_c must be positive")
        if self.n_ensemble < 1 or self.window < 1 or self.long_window < 1 or self.dv_subsample < 1:
            raise ConfigError("n_ensemble, window, long_window, dv_subsample must be >= 1")
        if self.rmse_variant not in ("mean", "sum-over-channels"):
            raise ConfigError(f"unknown rmse_variant {self.rmse_variant!r}")
        if self.horizon_variant not in ("pointwise", "expanding"):
            raise ConfigError(f"unknown horizon_variant {self.horizon_variant!r}")


@dataclass(frozen=True)
class ShortTermResult:
    rmse: float
    t_s: float
    stable: bool


def _check_shapes(pred, truth):
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if pred.shape != truth.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return pred, truth


def rmse(pred, truth, variant: str = "mean") -> float:
    """Root-mean-square error over all channels and steps.

    ``variant="sum-over-channels"`` sums squared errors over channels
    before averaging over time. Any non-finite prediction gives ``inf``.
    """
    pred, truth = _check_shapes(pred, truth)
    if not np.all(np.isfinite(pred)):
        return float("inf")
    sq = (pred - truth) ** 2
    if variant == "mean":
        return float(np.sqrt(np.mean(sq)))
    if variant == "sum-over-channels":
        return float(np.sqrt(np.mean(np.sum(sq, axis=0))))
    raise ConfigError(f"unknown rmse variant {variant!r}")


def pointwise_error(pred, truth) -> np.ndarray:
    pred, truth = _check_shapes(pred, truth)
    with np.errstate(invalid="ignore", over="ignore"):
        e = np.sqrt(np.mean((pred - truth) ** 2, axis=0))
    e[~np.isfinite(e)] = np.inf
    return e


def horizon(pred, truth, r_c: float, dt: float = 1.0, variant: str = "pointwise") -> float:
    """Time until the error first exceeds ``r_c`` (``dt * T`` if it never does).

    ``variant="expanding"`` uses the RMSE over ``[0, t]`` instead of the
    per-step error.
    """
    e = pointwise_error(pred, truth)
    if variant == "expanding":
        with np.errstate(invalid="ignore", over="ignore"):
            e = np.sqrt(np.cumsum(e ** 2) / np.arange(1, e.size + 1))
        e[~np.isfinite(e)] = np.inf
    elif variant != "pointwise":
        raise ConfigError(f"unknown horizon variant {variant!r}")
    over = np.flatnonzero(e > r_c)
    return dt * (over[0] if over.size else e.size)


def stability(run_rmses: Sequence[float], r_c: float) -> float:
    """Fraction of runs with RMSE strictly below ``r_c``."""
    x = np.asarray(run_rmses, dtype=float)
    if x.size == 0:
        raise EmptyEnsembleError("stability of an empty ensemble")
    return float(np.mean(x < r_c))


def short_term(pred, truth, config: MetricConfig, dt: float = 1.0) -> ShortTermResult:
    r = rmse(pred, truth, config.rmse_variant)
    t_s = horizon(pred, truth, config.r_c, dt, config.horizon_variant)
    return ShortTermResult(rmse=r, t_s=t_s, stable=bool(r < config.r_c))


def diameter(points: np.ndarray) -> float:
    """Largest pairwise distance of a 2D point set (via its convex hull)."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 2:
        return 0.0
    try:
        pts = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        # collinear: the extreme points along the principal axis suffice
        c = pts - pts.mean(axis=0)
        axis = np.linalg.svd(c, full_matrices=False)[2][0]
        s = c @ axis
        pts = pts[[np.argmin(s), np.argmax(s)]]
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


def nearest_distances(points: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Distance from each point to its nearest reference point."""
    return cKDTree(reference).query(points, k=1)[0]


def deviation_value(pred, truth_ref, projection: Union[Projection, None] = None,
                    subsample: int = 1) -> float:
    """Mean distance from projected predicted points to the projected reference attractor.

    Non-finite predicted points count as 10x the reference-set diameter
    (10 if the reference is a single point).
    """
    proj = projection or Projection()
    P = proj(np.asarray(pred, dtype=float))
    R = proj(np.asarray(truth_ref, dtype=float))[::subsample]
    if not np.all(np.isfinite(R)):
        raise ConfigError("reference trajectory must be finite")
    if len(R) == 0 or len(P) == 0:
        raise ConfigError("empty trajectory after projection")
    finite = np.all(np.isfinite(P), axis=1)
    dist = np.empty(len(P))
    if finite.any():
        dist[finite] = nearest_distances(P[finite], R)
    if not finite.all():
        diam = diameter(R)
        dist[~finite] = 10.0 * (diam if diam > 0 else 1.0)
    return float(dist.mean())
