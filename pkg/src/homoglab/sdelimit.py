"""Reference diffusion solutions and weak-distance diagnostics.

Provides an explicit stochastic integrator with constant diffusion
matrix on [0, 1], closed-form moments of the linear-drift process used
as the flagship oracle, and an ensemble comparison report (mean and
covariance gaps plus per-coordinate two-sample Kolmogorov-Smirnov
statistics with the asymptotic threshold).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import parallel, rng
from .fastslow import DEFAULT_T_GRID, EnsembleStats
from .sampling import SamplerConfig

_DIVERGENCE = 1e6


def psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root by eigen-decomposition, clipping negative round-off."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    w, v = np.linalg.eigh(0.5 * (sigma + sigma.T))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


@dataclass(frozen=True)
class SdeSpec:
    d: int
    drift: Callable[[np.ndarray], np.ndarray]  # (m, d) -> (m, d)
    diffusion_matrix: np.ndarray  # constant d x d
    xi: np.ndarray
    steps: int
    trials: int
    t_grid: np.ndarray = field(default_factory=lambda: DEFAULT_T_GRID.copy())

    def __post_init__(self):
        object.__setattr__(
            self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=np.float64))
        )
        object.__setattr__(
            self,
            "diffusion_matrix",
            np.atleast_2d(np.asarray(self.diffusion_matrix, dtype=np.float64)),
        )
        object.__setattr__(self, "t_grid", np.asarray(self.t_grid, dtype=np.float64))
        if self.xi.shape != (self.d,):
            raise ValueError("xi must have shape (d,)")
        if self.diffusion_matrix.shape != (self.d, self.d):
            raise ValueError("diffusion_matrix must be d x d")
        cov = self.diffusion_matrix @ self.diffusion_matrix.T
        if np.min(np.linalg.eigvalsh(cov)) < -1e-12:
            raise ValueError("diffusion covariance must be PSD")
        if self.steps < 100:
            raise ValueError("steps must be >= 100")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def euler_maruyama(
    spec: SdeSpec, cfg: SamplerConfig, workers: int | None = None
) -> EnsembleStats:
    """Explicit scheme on [0, 1] with Gaussian increments of covariance
    (sigma sigma^T) dt, recorded on the spec's time grid.

    Increment normals are counter-based (trial key x step x coordinate),
    so trajectories are reproducible for any worker count.  A trial
    whose state exceeds 1e6 in absolute value is aborted; the run fails
    if more than 0.1% of trials abort.
    """
    dt = 1.0 / spec.steps
    sqrt_dt = math.sqrt(dt)
    steps_at = np.floor(spec.steps * spec.t_grid + 1e-9).astype(np.int64)
    nt = len(steps_at)
    record: dict[int, list[int]] = {}
    for slot, s in enumerate(steps_at):
        record.setdefault(int(s), []).append(slot)
    sig = spec.diffusion_matrix

    def work(lo, hi):
        m = hi - lo
        keys = rng.key_array(
            rng.seed_state(cfg.root_seed, cfg.stream_id, rng.ROLE_GAUSS),
            np.arange(lo, hi, dtype=np.uint64),
        )
        x = np.tile(spec.xi, (m, 1))
        out = np.empty((nt, m, spec.d))
        aborted = np.zeros(m, dtype=bool)
        for slot in record.get(0, []):
            out[slot] = x
        for k in range(int(steps_at.max())):
            z = np.stack(
                [rng.standard_normal(keys, k * spec.d + i) for i in range(spec.d)],
                axis=1,
            )
            incr = np.asarray(spec.drift(x), dtype=np.float64) * dt
            incr = incr + (z @ sig.T) * sqrt_dt
            x = x + np.where(aborted[:, None], 0.0, incr)
            bad = (np.abs(x) > _DIVERGENCE).any(axis=1) & ~aborted
            if np.any(bad):
                aborted |= bad
                x[bad] = np.nan
            for slot in record.get(k + 1, []):
                out[slot] = x
        return out, aborted

    parts = parallel.run_chunks(work, spec.trials, workers)
    values = np.concatenate([p[0] for p in parts], axis=1)
    aborted = np.concatenate([p[1] for p in parts])
    n_abort = int(aborted.sum())
    if n_abort > 0.001 * spec.trials:
        raise RuntimeError(f"{n_abort}/{spec.trials} trials diverged")
    if n_abort:
        values = values[:, ~aborted, :]
    return EnsembleStats.from_values(spec.t_grid, values)


def ou_moments(lambda_: float, sigma2: float, t: float, xi: float):
    """Mean and variance at time t of dX = -lambda X dt + sigma dW, X(0) = xi.

    The lambda -> 0 limit is Brownian motion with variance sigma2 * t.
    """
    if lambda_ < 0.0:
        raise ValueError("lambda_ must be >= 0")
    mean = xi * math.exp(-lambda_ * t)
    lt = lambda_ * t
    if lt < 1e-12:
        var = sigma2 * t
    else:
        var = sigma2 * (-math.expm1(-2.0 * lambda_ * t)) / (2.0 * lambda_)
    return mean, var


def ks_2sample(sorted_a: np.ndarray, sorted_b: np.ndarray) -> float:
    """Two-sample KS statistic from pre-sorted samples."""
    pooled = np.concatenate([sorted_a, sorted_b])
    fa = np.searchsorted(sorted_a, pooled, side="right") / len(sorted_a)
    fb = np.searchsorted(sorted_b, pooled, side="right") / len(sorted_b)
    return float(np.max(np.abs(fa - fb)))


def ks_threshold(n1: int, n2: int, level: float = 0.01) -> float:
    """Asymptotic two-sample KS rejection threshold at the given level."""
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt((n1 + n2) / (n1 * n2))


@dataclass(frozen=True)
class WeakDistanceReport:
    times: np.ndarray
    mean_diff: np.ndarray  # (nt,), l1 gap of means
    cov_diff: np.ndarray  # (nt,), Frobenius gap of covariances
    ks_stat: np.ndarray  # (nt, d)
    ks_threshold: float
    level: float

    @property
    def ks_reject(self) -> np.ndarray:
        return self.ks_stat > self.ks_threshold


def weak_distance(
    a: EnsembleStats, b: EnsembleStats, level: float = 0.01
) -> WeakDistanceReport:
    """Per-time-slice comparison of two ensembles on the same grid."""
    if a.ecdf.shape[1] != b.ecdf.shape[1]:
        raise ValueError("dimension mismatch")
    if len(a.times) != len(b.times) or np.max(np.abs(a.times - b.times)) > 1e-12:
        raise ValueError("time grids differ")
    nt, d = a.mean.shape
    ks = np.empty((nt, d))
    for t in range(nt):
        for i in range(d):
            ks[t, i] = ks_2sample(a.ecdf[t, i], b.ecdf[t, i])
    return WeakDistanceReport(
        times=a.times.copy(),
        mean_diff=np.abs(a.mean - b.mean).sum(axis=1),
        cov_diff=np.sqrt(np.sum((a.cov - b.cov) ** 2, axis=(1, 2))),
        ks_stat=ks,
        ks_threshold=ks_threshold(a.trials, b.trials, level),
        level=level,
    )
