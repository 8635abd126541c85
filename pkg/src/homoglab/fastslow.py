"""Slow-process simulation driven by a fast map orbit.

The slow recurrence x_{k+1} = x_k + a(x_k, y_k)/n + b(x_k, y_k)/sqrt(n)
is iterated exactly (no sub-stepping) with y driven by a fast map, and
the rescaled process is recorded on a time grid.  Trials are
independent tasks keyed by trial index; ensemble statistics are
assembled from index-ordered slabs, so outputs are identical for any
worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import parallel, rng
from .maps import MapDescriptor
from .observables import Observable
from .sampling import FastEnsemble, SamplerConfig

DEFAULT_T_GRID = np.linspace(0.0, 1.0, 101)

Field = Callable[[np.ndarray, tuple[np.ndarray, ...]], np.ndarray]


def zero_field(x, coords):
    return np.zeros_like(x)


def linear_drift(rate: float) -> Field:
    """Drift a(x, y) = rate * x."""

    def a(x, coords):
        return rate * x

    return a


def constant_drift(c) -> Field:
    c_arr = np.atleast_1d(np.asarray(c, dtype=np.float64))

    def a(x, coords):
        return np.broadcast_to(c_arr, x.shape)

    return a


def observable_noise(obs: Observable) -> Field:
    """Additive noise b(x, y) = v(y) from an observable of the fast point."""

    def b(x, coords):
        return obs(*coords)

    return b


def _eval_field(f: Field, x: np.ndarray, coords) -> np.ndarray:
    out = np.asarray(f(x, coords), dtype=np.float64)
    if out.ndim == 1:
        out = out[:, None]
    if out.shape != x.shape:
        out = np.broadcast_to(out, x.shape)
    return out


@dataclass(frozen=True)
class SlowSystemSpec:
    d: int
    xi: np.ndarray
    drift_a: Field
    noise_b: Field
    n: int
    map: MapDescriptor
    t_grid: np.ndarray = field(default_factory=lambda: DEFAULT_T_GRID.copy())
    noise_centered: bool = True

    def __post_init__(self):
        object.__setattr__(
            self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=np.float64))
        )
        object.__setattr__(
            self, "t_grid", np.asarray(self.t_grid, dtype=np.float64)
        )
        if self.d < 1 or self.xi.shape != (self.d,):
            raise ValueError("xi must have shape (d,)")
        if self.n < 10:
            raise ValueError("n must be >= 10")
        t = self.t_grid
        if len(t) < 1 or t[0] < 0.0 or t[-1] > 1.0 or np.any(np.diff(t) <= 0.0):
            raise ValueError("t_grid must be increasing within [0, 1]")


@dataclass(frozen=True)
class Path:
    times: np.ndarray
    values: np.ndarray  # (len(times), d)


@dataclass(frozen=True)
class EnsembleStats:
    """Per-time-slice moments and empirical CDFs of a trajectory ensemble."""

    times: np.ndarray
    mean: np.ndarray  # (nt, d)
    cov: np.ndarray  # (nt, d, d)
    ecdf: np.ndarray  # (nt, d, trials), sorted along the last axis
    trials: int
    mean_stderr: np.ndarray  # (nt, d)
    var_stderr: np.ndarray  # (nt, d)

    def __post_init__(self):
        if np.max(np.abs(self.cov - np.swapaxes(self.cov, 1, 2))) > 1e-10:
            raise ValueError("covariance must be symmetric")
        for t in range(len(self.times)):
            if np.min(np.linalg.eigvalsh(self.cov[t])) < -1e-10:
                raise ValueError("covariance must be positive semidefinite")
        if np.any(np.diff(self.ecdf, axis=2) < 0.0):
            raise ValueError("ecdf values must be sorted")

    @classmethod
    def from_values(cls, times: np.ndarray, values: np.ndarray) -> "EnsembleStats":
        """Build statistics from raw per-trial values of shape (nt, trials, d)."""
        nt, m, d = values.shape
        if m < 2:
            raise ValueError("need at least 2 trials")
        mean = values.mean(axis=1)
        dev = values - mean[:, None, :]
        cov = np.einsum("tmi,tmj->tij", dev, dev) / (m - 1)
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        var = np.einsum("tii->ti", cov)
        m4 = np.mean(dev**4, axis=1)
        var_se = np.sqrt(np.maximum(0.0, m4 - (m - 3) / (m - 1) * var**2) / m)
        ecdf = np.sort(values.transpose(0, 2, 1), axis=2)
        return cls(
            times=np.asarray(times, dtype=np.float64),
            mean=mean,
            cov=cov,
            ecdf=ecdf,
            trials=m,
            mean_stderr=np.sqrt(np.maximum(var, 0.0) / m),
            var_stderr=var_se,
        )

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise KeyError(f"time {t} not on the grid")
        return i

    def var(self, t: float, coord: int = 0) -> float:
        i = self.time_index(t)
        return float(self.cov[i, coord, coord])


def _grid_steps(n: int, t_grid: np.ndarray) -> np.ndarray:
    # [n t] with a tiny slack so exact products do not fall to the lower step
    return np.floor(n * t_grid + 1e-9).astype(np.int64)


def _simulate_chunk(spec: SlowSystemSpec, cfg: SamplerConfig, lo: int, hi: int):
    """Simulate trials [lo, hi); returns (values, aborted_mask, first_coords)."""
    m = hi - lo
    steps = _grid_steps(spec.n, spec.t_grid)
    nt = len(steps)
    ens = FastEnsemble(spec.map, cfg, np.arange(lo, hi), role=rng.ROLE_INIT)
    x = np.tile(spec.xi, (m, 1))
    out = np.empty((nt, m, spec.d))
    aborted = np.zeros(m, dtype=bool)
    record = {}
    for slot, s in enumerate(steps):
        record.setdefault(int(s), []).append(slot)
    for slot in record.get(0, []):
        out[slot] = x
    inv_n = 1.0 / spec.n
    inv_sqrt_n = 1.0 / math.sqrt(spec.n)
    first_coords = ens.coords()

    for k in range(int(steps.max())):
        coords = ens.coords()
        incr = _eval_field(spec.drift_a, x, coords) * inv_n
        incr = incr + _eval_field(spec.noise_b, x, coords) * inv_sqrt_n
        bad = ~np.isfinite(incr).all(axis=1) & ~aborted
        if np.any(bad):
            aborted |= bad
            x[bad] = np.nan
        x = x + np.where(aborted[:, None], 0.0, incr)
        ens.step()
        for slot in record.get(k + 1, []):
            out[slot] = x
    return out, aborted, first_coords


def _check_noise_centering(spec: SlowSystemSpec, x0: np.ndarray, coords) -> None:
    vals = _eval_field(spec.noise_b, x0, coords)
    m = vals.shape[0]
    if m < 2:
        return
    mean = vals.mean(axis=0)
    sem = vals.std(axis=0, ddof=1) / math.sqrt(m)
    if np.any(np.abs(mean) > 3.0 * np.maximum(sem, 1e-300)):
        raise ValueError(
            "noise field declared centered but its empirical mean over "
            f"fast-map samples is {mean} (3 stderr = {3 * sem})"
        )


def run_ensemble(
    spec: SlowSystemSpec,
    trials: int,
    cfg: SamplerConfig,
    workers: int | None = None,
) -> EnsembleStats:
    """Simulate independent slow paths and return per-time statistics.

    Fails if more than 0.1% of trials abort on non-finite increments;
    surviving trials enter the statistics.
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")

    def work(lo, hi):
        values, aborted, coords = _simulate_chunk(spec, cfg, lo, hi)
        if lo == 0 and spec.noise_centered:
            x0 = np.tile(spec.xi, (hi - lo, 1))
            _check_noise_centering(spec, x0, coords)
        return values, aborted

    parts = parallel.run_chunks(work, trials, workers)
    values = np.concatenate([p[0] for p in parts], axis=1)
    aborted = np.concatenate([p[1] for p in parts])
    n_abort = int(aborted.sum())
    if n_abort > 0.001 * trials:
        bad = np.flatnonzero(aborted)[:8]
        raise RuntimeError(
            f"{n_abort}/{trials} trajectories aborted on non-finite "
            f"increments (first trial indices {bad.tolist()})"
        )
    if n_abort:
        values = values[:, ~aborted, :]
    return EnsembleStats.from_values(spec.t_grid, values)


def run_slow_path(spec: SlowSystemSpec, cfg: SamplerConfig) -> Path:
    """Single slow trajectory (trial index 0), recorded on the time grid."""
    values, aborted, _ = _simulate_chunk(spec, cfg, 0, 1)
    if aborted[0]:
        raise RuntimeError("trajectory aborted: non-finite drift or noise value")
    return Path(times=spec.t_grid.copy(), values=values[:, 0, :])
