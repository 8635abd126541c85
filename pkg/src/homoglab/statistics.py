"""Correlation, diffusion-coefficient and tail estimators.

All estimators are reductions over independent orbit ensembles: members
own disjoint counter-based sample indices, per-member contributions are
accumulated into index-ordered arrays and reduced once, so results are
independent of worker scheduling.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import parallel
from .maps import MapDescriptor, MapKind
from .observables import Observable
from .sampling import Estimate, FastEnsemble, SamplerConfig

__all__ = [
    "Observable",
    "DecayFit",
    "GreenKuboResult",
    "MomentGrowth",
    "TailFit",
    "correlation",
    "green_kubo",
    "moment_growth",
    "fcb_probe",
    "return_time_tail",
    "decay_fit",
]

_VALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class DecayFit:
    """Least-squares power-law fit in (log lag, log value)."""

    exponent: float
    intercept: float
    r_squared: float
    lags_used: tuple[int, ...]

    @property
    def degenerate(self) -> bool:
        return self.r_squared < 0.5


def decay_fit(lags, values) -> DecayFit:
    """Fit value ~ exp(intercept) * lag^exponent by least squares on logs.

    Values pass through abs() and a 1e-12 floor before the logs.
    """
    lags = np.asarray(lags, dtype=np.float64)
    values = np.maximum(np.abs(np.asarray(values, dtype=np.float64)), _VALUE_FLOOR)
    if len(lags) < 3:
        raise ValueError("need at least 3 points to fit")
    if len(lags) != len(values):
        raise ValueError("lags and values must have equal length")
    if np.any(lags <= 0):
        raise ValueError("lags must be positive")
    lx = np.log(lags)
    ly = np.log(values)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 0.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return DecayFit(
        exponent=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        lags_used=tuple(int(k) for k in lags),
    )


# ---------------------------------------------------------------------------
# orbit series machinery


def _series_chunk(
    desc: MapDescriptor,
    cfg: SamplerConfig,
    lo: int,
    hi: int,
    length: int,
    obs: Observable,
    role: int = 0,
) -> np.ndarray:
    """Observable time series for members [lo, hi): shape (m, length, arity)."""
    ens = FastEnsemble(desc, cfg, np.arange(lo, hi), role=role)
    m = hi - lo
    out = np.empty((m, length, obs.arity), dtype=np.float64)
    for t in range(length):
        vals = obs(*ens.coords())
        out[:, t, :] = vals[:, None] if vals.ndim == 1 else vals
        ens.step()
    return out


def _series_chunk_size(length: int) -> int:
    # keep per-chunk series storage near 64 MB
    return max(1, min(4096, 8_000_000 // max(length, 1)))


def correlation(
    v: Observable,
    w: Observable,
    desc: MapDescriptor,
    lag: int,
    samples: int,
    cfg: SamplerConfig,
    workers: int | None = None,
) -> Estimate:
    """Lagged correlation of scalar observables under the physical measure.

    Each of `samples` members contributes a time average over a window
    at least ten times the lag; the estimate subtracts the product of
    the window means, so at lag 0 it equals the empirical covariance of
    v and w over the pooled sample stream.  The standard error is a
    leave-one-member-out jackknife.
    """
    if v.arity != 1 or w.arity != 1:
        raise ValueError("correlation expects scalar observables")
    if lag < 0:
        raise ValueError("lag must be >= 0")
    if samples < 2:
        raise ValueError("need at least 2 members")
    window = max(10 * lag, 1000)
    length = window + lag

    def work(lo, hi):
        both = v if v is w else None
        if both is not None:
            series = _series_chunk(desc, cfg, lo, hi, length, v)[:, :, 0]
            sv = series[:, :window]
            sw = series[:, lag:]
        else:
            from .observables import stack

            series = _series_chunk(desc, cfg, lo, hi, length, stack([v, w]))
            sv = series[:, :window, 0]
            sw = series[:, lag:, 1]
        return (
            np.einsum("mt,mt->m", sv, sw),
            sv.sum(axis=1),
            sw.sum(axis=1),
        )

    parts = parallel.run_chunks(work, samples, workers, _series_chunk_size(length))
    s_vw = np.concatenate([p[0] for p in parts])
    s_v = np.concatenate([p[1] for p in parts])
    s_w = np.concatenate([p[2] for p in parts])

    n_tot = samples * window
    est = float(s_vw.sum() / n_tot - (s_v.sum() / n_tot) * (s_w.sum() / n_tot))
    # leave-one-member-out jackknife
    n_loo = (samples - 1) * window
    loo = (s_vw.sum() - s_vw) / n_loo - ((s_v.sum() - s_v) / n_loo) * (
        (s_w.sum() - s_w) / n_loo
    )
    se = float(math.sqrt(max(0.0, (samples - 1) / samples * np.sum((loo - loo.mean()) ** 2))))
    if se > abs(est) and abs(est) > 0.1:
        warnings.warn(
            f"correlation estimate {est:.4g} not resolved (stderr {se:.4g})",
            RuntimeWarning,
        )
    return Estimate(est, se)


def autocorrelation_scan(
    v: Observable,
    desc: MapDescriptor,
    lags: list[int],
    samples: int,
    cfg: SamplerConfig,
    window: int | None = None,
    workers: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Lagged autocorrelations of a scalar observable at several lags.

    Same estimator as `correlation` with v = w, but one orbit ensemble
    serves every lag, which is what a decay-rate fit needs.  Returns
    (values, stderrs) aligned with `lags`; stderrs are leave-one-member-
    out jackknives.
    """
    if v.arity != 1:
        raise ValueError("expects a scalar observable")
    lag_arr = np.asarray(sorted(int(k) for k in lags), dtype=np.int64)
    if lag_arr[0] < 0:
        raise ValueError("lags must be >= 0")
    max_lag = int(lag_arr[-1])
    if window is None:
        window = max(10 * max_lag, 1000)
    length = window + max_lag

    def work(lo, hi):
        series = _series_chunk(desc, cfg, lo, hi, length, v)[:, :, 0]
        base = series[:, :window]
        s_vw = np.empty((hi - lo, len(lag_arr)))
        s_w = np.empty((hi - lo, len(lag_arr)))
        for i, ell in enumerate(lag_arr):
            shifted = series[:, ell : ell + window]
            s_vw[:, i] = np.einsum("mt,mt->m", base, shifted)
            s_w[:, i] = shifted.sum(axis=1)
        return s_vw, base.sum(axis=1), s_w

    parts = parallel.run_chunks(work, samples, workers, _series_chunk_size(length))
    s_vw = np.concatenate([p[0] for p in parts])
    s_v = np.concatenate([p[1] for p in parts])
    s_w = np.concatenate([p[2] for p in parts])

    n_tot = samples * window
    est = s_vw.sum(axis=0) / n_tot - (s_v.sum() / n_tot) * (s_w.sum(axis=0) / n_tot)
    n_loo = (samples - 1) * window
    loo = (s_vw.sum(axis=0) - s_vw) / n_loo - (
        ((s_v.sum() - s_v) / n_loo)[:, None] * ((s_w.sum(axis=0) - s_w) / n_loo)
    )
    se = np.sqrt(
        np.maximum(0.0, (samples - 1) / samples * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    )
    return est, se


@dataclass(frozen=True)
class GreenKuboResult:
    """Limiting covariance and drift assembled from lagged autocovariances.

    sigma = c0 + drift_e + drift_e^T holds exactly as assembled; the
    truncation movement is the entrywise change of the partial drift sum
    over the last decade of lags.
    """

    sigma: np.ndarray
    drift_e: np.ndarray
    c0: np.ndarray
    max_lag: int
    stderr: np.ndarray
    drift_stderr: np.ndarray = field(default=None)
    truncation_movement: float = field(default=0.0)

    def __post_init__(self):
        recon = self.c0 + self.drift_e + self.drift_e.T
        if not np.array_equal(recon, self.sigma):
            raise ValueError("sigma must equal c0 + drift_e + drift_e^T")
        if np.max(np.abs(self.sigma - self.sigma.T)) > 1e-12:
            raise ValueError("sigma must be symmetric")


def green_kubo(
    v: Observable,
    desc: MapDescriptor,
    max_lag: int,
    samples: int,
    cfg: SamplerConfig,
    workers: int | None = None,
) -> GreenKuboResult:
    """Sum lagged autocovariances of the empirically centered observable.

    Two deterministic passes over the same ensemble: the first measures
    the global mean, the second accumulates per-member lag moments of
    the centered series.  Each member's window is ten times max_lag.
    Warns when the drift partial sum still moves by more than 5% of
    ||sigma|| over the last decade of lags.
    """
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    d = v.arity
    window = 10 * max_lag
    length = window + max_lag
    chunk = _series_chunk_size(length * d)

    def mean_pass(lo, hi):
        series = _series_chunk(desc, cfg, lo, hi, length, v)
        return series.sum(axis=(0, 1))

    sums = parallel.run_chunks(mean_pass, samples, workers, chunk)
    mean = np.sum(sums, axis=0) / (samples * length)

    lags = np.arange(max_lag + 1)

    def lag_pass(lo, hi):
        series = _series_chunk(desc, cfg, lo, hi, length, v) - mean
        out = np.empty((hi - lo, max_lag + 1, d, d))
        base = series[:, :window, :]
        for ell in lags:
            out[:, ell] = np.einsum(
                "mti,mtj->mij", base, series[:, ell : ell + window, :]
            )
        return out

    per_member = np.concatenate(
        parallel.run_chunks(lag_pass, samples, workers, chunk), axis=0
    )
    cov = per_member.sum(axis=0) / (samples * window)  # (max_lag+1, d, d)
    c0 = 0.5 * (cov[0] + cov[0].T)
    e_mat = cov[1:].sum(axis=0)
    sigma = c0 + e_mat + e_mat.T

    # jackknife stderr of the sigma and drift entries (centering mean held fixed)
    loo = (per_member.sum(axis=0) - per_member) / ((samples - 1) * window)
    loo_c0 = 0.5 * (loo[:, 0] + np.swapaxes(loo[:, 0], 1, 2))
    loo_e = loo[:, 1:].sum(axis=1)
    loo_sigma = loo_c0 + loo_e + np.swapaxes(loo_e, 1, 2)
    fac = (samples - 1) / samples
    se = np.sqrt(fac * np.sum((loo_sigma - loo_sigma.mean(axis=0)) ** 2, axis=0))
    se_e = np.sqrt(fac * np.sum((loo_e - loo_e.mean(axis=0)) ** 2, axis=0))

    tail_lo = max(1, max_lag - max(1, max_lag // 10))
    movement = float(np.max(np.abs(cov[tail_lo:].sum(axis=0))))
    scale = float(np.max(np.abs(sigma)))
    if scale > 0 and movement > 0.05 * scale:
        warnings.warn(
            f"lag truncation not settled: last-decade movement {movement:.3g} "
            f"exceeds 5% of ||sigma|| = {scale:.3g}",
            RuntimeWarning,
        )
    return GreenKuboResult(
        sigma=sigma,
        drift_e=e_mat,
        c0=c0,
        max_lag=max_lag,
        stderr=se,
        drift_stderr=se_e,
        truncation_movement=movement,
    )


class MomentGrowth(NamedTuple):
    birkhoff: DecayFit
    iterated: DecayFit


def _power_norm(vals: np.ndarray, q: float) -> float:
    """Percentile-stabilised L^q norm: winsorise the top 0.1% then power-mean."""
    a = np.abs(vals)
    cap = np.percentile(a, 99.9)
    a = np.minimum(a, cap)
    mq = float(np.mean(a**q))
    return mq ** (1.0 / q)


def moment_growth(
    v: Observable,
    desc: MapDescriptor,
    k_list: list[int],
    gamma: float,
    samples: int,
    cfg: SamplerConfig,
    workers: int | None = None,
) -> MomentGrowth:
    """Growth exponents of Birkhoff-sum and iterated-sum moments.

    Estimates the L^(2 gamma) norm of the partial sums S_k of the
    centered observable and the L^gamma norm of the strictly upper
    iterated sums at each k, then fits both growth exponents on logs.
    Diffusive scaling gives 1/2 for the first and 1 for the second.
    """
    if gamma <= 1.0:
        raise ValueError("gamma must be > 1")
    if v.arity != 1:
        raise ValueError("moment_growth expects a scalar observable")
    ks = [int(k) for k in k_list]
    if len(ks) < 3 or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_list must be increasing with >= 3 entries")
    k_max = ks[-1]

    def mean_pass(lo, hi):
        ens = FastEnsemble(desc, cfg, np.arange(lo, hi))
        tot = 0.0
        for _ in range(k_max):
            tot += float(v(*ens.coords()).sum())
            ens.step()
        return tot

    mean = sum(parallel.run_chunks(mean_pass, samples, workers)) / (samples * k_max)

    snap = {k: i for i, k in enumerate(ks)}

    def sum_pass(lo, hi):
        ens = FastEnsemble(desc, cfg, np.arange(lo, hi))
        m = hi - lo
        s = np.zeros(m)
        ss = np.zeros(m)
        out_s = np.empty((m, len(ks)))
        out_ss = np.empty((m, len(ks)))
        for k in range(1, k_max + 1):
            val = v(*ens.coords()) - mean
            ss += s * val
            s += val
            ens.step()
            if k in snap:
                i = snap[k]
                out_s[:, i] = s
                out_ss[:, i] = ss
        return out_s, out_ss

    parts = parallel.run_chunks(sum_pass, samples, workers)
    s_vals = np.concatenate([p[0] for p in parts])
    ss_vals = np.concatenate([p[1] for p in parts])

    birkhoff = decay_fit(ks, [_power_norm(s_vals[:, i], 2 * gamma) for i in range(len(ks))])
    iterated = decay_fit(ks, [_power_norm(ss_vals[:, i], gamma) for i in range(len(ks))])
    return MomentGrowth(birkhoff, iterated)


def fcb_probe(
    factors: list[Observable],
    desc: MapDescriptor,
    k_vec: list[int],
    p: int,
    samples: int,
    cfg: SamplerConfig,
    workers: int | None = None,
) -> Estimate:
    """Gap between a joint orbit integral and its split version.

    The test function is the product of the given scalar factors
    evaluated at orbit times k_vec.  The joint term uses one initial
    draw; the split term evaluates the first p factors on that draw and
    the remaining ones on an independent second draw, so its
    expectation is the product of the two block integrals.  Returns
    |joint - split| with the standard error of the paired difference.
    """
    from . import rng

    q = len(factors)
    if q < 1:
        raise ValueError("need at least one factor")
    if not 0 <= p < q:
        raise ValueError("split index p must satisfy 0 <= p < q")
    if any(f.arity != 1 for f in factors):
        raise ValueError("factors must be scalar")
    ks = [int(k) for k in k_vec]
    if len(ks) != q or any(b < a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_vec must be nondecreasing of length q")
    if samples < 2:
        raise ValueError("need at least 2 samples")

    def orbit_values(lo, hi, role):
        ens = FastEnsemble(desc, cfg, np.arange(lo, hi), role=role)
        out = np.empty((hi - lo, q))
        t = 0
        for i, k in enumerate(ks):
            while t < k:
                ens.step()
                t += 1
            out[:, i] = factors[i](*ens.coords())
        return out

    def work(lo, hi):
        va = orbit_values(lo, hi, rng.ROLE_INIT)
        vb = orbit_values(lo, hi, rng.ROLE_SPLIT)
        joint = va.prod(axis=1)
        split = va[:, :p].prod(axis=1) * vb[:, p:].prod(axis=1)
        return joint - split

    diffs = np.concatenate(parallel.run_chunks(work, samples, workers))
    se = float(np.std(diffs, ddof=1) / math.sqrt(samples))
    return Estimate(abs(float(np.mean(diffs))), se)


class TailFit(NamedTuple):
    tail: np.ndarray
    fit: DecayFit


def return_time_tail(
    alpha: float,
    k_list: list[int],
    samples: int,
    cfg: SamplerConfig,
) -> TailFit:
    """Empirical tail of the first return time to [1/2, 1].

    Return events are collected along physical-measure orbits: a member
    is conditioned on the base window by waiting for its first entry,
    after which every revisit yields one return-time event, so events
    follow the induced measure on [1/2, 1].  Each member contributes the
    same event quota, making the total independent of scheduling.  The
    power-law fit uses the k values whose empirical tail is nonzero.
    """
    if not (0.0 < alpha < 0.5):
        raise ValueError("alpha must lie in (0, 1/2)")
    ks = np.asarray(sorted(int(k) for k in k_list), dtype=np.int64)
    if len(ks) < 1 or ks[0] < 1:
        raise ValueError("k_list must contain positive integers")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    k_cap = int(ks[-1])

    members = int(min(4096, samples))
    quota = -(-samples // members)  # ceil
    desc = MapDescriptor(MapKind.LSV, alpha)
    ens = FastEnsemble(desc, cfg, np.arange(members))

    counts = np.zeros(k_cap + 2, dtype=np.int64)  # counts[k_cap+1] = overflow
    since = np.zeros(members, dtype=np.int64)
    entered = ens.coords()[0] >= 0.5
    recorded = np.zeros(members, dtype=np.int64)
    while True:
        ens.step()
        x = ens.coords()[0]
        since += 1
        visit = x >= 0.5
        record = visit & entered & (recorded < quota)
        if np.any(record):
            phis = np.minimum(since[record], k_cap + 1)
            counts += np.bincount(phis, minlength=k_cap + 2)
            recorded[record] += 1
        since[visit] = 0
        entered |= visit
        if np.all(recorded >= quota):
            break

    total = int(counts.sum())
    cum = np.cumsum(counts)  # cum[k] = #(phi <= k)
    tail = (total - cum[ks]) / total  # tail(k) = fraction with phi > k
    n_beyond = int(total - cum[k_cap])
    if n_beyond < 100:
        warnings.warn(
            f"only {n_beyond} return events exceed the largest k={k_cap}",
            RuntimeWarning,
        )
    keep = tail > 0
    if keep.sum() >= 3:
        fit = decay_fit(ks[keep], tail[keep])
    else:
        fit = DecayFit(0.0, 0.0, 0.0, tuple(int(k) for k in ks[keep]))
    return TailFit(tail=tail, fit=fit)
