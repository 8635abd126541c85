"""Iterated invariance-principle statistics and block diagnostics.

Computes the rescaled Birkhoff-sum process together with its strictly
upper iterated sum in a single pass, validates and searches alternating
big/small block schemes, measures the small-block remainder terms and
the within-block diagonal sums, and simulates the independent Gaussian
triangular array used as a synthetic harness for the limit law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import parallel, rng
from .fastslow import EnsembleStats
from .maps import MapDescriptor
from .observables import Observable
from .sampling import FastEnsemble, SamplerConfig
from .statistics import green_kubo

_EPS_FEASIBLE = 1e-9


@dataclass(frozen=True)
class BlockScheme:
    """Alternating big/small block partition of {0, ..., n-1}.

    Big blocks have length p = [n^a], small blocks q = [n^b], and
    k = [n / (p+q)] pairs fit before the leftover block.  The exponents
    must satisfy b > 1/gamma, a > (b+1)/2, a + gamma b > 2 and
    0 < b < a < 1, the joint regime in which small blocks vanish, the
    diagonal terms obey a law of large numbers and the big blocks
    decouple.
    """

    a_exp: float
    b_exp: float
    gamma: float
    n: int
    p: int = 0
    q: int = 0
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p", int(self.n**self.a_exp))
        object.__setattr__(self, "q", int(self.n**self.b_exp))
        object.__setattr__(self, "k", int(self.n / (self.p + self.q)))
        problems = scheme_violations(self.gamma, self.a_exp, self.b_exp, self.n)
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def feasible(self) -> bool:
        return True


@dataclass(frozen=True)
class SchemeInfeasible:
    """Report listing every violated scheme inequality."""

    gamma: float
    n: int | None
    a_exp: float
    b_exp: float
    violations: tuple[str, ...]

    @property
    def feasible(self) -> bool:
        return False


class SchemeExponents(NamedTuple):
    """Feasible exponent pair with its smallest inequality slack."""

    a_exp: float
    b_exp: float
    slack: float

    @property
    def feasible(self) -> bool:
        return True


def scheme_violations(
    gamma: float, a_exp: float, b_exp: float, n: int | None = None
) -> list[str]:
    out = []
    if gamma <= 0.0:
        out.append(f"gamma = {gamma} must be positive")
        return out
    if not b_exp > 1.0 / gamma:
        out.append(f"b = {b_exp} must exceed 1/gamma = {1.0 / gamma:.6g}")
    if not a_exp > (b_exp + 1.0) / 2.0:
        out.append(f"a = {a_exp} must exceed (b+1)/2 = {(b_exp + 1.0) / 2.0:.6g}")
    if not a_exp + gamma * b_exp > 2.0:
        out.append(
            f"a + gamma*b = {a_exp + gamma * b_exp:.6g} must exceed 2"
        )
    if not 0.0 < b_exp < a_exp < 1.0:
        out.append(f"need 0 < b < a < 1, got b = {b_exp}, a = {a_exp}")
    if not out and n is not None:
        p = int(n**a_exp)
        q = int(n**b_exp)
        if p < 1 or q < 1 or int(n / (p + q)) < 1:
            out.append(f"n = {n} too small: p = {p}, q = {q} leave no full block pair")
    return out


def make_block_scheme(
    gamma: float, n: int, a_exp: float, b_exp: float
) -> BlockScheme | SchemeInfeasible:
    """Validate the exponents; return the scheme or the list of violations."""
    problems = scheme_violations(gamma, a_exp, b_exp, n)
    if problems:
        return SchemeInfeasible(gamma, n, a_exp, b_exp, tuple(problems))
    return BlockScheme(a_exp=a_exp, b_exp=b_exp, gamma=gamma, n=n)


def search_block_scheme(gamma: float) -> SchemeExponents | SchemeInfeasible:
    """Find exponents maximising the smallest inequality slack.

    Two linear programs: maximise the common slack s, then among
    near-optimal points prefer the smallest b (smaller small blocks).
    A feasible pair exists exactly when gamma > 1; the finite-n block
    counts are a separate concern checked by `make_block_scheme`.
    """
    from scipy.optimize import linprog

    if gamma <= 0.0:
        return SchemeInfeasible(
            gamma, None, math.nan, math.nan, ("gamma must be positive",)
        )
    # variables (a, b, s); rows: b-slack, a-(b+1)/2, a+gamma*b-2, a-b, 1-a
    a_ub = np.array(
        [
            [0.0, -1.0, 1.0],
            [-1.0, 0.5, 1.0],
            [-1.0, -gamma, 1.0],
            [-1.0, 1.0, 1.0],
            [1.0, 0.0, 1.0],
        ]
    )
    b_ub = np.array([-1.0 / gamma, -0.5, -2.0, 0.0, 1.0])
    bounds = [(0.0, 1.0), (0.0, 1.0), (-1.0, 1.0)]
    res = linprog(c=[0.0, 0.0, -1.0], A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0 or res.x[2] <= _EPS_FEASIBLE:
        return SchemeInfeasible(
            gamma,
            None,
            math.nan,
            math.nan,
            (f"no exponents satisfy the scheme inequalities at gamma = {gamma}",),
        )
    s_target = (1.0 - 1e-6) * float(res.x[2])
    res2 = linprog(
        c=[0.0, 1.0],
        A_ub=a_ub[:, :2],
        b_ub=b_ub - a_ub[:, 2] * s_target,
        bounds=bounds[:2],
        method="highs",
    )
    a_exp, b_exp = (res2.x if res2.status == 0 else res.x[:2])
    problems = scheme_violations(gamma, float(a_exp), float(b_exp))
    if problems:
        return SchemeInfeasible(gamma, None, float(a_exp), float(b_exp), tuple(problems))
    return SchemeExponents(float(a_exp), float(b_exp), s_target)


class IteratedSample(NamedTuple):
    w: np.ndarray  # (d,)
    ww: np.ndarray  # (d, d)
    t: float


def grid_steps(n: int, t_grid) -> np.ndarray:
    return np.floor(np.asarray(t_grid, dtype=np.float64) * n + 1e-9).astype(np.int64)


def iterated_sums(values: np.ndarray, n: int, t_grid) -> tuple[np.ndarray, np.ndarray]:
    """Single-pass rescaled partial and strictly upper iterated sums.

    `values` has shape (length, d).  Returns W (nt, d) and WW (nt, d, d)
    where W(t) = n^{-1/2} sum_{r < [nt]} v_r and
    WW(t) = n^{-1} sum_{r < s < [nt]} v_r (x) v_s, accumulated via
    running sums in O(length) time and O(d^2) space.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[0] < values.shape[1] and values.ndim == 2 and values.shape[0] == 1:
        values = values.T
    steps = grid_steps(n, t_grid)
    if steps.max(initial=0) > len(values):
        raise ValueError("orbit shorter than [n t] for the requested grid")
    d = values.shape[1]
    s = np.zeros(d)
    ww = np.zeros((d, d))
    w_out = np.empty((len(steps), d))
    ww_out = np.empty((len(steps), d, d))
    record: dict[int, list[int]] = {}
    for slot, m in enumerate(steps):
        record.setdefault(int(m), []).append(slot)
    inv_sqrt_n = 1.0 / math.sqrt(n)
    inv_n = 1.0 / n
    for slot in record.get(0, []):
        w_out[slot] = 0.0
        ww_out[slot] = 0.0
    for r in range(int(steps.max(initial=0))):
        v = values[r]
        ww += np.outer(s, v)
        s += v
        for slot in record.get(r + 1, []):
            w_out[slot] = s * inv_sqrt_n
            ww_out[slot] = ww * inv_n
    return w_out, ww_out


def iterated_sums_brute(values: np.ndarray, n: int, t_grid):
    """O(length^2) double-loop reference for `iterated_sums`."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[0] == 1:
        values = values.T
    steps = grid_steps(n, t_grid)
    d = values.shape[1]
    w_out = np.empty((len(steps), d))
    ww_out = np.empty((len(steps), d, d))
    for slot, m in enumerate(steps):
        w = np.zeros(d)
        for r in range(m):
            w += values[r]
        ww = np.zeros((d, d))
        for r in range(m):
            for s_idx in range(r + 1, m):
                ww += np.outer(values[r], values[s_idx])
        w_out[slot] = w / math.sqrt(n)
        ww_out[slot] = ww / n
    return w_out, ww_out


def _empirical_mean(v: Observable, desc: MapDescriptor, length: int, trials: int,
                    cfg: SamplerConfig, workers=None) -> np.ndarray:
    def work(lo, hi):
        ens = FastEnsemble(desc, cfg, np.arange(lo, hi))
        tot = np.zeros(v.arity)
        for _ in range(length):
            vals = v(*ens.coords())
            tot += vals.sum(axis=0) if vals.ndim > 1 else np.array([vals.sum()])
            ens.step()
        return tot

    sums = parallel.run_chunks(work, trials, workers)
    return np.sum(sums, axis=0) / (trials * length)


def _stream_values(v, ens, mean):
    vals = v(*ens.coords())
    if vals.ndim == 1:
        vals = vals[:, None]
    return vals - mean


def iterated_process(
    v: Observable,
    desc: MapDescriptor,
    n: int,
    t_grid,
    cfg: SamplerConfig,
    trials: int = 1,
    workers: int | None = None,
) -> list[list[IteratedSample]]:
    """Rescaled Birkhoff process and iterated sum along map orbits.

    The observable is centered empirically over the whole run before
    the sums are formed.  Returns, per trial, one IteratedSample per
    grid time.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    steps = grid_steps(n, t_grid)
    length = int(steps.max(initial=0))
    mean = _empirical_mean(v, desc, max(length, 1), trials, cfg, workers)
    d = v.arity

    record: dict[int, list[int]] = {}
    for slot, m in enumerate(steps):
        record.setdefault(int(m), []).append(slot)

    def work(lo, hi):
        m = hi - lo
        ens = FastEnsemble(desc, cfg, np.arange(lo, hi))
        s = np.zeros((m, d))
        ww = np.zeros((m, d, d))
        w_out = np.empty((len(steps), m, d))
        ww_out = np.empty((len(steps), m, d, d))
        for slot in record.get(0, []):
            w_out[slot] = 0.0
            ww_out[slot] = 0.0
        for r in range(length):
            val = _stream_values(v, ens, mean)
            ww += s[:, :, None] * val[:, None, :]
            s += val
            ens.step()
            for slot in record.get(r + 1, []):
                w_out[slot] = s / math.sqrt(n)
                ww_out[slot] = ww / n
        return w_out, ww_out

    parts = parallel.run_chunks(work, trials, workers)
    w_all = np.concatenate([p[0] for p in parts], axis=1)
    ww_all = np.concatenate([p[1] for p in parts], axis=1)
    t_arr = np.asarray(t_grid, dtype=np.float64)
    return [
        [
            IteratedSample(w=w_all[slot, i].copy(), ww=ww_all[slot, i].copy(), t=float(t_arr[slot]))
            for slot in range(len(t_arr))
        ]
        for i in range(w_all.shape[1])
    ]


class SmallBlockNorms(NamedTuple):
    norm_i2: float
    norm_j2: float
    norm_j3: float


def _big_mask(scheme: BlockScheme, length: int) -> np.ndarray:
    r = np.arange(length)
    period = scheme.p + scheme.q
    return (r < scheme.k * period) & (r % period < scheme.p)


def small_block_terms(
    v: Observable,
    desc: MapDescriptor,
    n: int,
    scheme: BlockScheme,
    t: float,
    trials: int,
    cfg: SamplerConfig,
    workers: int | None = None,
) -> SmallBlockNorms:
    """Monte Carlo L1 norms of the three remainder terms at time t.

    I2 collects the rescaled Birkhoff sum over indices outside big
    blocks; J2 and J3 collect the iterated-sum terms whose first or
    second index falls outside them (entrywise l1 norms, averaged over
    trials).
    """
    if not scheme.feasible:
        raise ValueError("scheme must be feasible")
    if scheme.n != n:
        raise ValueError("scheme was built for a different n")
    length = int(grid_steps(n, [t])[0])
    d = v.arity
    if length == 0:
        return SmallBlockNorms(0.0, 0.0, 0.0)
    mean = _empirical_mean(v, desc, length, trials, cfg, workers)
    big = _big_mask(scheme, length)

    def work(lo, hi):
        m = hi - lo
        ens = FastEnsemble(desc, cfg, np.arange(lo, hi))
        t_all = np.zeros((m, d))
        t_small = np.zeros((m, d))
        i2 = np.zeros((m, d))
        j2 = np.zeros((m, d, d))
        j3 = np.zeros((m, d, d))
        for r in range(length):
            val = _stream_values(v, ens, mean)
            if big[r]:
                j2 += t_small[:, :, None] * val[:, None, :]
            else:
                i2 += val
                j3 += t_all[:, :, None] * val[:, None, :]
                t_small += val
            t_all += val
            ens.step()
        return (
            np.abs(i2).sum(axis=1) / math.sqrt(n),
            np.abs(j2).sum(axis=(1, 2)) / n,
            np.abs(j3).sum(axis=(1, 2)) / n,
        )

    parts = parallel.run_chunks(work, trials, workers)
    i2 = np.concatenate([p[0] for p in parts])
    j2 = np.concatenate([p[1] for p in parts])
    j3 = np.concatenate([p[2] for p in parts])
    return SmallBlockNorms(float(i2.mean()), float(j2.mean()), float(j3.mean()))


class DiagonalSum(NamedTuple):
    estimate: np.ndarray  # (d, d)
    target: np.ndarray  # (d, d)
    stderr: np.ndarray  # (d, d)
    target_stderr: np.ndarray  # (d, d)


def diagonal_sum(
    v: Observable,
    desc: MapDescriptor,
    n: int,
    scheme: BlockScheme,
    t: float,
    trials: int,
    cfg: SamplerConfig,
    workers: int | None = None,
    gk_max_lag: int = 256,
    gk_samples: int = 64,
) -> DiagonalSum:
    """Within-big-block iterated sums against the drift-series target.

    Sums the per-block iterated sums over the first [kt] big blocks,
    normalised by n, and compares the ensemble mean with t times the
    drift matrix obtained from the lagged-autocovariance series.
    """
    if not scheme.feasible:
        raise ValueError("scheme must be feasible")
    d = v.arity
    kt = int(scheme.k * t + 1e-9)
    if kt == 0:
        zero = np.zeros((d, d))
        return DiagonalSum(zero, zero.copy(), zero.copy(), zero.copy())
    period = scheme.p + scheme.q
    length = (kt - 1) * period + scheme.p
    mean = _empirical_mean(v, desc, length, trials, cfg, workers)

    def work(lo, hi):
        m = hi - lo
        ens = FastEnsemble(desc, cfg, np.arange(lo, hi))
        local_s = np.zeros((m, d))
        local_ww = np.zeros((m, d, d))
        total = np.zeros((m, d, d))
        for r in range(length):
            pos = r % period
            if pos == 0:
                local_s[:] = 0.0
                local_ww[:] = 0.0
            if pos < scheme.p:
                val = _stream_values(v, ens, mean)
                local_ww += local_s[:, :, None] * val[:, None, :]
                local_s += val
                if pos == scheme.p - 1:
                    total += local_ww
            ens.step()
        return total / n

    parts = parallel.run_chunks(work, trials, workers)
    per_trial = np.concatenate(parts, axis=0)
    estimate = per_trial.mean(axis=0)
    stderr = per_trial.std(axis=0, ddof=1) / math.sqrt(trials)
    gk = green_kubo(v, desc, gk_max_lag, gk_samples, cfg, workers)
    return DiagonalSum(
        estimate=estimate,
        target=t * gk.drift_e,
        stderr=stderr,
        target_stderr=t * gk.drift_stderr,
    )


def triangular_array_demo(
    sigma: np.ndarray,
    p_exp: float,
    k_n: int,
    trials: int,
    cfg: SamplerConfig,
    workers: int | None = None,
) -> EnsembleStats:
    """Terminal statistics of the independent Gaussian array harness.

    Draws k_n i.i.d. centred Gaussian vectors with covariance
    sigma / k_n per trial and returns ensemble statistics of the row sum
    and the strictly upper iterated sum at time 1, flattened as
    coordinates (W_1..W_d, WW_11..WW_dd).  The iterated sum uses the
    exact identity 2 WW = S (x) S - sum_i chi_i (x) chi_i, so no
    ordering is involved.  A moment-condition diagnostic at exponent
    p_exp is checked and warned about if it is not small.
    """
    import warnings

    from .sdelimit import psd_sqrt

    if p_exp <= 1.0:
        raise ValueError("p_exp must be > 1")
    if k_n < 1:
        raise ValueError("k_n must be >= 1")
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    d = sigma.shape[0]
    root = psd_sqrt(sigma) / math.sqrt(k_n)
    base = rng.seed_state(cfg.root_seed, cfg.stream_id, rng.ROLE_GAUSS)

    block = max(1, 2_000_000 // max(d, 1) // 512)

    def work(lo, hi):
        m = hi - lo
        keys = rng.key_array(base, np.arange(lo, hi, dtype=np.uint64))
        s = np.zeros((m, d))
        q = np.zeros((m, d, d))
        lyap = 0.0
        for start in range(0, k_n, block):
            stop = min(start + block, k_n)
            counters = np.arange(start * d, stop * d, dtype=np.uint64).reshape(-1, d)
            u = rng.absorb(keys[:, None, None], counters[None, :, :]) >> np.uint64(11)
            from scipy.special import ndtri

            z = ndtri((u.astype(np.float64) + 0.5) * 2.0**-53)
            chi = z @ root.T  # (m, steps, d)
            s += chi.sum(axis=1)
            q += np.einsum("msi,msj->mij", chi, chi)
            lyap += float(np.sum(np.abs(chi).sum(axis=2) ** (2.0 * p_exp)))
        ww = 0.5 * (s[:, :, None] * s[:, None, :] - q)
        return s, ww, lyap

    parts = parallel.run_chunks(work, trials, workers)
    s_all = np.concatenate([p[0] for p in parts], axis=0)
    ww_all = np.concatenate([p[1] for p in parts], axis=0)
    lyap_sum = sum(p[2] for p in parts) / trials
    if lyap_sum > 0.1 and k_n > 1:
        warnings.warn(
            f"moment condition diagnostic sum(E|chi|^(2p)) = {lyap_sum:.3g} "
            "is not small; k_n may be too low for this p_exp",
            RuntimeWarning,
        )
    values = np.concatenate([s_all, ww_all.reshape(len(s_all), d * d)], axis=1)
    return EnsembleStats.from_values(np.array([1.0]), values[None, :, :])
