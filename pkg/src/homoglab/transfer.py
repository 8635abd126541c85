"""Binned transfer operator for the interval maps.

The unit interval is split into equal bins; the operator matrix entry
(i, j) is the fraction of a deterministic stratified grid in bin i that
one map step sends into bin j.  Probability-mass row vectors evolve as
rho <- rho . matrix.  The invariant density comes from power iteration,
and observable decay is measured in the invariant-measure normalisation
(evolve the signed mass rho * (v - mean), read back in units of rho),
with the sup taken over the bins covering [1/2, 1], the inducing window
of the intermittent map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .maps import MapDescriptor, MapKind, lsv_step_vec
from .observables import Observable
from .statistics import DecayFit, decay_fit


@dataclass(frozen=True)
class UlamOperator:
    bins: int
    matrix: sp.csr_matrix  # row-stochastic transition matrix
    map: MapDescriptor
    samples_per_bin: int

    def __post_init__(self):
        sums = np.asarray(self.matrix.sum(axis=1)).ravel()
        if np.max(np.abs(sums - 1.0)) > 1e-12:
            raise ValueError("rows must sum to 1")
        if self.matrix.nnz and self.matrix.data.min() < 0.0:
            raise ValueError("entries must be nonnegative")

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def propagate(self, mass: np.ndarray) -> np.ndarray:
        """One application to a row vector of signed bin masses."""
        return self.matrix.T @ mass

    def bin_midgrid(self) -> np.ndarray:
        """Stratified sample points, shape (bins, samples_per_bin)."""
        offsets = (np.arange(self.samples_per_bin) + 0.5) / self.samples_per_bin
        starts = np.arange(self.bins)[:, None]
        return (starts + offsets[None, :]) / self.bins


def ulam_matrix(
    desc: MapDescriptor, bins: int, samples_per_bin: int = 64
) -> UlamOperator:
    """Transition matrix from a stratified one-step push of each bin."""
    if desc.kind not in (MapKind.LSV, MapKind.DOUBLING):
        raise ValueError("binned operator supports the interval maps only")
    if bins < 64 or bins & (bins - 1):
        raise ValueError("bins must be a power of two >= 64")
    if samples_per_bin < 1:
        raise ValueError("samples_per_bin must be >= 1")
    offsets = (np.arange(samples_per_bin) + 0.5) / samples_per_bin
    points = ((np.arange(bins)[:, None] + offsets[None, :]) / bins).ravel()
    if desc.kind is MapKind.LSV:
        images = lsv_step_vec(points, desc.alpha)
    else:
        images = (2.0 * points) % 1.0
    cols = np.minimum((images * bins).astype(np.int64), bins - 1)
    rows = np.repeat(np.arange(bins, dtype=np.int64), samples_per_bin)
    mat = sp.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(bins, bins)
    ).tocsr()
    mat.data /= samples_per_bin
    mat.sum_duplicates()
    return UlamOperator(bins=bins, matrix=mat, map=desc, samples_per_bin=samples_per_bin)


def invariant_density(op: UlamOperator, tol: float = 1e-12) -> np.ndarray:
    """Stationary bin masses by power iteration to L1 tolerance `tol`."""
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    rho = np.full(op.bins, 1.0 / op.bins)
    for _ in range(10**5):
        nxt = op.propagate(rho)
        if np.abs(nxt - rho).sum() <= tol:
            nxt = np.maximum(nxt, 0.0)
            return nxt / nxt.sum()
        rho = nxt
    raise RuntimeError(f"power iteration did not reach tol={tol} in 1e5 steps")


class TransferDecay(NamedTuple):
    deviations: np.ndarray  # sup deviation on [1/2, 1] at k = 1..k_max
    fit: DecayFit


def transfer_decay(
    op: UlamOperator,
    v: Observable,
    k_max: int,
    tol: float = 1e-12,
    fit_min_k: int | None = None,
) -> TransferDecay:
    """Sup-norm decay of the evolved observable over the inducing window.

    The observable is binned by stratified averaging, centred at its
    invariant mean, evolved as a signed mass vector, and the deviation
    at each step is the largest bin value of (evolved mass) / rho over
    the bins covering [1/2, 1].  The power-law fit starts at
    `fit_min_k` (default k_max / 10) to skip the initial transient.
    """
    if k_max < 10:
        raise ValueError("k_max must be >= 10")
    if v.arity != 1:
        raise ValueError("v must be scalar")
    rho = invariant_density(op, tol)
    f = v(op.bin_midgrid().ravel()).reshape(op.bins, -1).mean(axis=1)
    mean = float(rho @ f)
    mass = rho * (f - mean)
    base = np.arange(op.bins // 2, op.bins)
    rho_base = rho[base]
    devs = np.empty(k_max)
    for k in range(k_max):
        mass = op.propagate(mass)
        devs[k] = np.max(np.abs(mass[base] / rho_base))
    lo = max(2, k_max // 10) if fit_min_k is None else int(fit_min_k)
    ks = np.arange(1, k_max + 1)
    sel = ks >= lo
    fit = decay_fit(ks[sel], devs[sel])
    return TransferDecay(deviations=devs, fit=fit)
