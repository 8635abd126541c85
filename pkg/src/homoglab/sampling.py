"""Sampling from physical measures and family-perturbation diagnostics.

Initial conditions are drawn from the physical measure of a fast map by
burning in a uniform draw; sample i of stream s is keyed by
mix64(root_seed, s, role, i), so parallel execution order never affects
results.  The module also provides the measure-lift estimator for the
skew product (sup over a fibre grid of an observable pushed m steps
forward) and the two family diagnostics: statistical stability of the
physical measures and the probability of trajectory discrepancy between
a perturbed map and its limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import rng
from .maps import (
    DoublingBitState,
    MapDescriptor,
    MapKind,
    baker_step_vec,
    catmap_step_vec,
    lsv_inverse_left_vec,
    lsv_step_vec,
)
from .observables import Observable

# Fibre contraction washes out the fibre law at polynomial speed, so a
# short joint tail after the base-only burn-in leaves a bias below 1e-5
# for every alpha < 1/2.
_FIBER_BURN = 256

_MIN_BURN_IN = 1000


@dataclass(frozen=True)
class SamplerConfig:
    root_seed: int
    stream_id: int = 0
    burn_in: int = 10_000

    def __post_init__(self):
        if self.burn_in < _MIN_BURN_IN:
            raise ValueError(f"burn_in must be >= {_MIN_BURN_IN}")

    def with_stream(self, stream_id: int) -> "SamplerConfig":
        return SamplerConfig(self.root_seed, stream_id, self.burn_in)


def member_keys(cfg: SamplerConfig, indices: np.ndarray, role: int = rng.ROLE_INIT):
    base = rng.seed_state(cfg.root_seed, cfg.stream_id, role)
    return rng.key_array(base, np.asarray(indices, dtype=np.uint64))


class FastEnsemble:
    """Vectorised ensemble of fast-map orbits, one member per sample index."""

    def __init__(
        self,
        desc: MapDescriptor,
        cfg: SamplerConfig,
        indices: np.ndarray,
        role: int = rng.ROLE_INIT,
        burn_in: int | None = None,
    ):
        self.desc = desc
        self.size = len(indices)
        keys = member_keys(cfg, indices, role)
        burn = cfg.burn_in if burn_in is None else burn_in
        kind = desc.kind
        if kind is MapKind.DOUBLING:
            self._bits = DoublingBitState(keys, offset=burn)
            self._x = self._bits.value()
        elif kind is MapKind.LSV:
            self._x = rng.uniform01(keys, 0)
            for _ in range(burn):
                self._x = lsv_step_vec(self._x, desc.alpha)
        elif kind is MapKind.CAT_MAP:
            self._x = rng.uniform01(keys, 0)
            self._z = rng.uniform01(keys, 1)
            for _ in range(burn):
                self._x, self._z = catmap_step_vec(self._x, self._z)
        elif kind is MapKind.INTERMITTENT_BAKER:
            self._x = rng.uniform01(keys, 0)
            self._z = rng.uniform01(keys, 1)
            joint = min(burn, _FIBER_BURN)
            for _ in range(burn - joint):
                self._x = lsv_step_vec(self._x, desc.alpha)
            for _ in range(joint):
                self._x, self._z = baker_step_vec(self._x, self._z, desc.alpha)
        else:  # pragma: no cover
            raise ValueError(kind)

    def step(self) -> None:
        kind = self.desc.kind
        if kind is MapKind.DOUBLING:
            self._bits.step()
            self._x = self._bits.value()
        elif kind is MapKind.LSV:
            self._x = lsv_step_vec(self._x, self.desc.alpha)
        elif kind is MapKind.CAT_MAP:
            self._x, self._z = catmap_step_vec(self._x, self._z)
        else:
            self._x, self._z = baker_step_vec(self._x, self._z, self.desc.alpha)

    def coords(self) -> tuple[np.ndarray, ...]:
        if self.desc.dim == 1:
            return (self._x,)
        return (self._x, self._z)


def sample_physical_ensemble(
    desc: MapDescriptor,
    cfg: SamplerConfig,
    count: int,
    role: int = rng.ROLE_INIT,
) -> tuple[np.ndarray, ...]:
    """Coordinates of `count` approximate physical-measure samples."""
    ens = FastEnsemble(desc, cfg, np.arange(count), role=role)
    return ens.coords()


def sample_physical(desc: MapDescriptor, cfg: SamplerConfig):
    """One physical-measure sample (index 0 of the configured stream)."""
    coords = sample_physical_ensemble(desc, cfg, 1)
    if desc.dim == 1:
        return float(coords[0][0])
    return float(coords[0][0]), float(coords[1][0])


class Estimate(NamedTuple):
    estimate: float
    stderr: float


def _mean_sem(values: np.ndarray) -> Estimate:
    n = len(values)
    mean = float(np.mean(values))
    sem = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return Estimate(mean, sem)


def _fiber_grid(z_grid: int) -> np.ndarray:
    if z_grid < 2:
        raise ValueError("z_grid must be >= 2")
    # uniform interior grid plus both endpoints
    return np.unique(np.concatenate([np.linspace(0.0, 1.0, z_grid), [0.0, 1.0]]))


def _evolve_skew(x, z, alpha: float, steps: int):
    """Evolve base array x (m,) and fibre block z (m, nz) jointly."""
    for _ in range(steps):
        right = x >= 0.5
        z = np.where(right[:, None], 0.5 * (z + 1.0), z)
        left = ~right
        if np.any(left):
            zl = z[left]
            z[left] = lsv_inverse_left_vec(zl.ravel(), alpha).reshape(zl.shape)
        x = lsv_step_vec(x, alpha)
    return x, z


def lift_integral_estimate(
    phi: Observable,
    desc: MapDescriptor,
    m: int,
    samples: int,
    cfg: SamplerConfig,
    z_grid: int = 64,
) -> Estimate:
    """Estimate the lifted integral of phi over the skew product.

    Draws base samples, pushes the whole fibre grid above each sample m
    steps forward, takes the max of phi over the grid and averages.  For
    phi depending only on the base coordinate this reduces exactly to
    the plain base estimate.  The fibre maps are 1-Lipschitz, so the
    grid max undershoots the true sup by at most the grid spacing times
    the Lipschitz bound of phi.
    """
    if desc.kind is not MapKind.INTERMITTENT_BAKER:
        raise ValueError("lift estimator is defined for the skew product")
    if m < 1:
        raise ValueError("m must be >= 1")
    if phi.arity != 1:
        raise ValueError("phi must be scalar")
    (x,) = sample_physical_ensemble(
        MapDescriptor(MapKind.LSV, desc.alpha), cfg, samples
    )
    zg = _fiber_grid(z_grid)
    z = np.broadcast_to(zg, (samples, len(zg))).copy()
    x, z = _evolve_skew(x.copy(), z, desc.alpha, m)
    vals = phi(np.broadcast_to(x[:, None], z.shape), z)
    return _mean_sem(vals.max(axis=1))


def stability_probe(
    phi: Observable,
    alpha_seq: list[float],
    samples: int,
    cfg: SamplerConfig,
) -> list[Estimate]:
    """Physical-measure integrals of phi along a parameter sequence.

    Every entry reuses the same sample indices, so identical parameters
    give identical estimates and differences along the sequence are not
    masked by fresh Monte Carlo noise.
    """
    if not alpha_seq:
        raise ValueError("alpha_seq must be nonempty")
    if any(not 0.0 < a < 0.5 for a in alpha_seq):
        raise ValueError("all alpha must lie in (0, 1/2)")
    out = []
    for alpha in alpha_seq:
        desc = MapDescriptor(MapKind.INTERMITTENT_BAKER, alpha)
        coords = sample_physical_ensemble(desc, cfg, samples)
        out.append(_mean_sem(phi(*coords)))
    return out


def a2_probe(
    j: int,
    a: float,
    alpha_n: float,
    alpha_inf: float,
    samples: int,
    cfg: SamplerConfig,
    z_grid: int = 64,
) -> float:
    """Fraction of base samples whose worst-fibre discrepancy at time j exceeds a.

    Base samples follow the perturbed parameter's measure; both skew
    products are run from the same initial data and compared in the l1
    metric on the square, with the sup over fibres taken on a grid.
    """
    if j < 0:
        raise ValueError("j must be >= 0")
    if a <= 0.0:
        raise ValueError("a must be > 0")
    if j == 0:
        return 0.0
    (x0,) = sample_physical_ensemble(
        MapDescriptor(MapKind.LSV, alpha_n), cfg, samples
    )
    zg = _fiber_grid(z_grid)
    z0 = np.broadcast_to(zg, (samples, len(zg)))
    x1, z1 = _evolve_skew(x0.copy(), z0.copy(), alpha_n, j)
    x2, z2 = _evolve_skew(x0.copy(), z0.copy(), alpha_inf, j)
    sup_disc = np.abs(x1 - x2) + np.abs(z1 - z2).max(axis=1)
    return float(np.mean(sup_disc > a))
