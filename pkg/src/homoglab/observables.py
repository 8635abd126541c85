"""Test functions evaluated along orbits.

An Observable wraps a vectorised evaluator together with the metadata
the estimators care about: arity (scalar or vector valued), a Holder
exponent, and a declared mean-zero flag.  The evaluator receives the
leading `domain_dim` coordinate arrays of whatever point the map
produces, so an observable of the first coordinate works unchanged on
the square.  Boundedness is checked on a fixed grid at construction and
the observed bound recorded; the Holder seminorm can be estimated on
the same grid but is reporting-only and never gates computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_GRID_POINTS = 10**4


@dataclass(frozen=True)
class Observable:
    evaluator: Callable[..., np.ndarray]
    arity: int = 1
    eta: float = 1.0
    mean_zero: bool = False
    domain_dim: int = 1
    name: str = ""
    bound: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError("arity must be >= 1")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError("eta must lie in (0, 1]")
        if self.domain_dim not in (1, 2):
            raise ValueError("domain_dim must be 1 or 2")
        vals = self._grid_values()
        if not np.all(np.isfinite(vals)):
            raise ValueError("evaluator is not finite on the check grid")
        object.__setattr__(self, "bound", float(np.max(np.abs(vals))))

    def _grid(self):
        if self.domain_dim == 1:
            return (np.linspace(0.0, 1.0, _GRID_POINTS),)
        side = int(np.sqrt(_GRID_POINTS))
        g = np.linspace(0.0, 1.0, side)
        xx, zz = np.meshgrid(g, g)
        return xx.ravel(), zz.ravel()

    def _grid_values(self) -> np.ndarray:
        return np.asarray(self.evaluator(*self._grid()), dtype=np.float64)

    def __call__(self, *coords: np.ndarray) -> np.ndarray:
        """Evaluate on coordinate arrays, ignoring trailing coordinates."""
        out = self.evaluator(*coords[: self.domain_dim])
        return np.asarray(out, dtype=np.float64)

    def seminorm_estimate(self, points: int = 2048) -> float:
        """Grid estimate of the eta-Holder seminorm (diagnostic only).

        Uses adjacent grid pairs; on the square the l1 metric is used.
        """
        if self.domain_dim == 1:
            g = np.linspace(0.0, 1.0, points)
            v = np.atleast_2d(self(g).T).T.reshape(points, -1)
            num = np.abs(np.diff(v, axis=0)).sum(axis=1)
            den = np.diff(g) ** self.eta
            return float(np.max(num / den))
        side = int(np.sqrt(points))
        g = np.linspace(0.0, 1.0, side)
        xx, zz = np.meshgrid(g, g)
        v = self(xx.ravel(), zz.ravel()).reshape(side, side, -1)
        h = g[1] - g[0]
        dx = np.abs(np.diff(v, axis=1)).sum(axis=-1).max()
        dz = np.abs(np.diff(v, axis=0)).sum(axis=-1).max()
        return float(max(dx, dz) / h**self.eta)


def stack(parts: list[Observable], name: str = "") -> Observable:
    """Combine scalar observables into one vector observable."""
    if any(p.arity != 1 for p in parts):
        raise ValueError("stack expects scalar observables")
    dim = max(p.domain_dim for p in parts)

    def ev(*coords):
        return np.stack([p(*coords) for p in parts], axis=-1)

    return Observable(
        evaluator=ev,
        arity=len(parts),
        eta=min(p.eta for p in parts),
        mean_zero=all(p.mean_zero for p in parts),
        domain_dim=dim,
        name=name or "+".join(p.name for p in parts),
    )


def shifted(obs: Observable, offset: np.ndarray | float, name: str = "") -> Observable:
    """Observable minus a constant offset (used for empirical centering)."""
    off = np.asarray(offset, dtype=np.float64)

    def ev(*coords):
        return obs(*coords) - off

    return Observable(
        evaluator=ev,
        arity=obs.arity,
        eta=obs.eta,
        mean_zero=True,
        domain_dim=obs.domain_dim,
        name=name or (obs.name + "_centered"),
    )


BUILTINS: dict[str, Observable] = {
    "cos2pix": Observable(
        evaluator=lambda x: np.cos(2.0 * np.pi * x),
        eta=1.0,
        mean_zero=True,
        name="cos2pix",
    ),
    "sin2pix": Observable(
        evaluator=lambda x: np.sin(2.0 * np.pi * x),
        eta=1.0,
        mean_zero=True,
        name="sin2pix",
    ),
    "coordinate": Observable(
        evaluator=lambda x: np.asarray(x, dtype=np.float64),
        eta=1.0,
        mean_zero=False,
        name="coordinate",
    ),
    "centered_coordinate": Observable(
        evaluator=lambda x: np.asarray(x, dtype=np.float64) - 0.5,
        eta=1.0,
        mean_zero=True,
        name="centered_coordinate",
    ),
}


def builtin(name: str) -> Observable:
    try:
        return BUILTINS[name]
    except KeyError:
        raise KeyError(
            f"unknown observable {name!r}; built-ins: {sorted(BUILTINS)}"
        ) from None
