"""Fast dynamical systems on the interval and the square.

Implements the intermittent interval map with an indifferent fixed point
at 0 (left branch g(x) = x(1 + 2^a x^a), right branch 2x - 1), its
invertible two-dimensional skew-product extension with contracting
fibres, and two exactly solvable validation maps (binary doubling and
the hyperbolic torus automorphism) used to calibrate estimators.

Scalar operations are pure float functions.  Vectorised kernels
(`*_vec`) operate on numpy arrays and are what the ensemble code uses.

Long float64 orbits of the doubling map are degenerate: 2x mod 1 is
exact in binary arithmetic, so the mantissa drains and every orbit hits
0 within ~53 steps.  Ensemble simulation therefore represents doubling
orbits as a sliding 64-bit window over a counter-based random bitstream
(`DoublingBitState`), which has exactly uniform marginals and realises
the map's shift dynamics to below double precision.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import rng

_DOMAIN_TOL = 1e-12
_INV_TOL = 1e-14


class MapKind(str, enum.Enum):
    LSV = "LSV"
    INTERMITTENT_BAKER = "IntermittentBaker"
    DOUBLING = "Doubling"
    CAT_MAP = "CatMap"


class Branch(str, enum.Enum):
    LEFT = "Left"
    RIGHT = "Right"


_PARAMETRIC = (MapKind.LSV, MapKind.INTERMITTENT_BAKER)


@dataclass(frozen=True)
class MapDescriptor:
    """A fast map: kind plus intermittency parameter where applicable.

    The intermittent maps are defined for alpha in (0, 1).  Diffusive
    limit theory needs alpha < 1/2; the operations that depend on it
    (measure-stability probes, return-time tails, slow-process limits)
    enforce that range at their own boundary, so the transfer-operator
    study at alpha = 1/2 stays available.  `alpha_limit` optionally
    records the limiting parameter when the descriptor stands for a
    member of a family alpha_n -> alpha_inf.
    """

    kind: MapKind
    alpha: float | None = None
    alpha_limit: float | None = None

    def __post_init__(self):
        kind = MapKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in _PARAMETRIC:
            if self.alpha is None:
                raise ValueError(f"{kind.value} requires parameter alpha")
            if not (0.0 < self.alpha < 1.0):
                raise ValueError(
                    f"alpha={self.alpha!r} outside (0, 1) for {kind.value}"
                )
            if self.alpha_limit is not None and not (0.0 < self.alpha_limit < 1.0):
                raise ValueError(f"alpha_limit={self.alpha_limit!r} outside (0, 1)")
        else:
            if self.alpha is not None or self.alpha_limit is not None:
                raise ValueError(f"{kind.value} carries no parameter")

    @property
    def dim(self) -> int:
        return 1 if self.kind in (MapKind.LSV, MapKind.DOUBLING) else 2

    def to_config(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.alpha_limit is not None:
            out["alpha_limit"] = self.alpha_limit
        return out

    @classmethod
    def from_config(cls, block: dict) -> "MapDescriptor":
        return cls(
            kind=MapKind(block["kind"]),
            alpha=block.get("alpha"),
            alpha_limit=block.get("alpha_limit"),
        )


def _clamp01(v: float) -> float:
    # round-off excursions are below 1e-15; anything larger is a bug upstream
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


def _check_unit(x: float, name: str = "x") -> float:
    if x < -_DOMAIN_TOL or x > 1.0 + _DOMAIN_TOL:
        raise ValueError(f"{name}={x!r} outside [0, 1]")
    return _clamp01(x)


def _g(x: float, alpha: float) -> float:
    # left branch written as x + (2x)^(1+a)/2: exact at both endpoints
    return x + 0.5 * (2.0 * x) ** (1.0 + alpha)


def _g_prime(x: float, alpha: float) -> float:
    return 1.0 + (1.0 + alpha) * (2.0 * x) ** alpha


def lsv_step(x: float, alpha: float) -> float:
    """One step of the intermittent interval map.

    The branch boundary x = 1/2 belongs to the right branch.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha={alpha!r} outside (0, 1)")
    x = _check_unit(x)
    if x < 0.5:
        return _clamp01(_g(x, alpha))
    return _clamp01(2.0 * x - 1.0)


def lsv_inverse_branch(y: float, alpha: float, branch: Branch) -> float:
    """Inverse of the chosen branch at y.

    The left branch has no closed-form inverse; it is bracketed on
    [0, 1/2] by bisection to 1e-14 and polished with one Newton step
    (the branch is strictly increasing, so bisection cannot fail).
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha={alpha!r} outside (0, 1)")
    y = _check_unit(y, "y")
    if Branch(branch) is Branch.RIGHT:
        return 0.5 * (y + 1.0)
    lo, hi = 0.0, 0.5
    while hi - lo > _INV_TOL:
        mid = 0.5 * (lo + hi)
        if _g(mid, alpha) < y:
            lo = mid
        else:
            hi = mid
    z = 0.5 * (lo + hi)
    z -= (_g(z, alpha) - y) / _g_prime(z, alpha)
    if z < 0.0:
        return 0.0
    return 0.5 if z > 0.5 else z


def baker_step(p: tuple[float, float], alpha: float) -> tuple[float, float]:
    """One step of the skew-product extension on the unit square.

    The base coordinate moves by `lsv_step` (same code path); the fibre
    coordinate moves by the inverse branch selected by the base point.
    """
    x, z = p
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha={alpha!r} outside (0, 1)")
    x = _check_unit(x)
    z = _check_unit(z, "z")
    if x < 0.5:
        return lsv_step(x, alpha), lsv_inverse_branch(z, alpha, Branch.LEFT)
    return lsv_step(x, alpha), 0.5 * (z + 1.0)


def validation_step(p, kind: MapKind):
    """One step of a validation map: Doubling on [0,1] or CatMap on [0,1]^2."""
    kind = MapKind(kind)
    if kind is MapKind.DOUBLING:
        x = _check_unit(float(p))
        return _clamp01(2.0 * x % 1.0)
    if kind is MapKind.CAT_MAP:
        x, y = p
        x = _check_unit(x)
        y = _check_unit(y, "y")
        return _clamp01((2.0 * x + y) % 1.0), _clamp01((x + y) % 1.0)
    raise ValueError(f"{kind.value} is not a validation map")


def map_step(desc: MapDescriptor, p):
    """One step of the map identified by `desc` at point `p`."""
    if desc.kind is MapKind.LSV:
        return lsv_step(float(p), desc.alpha)
    if desc.kind is MapKind.INTERMITTENT_BAKER:
        return baker_step(p, desc.alpha)
    return validation_step(p, desc.kind)


def iterate(desc: MapDescriptor, p, k: int):
    """k-fold composition; iterate(desc, p, 0) is the identity.

    Implemented as a loop so arbitrarily large k cannot overflow the
    stack.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    for _ in range(k):
        p = map_step(desc, p)
    return p


# ---------------------------------------------------------------------------
# vectorised kernels


def lsv_step_vec(x: np.ndarray, alpha: float) -> np.ndarray:
    """Intermittent map applied elementwise; input assumed in [0, 1]."""
    u = 2.0 * x
    out = u - 1.0
    left = u < 1.0
    ul = u[left]
    out[left] = 0.5 * (ul + ul ** (1.0 + alpha))
    return out


def lsv_inverse_left_vec(y: np.ndarray, alpha: float) -> np.ndarray:
    """Left-branch inverse, elementwise bisection to 1e-14 plus one Newton step."""
    lo = np.zeros_like(y)
    hi = np.full_like(y, 0.5)
    # 46 halvings take the bracket from 0.5 below 1e-14
    for _ in range(46):
        mid = 0.5 * (lo + hi)
        gm = mid + 0.5 * (2.0 * mid) ** (1.0 + alpha)
        low = gm < y
        lo = np.where(low, mid, lo)
        hi = np.where(low, hi, mid)
    z = 0.5 * (lo + hi)
    g = z + 0.5 * (2.0 * z) ** (1.0 + alpha)
    gp = 1.0 + (1.0 + alpha) * (2.0 * z) ** alpha
    z -= (g - y) / gp
    return np.clip(z, 0.0, 0.5)


def baker_step_vec(x: np.ndarray, z: np.ndarray, alpha: float):
    """Skew-product step on coordinate arrays; branch chosen by the base point."""
    right = x >= 0.5
    z_new = np.empty_like(z)
    z_new[right] = 0.5 * (z[right] + 1.0)
    z_new[~right] = lsv_inverse_left_vec(z[~right], alpha)
    return lsv_step_vec(x, alpha), z_new


def catmap_step_vec(x: np.ndarray, y: np.ndarray):
    return (2.0 * x + y) % 1.0, (x + y) % 1.0


class DoublingBitState:
    """Doubling-map ensemble state as a 64-bit window over a random bitstream.

    Member i carries an infinite bitstream whose 64-bit blocks are
    mix64(key_i, block_index); the orbit point at offset k is the window
    of bits k..k+63 read as a fraction.  Advancing the window by one bit
    is exactly the map's shift action, and any offset can be entered
    directly, so burn-in costs nothing.
    """

    __slots__ = ("keys", "m", "_buf", "_avail", "_next_block")

    def __init__(self, keys: np.ndarray, offset: int = 0):
        self.keys = keys
        self.jump(offset)

    def jump(self, offset: int) -> None:
        q, r = divmod(int(offset), 64)
        b0 = rng.absorb(self.keys, q)
        b1 = rng.absorb(self.keys, q + 1)
        if r == 0:
            self.m = b0.copy()
            self._buf = b1
            self._avail = 64
        else:
            self.m = (b0 << np.uint64(r)) | (b1 >> np.uint64(64 - r))
            self._buf = b1 << np.uint64(r)
            self._avail = 64 - r
        self._next_block = q + 2

    def step(self) -> None:
        if self._avail == 0:
            self._buf = rng.absorb(self.keys, self._next_block)
            self._next_block += 1
            self._avail = 64
        bit = self._buf >> np.uint64(63)
        self._buf = self._buf << np.uint64(1)
        self._avail -= 1
        self.m = (self.m << np.uint64(1)) | bit

    def value(self) -> np.ndarray:
        return self.m.astype(np.float64) * 2.0**-64
