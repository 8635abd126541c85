"""Counter-based random number derivation.

Every random quantity in the package is a pure function of
(root_seed, stream_id, role, index, counter...), obtained by folding the
words into a 64-bit state with the splitmix64 finalizer.  There is no
sequential generator state, so results never depend on evaluation order
or on how work is split across workers.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_SEED = 0x9E3779B97F4A7C15
_MULT1 = 0xBF58476D1CE4E5B9
_MULT2 = 0x94D049BB133111EB

# Role tags keep unrelated draw families on disjoint counter lanes.
ROLE_INIT = 0
ROLE_SPLIT = 1
ROLE_GAUSS = 2
ROLE_BITS = 3


def mix64(*words: int) -> int:
    """Fold integer words into one well-mixed 64-bit value."""
    h = _SEED
    for w in words:
        h ^= w & _MASK
        h = (h * _MULT1) & _MASK
        h ^= h >> 27
        h = (h * _MULT2) & _MASK
        h ^= h >> 31
    return h


def absorb(state: np.ndarray, word) -> np.ndarray:
    """Vectorised mixing round: fold `word` into a uint64 state array.

    `word` may be a Python int or a uint64 array broadcastable to `state`.
    Matches mix64 bit for bit when applied word by word.
    """
    h = state ^ np.asarray(word, dtype=np.uint64)
    h = h * np.uint64(_MULT1)
    h ^= h >> np.uint64(27)
    h = h * np.uint64(_MULT2)
    h ^= h >> np.uint64(31)
    return h


def seed_state(*words: int) -> np.uint64:
    """Scalar uint64 state after absorbing `words`, for later vector absorbs."""
    return np.uint64(mix64(*words))


def key_array(base: np.uint64, indices: np.ndarray) -> np.ndarray:
    """Per-index keys: absorb each index into the common base state."""
    state = np.full(indices.shape, base, dtype=np.uint64)
    return absorb(state, indices.astype(np.uint64))


def uniform01(keys: np.ndarray, counter: int) -> np.ndarray:
    """Uniform doubles in (0, 1), one per key, at the given counter."""
    bits = absorb(keys, counter) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def standard_normal(keys: np.ndarray, counter: int) -> np.ndarray:
    """Standard normal via the inverse CDF of a counter-based uniform."""
    from scipy.special import ndtri

    return ndtri(uniform01(keys, counter))
