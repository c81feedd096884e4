"""Counter-based uniforms: a pure function of an integer key.

Every random draw in the package is derived from ``counter_uniform(seed, a, b, c)``
so results never depend on call order, chunking or worker count.
"""

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1

_INC = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _splitmix(z):
    z = z + _INC
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def counter_hash(seed, a, b, c):
    """64-bit hash of (seed, a, b, c); a, b, c are signed 64-bit integers."""
    h = _splitmix(seed)
    h = _splitmix(h ^ np.uint64(a))
    h = _splitmix(h ^ np.uint64(b))
    h = _splitmix(h ^ np.uint64(c))
    return h


@njit(cache=True)
def counter_uniform(seed, a, b, c):
    """Uniform double in [0, 1) with 53 random bits."""
    return (counter_hash(seed, a, b, c) >> _S11) * _INV53


@njit(cache=True)
def _uniform_block(seed, a, bs, c):
    out = np.empty(bs.shape[0])
    for i in range(bs.shape[0]):
        out[i] = counter_uniform(seed, a, bs[i], c)
    return out


def as_seed(seed):
    """Fold any Python integer into the unsigned 64-bit seed domain."""
    return np.uint64(int(seed) & MASK64)


def uniform(seed, a, b, c=0):
    return float(counter_uniform(as_seed(seed), np.int64(a), np.int64(b), np.int64(c)))


def uniforms(seed, a, bs, c=0):
    """Vector of uniforms over the third key component."""
    bs = np.ascontiguousarray(bs, dtype=np.int64)
    return _uniform_block(as_seed(seed), np.int64(a), bs, np.int64(c))


def derive_seed(base, *path):
    """Child seed for a labelled sub-stream, e.g. ``derive_seed(base, env_index)``."""
    vals = list(path) + [0, 0, 0]
    return int(counter_hash(as_seed(base), np.int64(vals[0]), np.int64(vals[1]), np.int64(vals[2])))
