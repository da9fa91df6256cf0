"""Counter-based random numbers.

Every random quantity in the package is a pure function of a 64-bit key and
an integer counter, so bond states, disorder values and walk steps can be
regenerated in any order (or in parallel) without carrying generator state.
The mixing function is the splitmix64 finalizer.
"""
from __future__ import annotations

import hashlib

import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LAYER_SALT = np.uint64(0xD1B54A32D192ED03)
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53

MASK64 = (1 << 64) - 1


@numba.njit(cache=True, inline="always")
def _mix(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _unit(key, counter):
    key = np.uint64(key)
    h = _mix(key + _GOLDEN * (np.uint64(counter) + np.uint64(1)))
    return np.float64(h >> np.uint64(11)) * _TO_UNIT


@numba.njit(cache=True)
def _key_of(seed):
    return _mix(np.uint64(seed) ^ _LAYER_SALT)


@numba.njit(cache=True)
def _subkey(key, i):
    key = np.uint64(key)
    return _mix(key + _GOLDEN * (np.uint64(i) + np.uint64(1))) ^ _LAYER_SALT


@numba.njit(cache=True)
def _uniform_range(key, start, count):
    out = np.empty(count, dtype=np.float64)
    for k in range(count):
        out[k] = _unit(key, start + k)
    return out


@numba.njit(cache=True)
def _uniform_at(key, counters):
    out = np.empty(counters.shape[0], dtype=np.float64)
    for k in range(counters.shape[0]):
        out[k] = _unit(key, counters[k])
    return out


def key_of(seed: int) -> np.uint64:
    """Scrambled 64-bit key for a user seed."""
    return np.uint64(_key_of(np.uint64(int(seed) & MASK64)))


def subkey(key: np.uint64, i: int) -> np.uint64:
    """Child key for stream ``i`` under ``key`` (e.g. one time layer)."""
    return np.uint64(_subkey(np.uint64(key), np.uint64(int(i) & MASK64)))


def uniform_range(seed: int, start: int, count: int) -> np.ndarray:
    """Uniforms in [0, 1) for counters ``start .. start+count-1``."""
    return _uniform_range(key_of(seed), np.int64(start), np.int64(count))


def uniform_at(key: np.uint64, counters: np.ndarray) -> np.ndarray:
    return _uniform_at(np.uint64(key), np.ascontiguousarray(counters, dtype=np.int64))


def derive_seed(master: int, *labels) -> int:
    """Sub-seed as a hash of the master seed and any labels.

    Used for per-sample seeds so that sample ``k`` of an experiment does not
    depend on how many samples came before it.
    """
    text = "|".join([str(int(master))] + [str(x) for x in labels])
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
