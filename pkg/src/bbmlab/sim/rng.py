"""Counter-based keyed random numbers (SplitMix64 finalizer).

Every draw is a pure function of a 64-bit key and a counter, so a particle's
randomness does not depend on the order in which the tree is expanded. Child
keys are derived from the parent key and the branch index.
"""
from __future__ import annotations

import math

import numba
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
CHILD = np.uint64(0xD1B54A32D192ED03)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * math.pi


@numba.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@numba.njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform on the open interval (0, 1)."""
    h = mix64(key + (np.uint64(counter) + ONE) * GOLDEN)
    return (float(h >> S11) + 0.5) * INV53


@numba.njit(cache=True, inline="always")
def normal(key, counter):
    """Standard normal from the uniform pair at counters 2c and 2c+1 (Box-Muller)."""
    u1 = uniform(key, 2 * counter)
    u2 = uniform(key, 2 * counter + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


@numba.njit(cache=True, inline="always")
def child_key(key, i):
    return mix64(mix64(key) + (np.uint64(i) + ONE) * CHILD)


@numba.njit(cache=True)
def _replica_keys(root, start, count):
    out = np.empty(count, dtype=np.uint64)
    for j in range(count):
        out[j] = child_key(root, start + j)
    return out


@numba.njit(cache=True)
def _uniforms(keys, counter):
    out = np.empty(len(keys))
    for j in range(len(keys)):
        out[j] = uniform(keys[j], counter)
    return out


def root_key(seed: int, domain: int) -> np.uint64:
    """Key for a stream family: ``domain`` separates simulate/condition/limit uses."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    # jitted calls return Python ints; keep the uint64 type for later dispatch
    return np.uint64(mix64(np.uint64(seed) ^ mix64(np.uint64(domain) + GOLDEN)))


def replica_keys(seed: int, domain: int, start: int, count: int) -> np.ndarray:
    """Keys of replicas start..start+count-1, independent of how they are grouped."""
    return _replica_keys(root_key(seed, domain), np.int64(start), np.int64(count))


def uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    return _uniforms(keys, np.int64(counter))
