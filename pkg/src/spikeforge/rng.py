"""Counter-based random streams built on the splitmix64 finalizer.

Every stochastic draw in the simulator is addressed by an explicit key
(run seed, sample index, layer index, time step, neuron index), so runs
are bit-reproducible regardless of batching or worker scheduling.  The
scheme is normative: ports in other languages must reproduce the exact
same draws.

    key        = chain(run_seed, sample, layer, t)
    draw[i]    = finalize(key + (i + 1) * GOLDEN)        # i = neuron index
    uniform[i] = (draw[i] >> 11) * 2**-53                # in [0, 1)
    spike[i]   = uniform[i] < p[i]

where ``finalize`` is the splitmix64 output function and ``chain`` folds
each component into the state with ``h = finalize((h + GOLDEN) ^ v)``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = float(2.0**-53)

# numpy unsigned arithmetic wraps mod 2^64, which is exactly what we want
_err = np.seterr(over="ignore")
np.seterr(**_err)


def _finalize(z):
    z = np.uint64(z) if np.isscalar(z) else z
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def chain_key(*components) -> np.uint64:
    """Fold integer components into a single 64-bit stream key."""
    h = np.uint64(0)
    with np.errstate(over="ignore"):
        for c in components:
            h = _finalize((h + GOLDEN) ^ np.uint64(int(c) & 0xFFFFFFFFFFFFFFFF))
    return h


def chain_keys(base: np.uint64, components: np.ndarray) -> np.ndarray:
    """Vectorized ``chain_key(base, c)`` for an array of components."""
    comps = np.asarray(components, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _finalize((base + GOLDEN) ^ comps)


def uniforms(key: np.uint64, n: int) -> np.ndarray:
    """n uniforms in [0, 1) from the stream at ``key``, 53-bit resolution."""
    idx = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _finalize(key + idx * GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


def uniforms_2d(keys: np.ndarray, n: int) -> np.ndarray:
    """Uniforms for many streams at once; shape (len(keys), n)."""
    keys = np.asarray(keys, dtype=np.uint64)
    idx = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _finalize(keys[:, None] + idx[None, :] * GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


def randint_below(key: np.uint64, counter: int, bound: int) -> int:
    """One integer in [0, bound) from the stream at ``key``; ``counter``
    advances the stream.  Uses rejection-free modulo (bias negligible for
    the tiny bounds used here, but we document it as part of the format)."""
    with np.errstate(over="ignore"):
        z = _finalize(key + np.uint64(counter + 1) * GOLDEN)
    return int(z % np.uint64(bound))


def permutation(key: np.uint64, n: int) -> np.ndarray:
    """Deterministic Fisher-Yates permutation of range(n) from ``key``."""
    perm = np.arange(n)
    ctr = 0
    for i in range(n - 1, 0, -1):
        ctr += 1
        j = randint_below(key, ctr, i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm
