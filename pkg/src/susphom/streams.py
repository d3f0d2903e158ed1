"""Counter-based random streams keyed by (master seed, purpose, index).

Every random draw in the package goes through one of these helpers, so a sample
depends only on its key and never on execution order or thread schedule.
"""

import hashlib

import numpy as np

from .errors import ConfigError

_MASK64 = (1 << 64) - 1


def purpose_code(purpose):
    """Stable 32-bit integer for a stream purpose label."""
    digest = hashlib.sha256(str(purpose).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def generator(seed, purpose, index=0):
    """A Philox-backed generator for the stream ``(seed, purpose, index)``."""
    ss = np.random.SeedSequence(
        entropy=check_seed(seed), spawn_key=(purpose_code(purpose), int(index))
    )
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, purpose, index=0):
    """A 64-bit child seed for the stream ``(seed, purpose, index)``."""
    ss = np.random.SeedSequence(
        entropy=check_seed(seed), spawn_key=(purpose_code(purpose), int(index))
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _splitmix64(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def counter_uniform(seed, purpose, indices):
    """Uniform draws in [0, 1), one per index, each a pure function of its key.

    A SplitMix64 finalizer is applied to the key mixed with the index; the top
    53 bits give the double. Vectorized, so per-point streams stay cheap.
    """
    idx = np.asarray(indices, dtype=np.uint64)
    key = np.uint64(derive_seed(seed, purpose))
    with np.errstate(over="ignore"):
        h = _splitmix64(_splitmix64(idx ^ key) + key)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
