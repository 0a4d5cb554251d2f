"""Counter-based SplitMix64 streams, one per (seed, shot).

Draw ``c`` of shot ``j`` is ``mix(key(seed, j) + (c + 1) * GOLDEN)``, so any
draw of any shot can be produced without generating the ones before it.
The compiled kernel implements the same arithmetic; both must agree bit for
bit.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
SHOT_SALT = np.uint64(0xD1B54A32D192ED03)
BURST_SALT = np.uint64(0x8CB92BA72F3D8DD7)
INIT_SALT = np.uint64(0xA0761D6478BD642F)
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53


def mix(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def seed_key(seed: int, salt: np.uint64 = SHOT_SALT) -> np.uint64:
    s = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return mix(mix(s + GOLDEN) ^ np.array([salt], dtype=np.uint64))[0]


def shot_keys(seed: int, shots: np.ndarray, salt: np.uint64 = SHOT_SALT) -> np.ndarray:
    shots = np.asarray(shots, dtype=np.uint64)
    return mix(seed_key(seed, salt) ^ mix(shots * GOLDEN + np.uint64(1)))


def uniform(keys: np.ndarray, counter: int) -> np.ndarray:
    step = np.uint64(((counter + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF)
    z = mix(keys + step)
    return (z >> np.uint64(11)).astype(np.float64) * _TO_UNIT
