"""Counter-based Gaussian noise.

Every sample is a pure function of (seed, tag, x, y, z, channel), so the value
at a voxel does not depend on world dimensions, tiling, iteration order, or
how many samples were drawn before it.  Coordinates are hashed with chained
64-bit finalizer rounds (murmur3-style avalanche) and the resulting uniforms
are pushed through Box-Muller.
"""

from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xFF51AFD7ED558CCD)
_M2 = np.uint64(0xC4CEB9FE1A85EC53)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S33 = np.uint64(33)

# tag namespaces for the different noise consumers
TAG_INIT = 0
TAG_SPARSE = 1
TAG_FORWARD = 2
TAG_RENOISE = 3

_INV53 = float(2.0**-53)


def _mix(h: np.ndarray) -> np.ndarray:
    h = (h ^ (h >> _S33)) * _M1
    h = (h ^ (h >> _S33)) * _M2
    return h ^ (h >> _S33)


def _absorb(h, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.uint64)
    return _mix(h + _GOLDEN + v * _M1)


def counter_normal(seed: int, x, y, z, c, tag: int = TAG_INIT) -> np.ndarray:
    """Standard normal draw(s) keyed by (seed, tag, x, y, z, c).

    The integer arguments broadcast together; the result is float64 with the
    broadcast shape.
    """
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ (_GOLDEN * np.uint64(tag)))
        for v in (x, y, z, c):
            h = _absorb(h, v)
        h2 = _mix(h ^ _M2)
    # u1 in (0, 1], u2 in [0, 1)
    u1 = (np.asarray(h >> np.uint64(11), dtype=np.float64) + 1.0) * _INV53
    u2 = np.asarray(h2 >> np.uint64(11), dtype=np.float64) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def normal_block(
    seed: int,
    dims: tuple[int, int, int],
    channels: int,
    origin: tuple[int, int, int] = (0, 0, 0),
    tag: int = TAG_INIT,
) -> np.ndarray:
    """Dense (X, Y, Z, C) float64 block of counter-keyed standard normals.

    `origin` offsets the coordinate keys, so a block is a window into one
    infinite noise field rather than a function of its own shape.
    """
    X, Y, Z = dims
    ox, oy, oz = origin
    x = np.arange(ox, ox + X, dtype=np.uint64)[:, None, None, None]
    y = np.arange(oy, oy + Y, dtype=np.uint64)[None, :, None, None]
    z = np.arange(oz, oz + Z, dtype=np.uint64)[None, None, :, None]
    c = np.arange(channels, dtype=np.uint64)[None, None, None, :]
    return counter_normal(seed, x, y, z, c, tag=tag)
