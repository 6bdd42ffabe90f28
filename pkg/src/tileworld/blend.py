"""Cosine blending weights for overlapping tiles.

The per-axis profile is cos(pi * ((d + 1) / (S + 1) - 1/2)) for local offset
d in {0..S-1}; the 3D weight is the separable product.  The profile is
strictly positive on the valid range and symmetric under d <-> S-1-d, so the
fused update's denominator stays strictly positive wherever coverage is >= 1.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class BlendMask:
    size: int
    weights: np.ndarray  # (S, S, S) float64, read-only


def profile_1d(size: int) -> np.ndarray:
    d = np.arange(size, dtype=np.float64)
    return np.cos(np.pi * ((d + 1.0) / (size + 1.0) - 0.5))


def cosine_weight(local: tuple[int, int, int], size: int) -> float:
    """Weight at a local coordinate; exactly 0 outside {0..S-1}^3."""
    if any(d < 0 or d >= size for d in local):
        return 0.0
    w = 1.0
    for d in local:
        w *= float(np.cos(np.pi * ((d + 1.0) / (size + 1.0) - 0.5)))
    return w


def _freeze(mask: BlendMask) -> BlendMask:
    mask.weights.setflags(write=False)
    return mask


@functools.lru_cache(maxsize=None)
def build_mask(size: int) -> BlendMask:
    """The cached cosine mask of side S."""
    if size < 1:
        raise ShapeError(f"mask size must be >= 1, got {size}")
    p = profile_1d(size)
    w = p[:, None, None] * p[None, :, None] * p[None, None, :]
    return _freeze(BlendMask(size, w))


@functools.lru_cache(maxsize=None)
def box_mask(size: int) -> BlendMask:
    """Uniform weights; the plain-average ablation mask."""
    if size < 1:
        raise ShapeError(f"mask size must be >= 1, got {size}")
    return _freeze(BlendMask(size, np.ones((size, size, size), dtype=np.float64)))


def downsample_mask(mask: BlendMask, factor: int, method: str = "recompute") -> BlendMask:
    """Mask for a lattice coarser by `factor`.

    "recompute" re-evaluates the cosine profile at the small size, preserving
    strict positivity exactly; "pool" average-pools the large mask instead and
    exists for comparison.
    """
    if factor < 1 or mask.size % factor:
        raise ShapeError(f"factor {factor} does not divide mask size {mask.size}")
    small = mask.size // factor
    if method == "recompute":
        return build_mask(small)
    if method == "pool":
        w = mask.weights.reshape(small, factor, small, factor, small, factor)
        return _freeze(BlendMask(small, w.mean(axis=(1, 3, 5))))
    raise ValueError(f"unknown downsample method {method!r}")
