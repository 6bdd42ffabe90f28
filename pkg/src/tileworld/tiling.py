"""Overlapping tile decomposition of a world lattice."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, CoverageError

Coord = tuple[int, int, int]


@dataclass(frozen=True)
class TileLayout:
    dims: Coord
    tile_size: int
    stride: int
    origins: tuple[Coord, ...]  # canonical (x-major) order, strictly increasing


@dataclass(frozen=True)
class CoverageReport:
    min_cover: int
    max_cover: int


def axis_origins(dim: int, size: int, stride: int) -> list[int]:
    """Origins 0, s, 2s, ... with the last clamped to dim - size."""
    if size > dim:
        raise BoundsError(f"world smaller than tile: dim {dim} < tile {size}")
    if stride <= 0:
        raise BoundsError(f"stride must be positive, got {stride}")
    last = dim - size
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


def plan_tiles(dims: Coord, size: int, stride: int) -> TileLayout:
    """Overlapping decomposition with isotropic stride; total coverage."""
    if stride > size:
        raise BoundsError(f"stride {stride} exceeds tile size {size}")
    per_axis = [axis_origins(d, size, stride) for d in dims]
    origins = tuple(itertools.product(*per_axis))
    return TileLayout(tuple(dims), size, stride, origins)


def decode_layout(dims: Coord, size: int) -> TileLayout:
    """Stride = size: non-overlapping except where the last tile is clamped."""
    return plan_tiles(dims, size, size)


def cover_counts(layout: TileLayout) -> np.ndarray:
    counts = np.zeros(layout.dims, dtype=np.int32)
    S = layout.tile_size
    for ox, oy, oz in layout.origins:
        counts[ox : ox + S, oy : oy + S, oz : oz + S] += 1
    return counts


def coverage_check(layout: TileLayout) -> CoverageReport:
    """Min/max cover count; raises CoverageError if any voxel is uncovered."""
    counts = cover_counts(layout)
    report = CoverageReport(int(counts.min()), int(counts.max()))
    if report.min_cover == 0:
        n = int((counts == 0).sum())
        raise CoverageError(f"{n} voxels uncovered (min cover 0) in layout {layout.dims}")
    return report
