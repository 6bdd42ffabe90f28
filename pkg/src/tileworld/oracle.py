"""Independent references and seam metrics for the fused-update machinery.

`reference_step` is the brute-force oracle: one tile spanning the whole
world, no blending.  `seam_discontinuity` quantifies value jumps across the
interior tile-boundary planes of a layout.  `autoregressive_baseline` is the
naive stitch-one-tile-at-a-time alternative, aligned to existing content by
inpainting, kept purely for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoisers import Denoiser
from .errors import CapabilityError
from .grid import DenseWorld
from .inpaint import repaint_run
from .prompts import condition_for_tile
from .sampler import GuidanceConfig, RunConfig, guided_tile_update
from .tiling import TileLayout, plan_tiles

Coord = tuple[int, int, int]


@dataclass(frozen=True)
class FaceStat:
    axis: int
    plane: int  # boundary between plane - 1 and plane
    max_jump: float
    mean_jump: float


@dataclass(frozen=True)
class SeamReport:
    faces: tuple[FaceStat, ...]
    max_jump: float
    mean_jump: float


def reference_step(
    world: DenseWorld,
    t: float,
    dt: float,
    denoiser: Denoiser,
    condition: str,
    guidance: GuidanceConfig,
) -> DenseWorld:
    """Single Euler update on the entire grid; requires a size-flexible denoiser."""
    caps = denoiser.capabilities
    biggest = max(world.dims)
    if caps.max_size is not None and caps.max_size < biggest:
        raise CapabilityError(
            f"reference step needs tile size {biggest}, denoiser supports {caps.max_size}"
        )
    values = world.data.astype(np.float64)
    updated = guided_tile_update(denoiser, values, t, dt, condition, (0, 0, 0), guidance)
    return DenseWorld(updated.astype(np.float32))


def interior_faces(layout: TileLayout) -> list[tuple[int, int]]:
    """(axis, plane) pairs where a tile face lies strictly inside the world."""
    faces = set()
    S = layout.tile_size
    for origin in layout.origins:
        for axis in range(3):
            for p in (origin[axis], origin[axis] + S):
                if 0 < p < layout.dims[axis]:
                    faces.add((axis, p))
    return sorted(faces)


def seam_discontinuity(world: DenseWorld, layout: TileLayout) -> SeamReport:
    """Max/mean absolute cross-face difference over the layout's interior faces."""
    stats = []
    for axis, plane in interior_faces(layout):
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis] = plane - 1
        hi[axis] = plane
        jump = np.abs(
            world.data[tuple(hi)].astype(np.float64) - world.data[tuple(lo)].astype(np.float64)
        )
        stats.append(FaceStat(axis, plane, float(jump.max()), float(jump.mean())))
    if stats:
        max_jump = max(s.max_jump for s in stats)
        mean_jump = float(np.mean([s.mean_jump for s in stats]))
    else:
        max_jump = mean_jump = 0.0
    return SeamReport(tuple(stats), max_jump, mean_jump)


def autoregressive_baseline(config: RunConfig, sigma: float = 0.0, progress: bool = False) -> DenseWorld:
    """Generate tiles one at a time in canonical order, conforming each new
    tile to already-generated overlap via inpainting."""
    S, s = config.tile_size, config.resolved_stride()
    layout = plan_tiles(config.dims, S, s)
    world = np.zeros((*config.dims, config.channels), dtype=np.float32)
    generated = np.zeros(config.dims, dtype=bool)
    for origin in layout.origins:
        sl = tuple(slice(o, o + S) for o in origin)
        if isinstance(config.prompts, str):
            tile_condition = config.prompts
        else:
            tile_condition = condition_for_tile(config.prompts, origin, S)
        tile_cfg = RunConfig(
            dims=(S, S, S),
            channels=config.channels,
            tile_size=S,
            stride=S,
            seed=config.seed,
            schedule=config.schedule,
            guidance=config.guidance,
            prompts=tile_condition,
            denoiser=config.denoiser,
            threads=1,
        )
        known = generated[sl]
        tile = repaint_run(
            tile_cfg,
            DenseWorld(world[sl].copy()),
            known.astype(np.float64),
            sigma=sigma,
            resample=1,
            progress=progress,
            noise_origin=origin,
        )
        world[sl] = tile.data
        generated[sl] = True
    return DenseWorld(world)
