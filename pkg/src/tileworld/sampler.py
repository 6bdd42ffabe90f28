"""Flow-matching Euler integration over overlapping tiles.

One step takes the world from time t to t - dt: every tile is denoised
independently (classifier-free guidance applied per tile), Euler-updated,
and the tiles are fused by the cosine-weighted average

    v' = sum_i beta_i * [w_i - dt * theta(w_i, t)] / sum_i beta_i

accumulated in canonical tile order, so the result is bitwise deterministic
regardless of how many worker threads evaluate the (pure) tile updates.
Time runs from t = 1 (noise) down to t = 0 (data); denoisers are never
evaluated at t = 0.
"""

from __future__ import annotations

import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import noise
from .blend import BlendMask, box_mask, build_mask
from .denoisers import UNCONDITIONAL, Denoiser, DenoiserRequest
from .errors import CoverageError, ShapeError, TileWorldError
from .grid import DenseWorld, SparseWorld, scatter_accumulate, sparse_extract_tile
from .prompts import PromptGrid, condition_for_tile, uniform_grid
from .tiling import TileLayout, coverage_check, plan_tiles

Coord = tuple[int, int, int]


@dataclass(frozen=True)
class Schedule:
    """Strictly decreasing times t_N = 1 > ... > t_0 = 0."""

    times: tuple[float, ...]  # stored descending: times[0] = 1.0, times[-1] = 0.0

    def __post_init__(self):
        t = self.times
        if len(t) < 2 or t[0] != 1.0 or t[-1] != 0.0:
            raise ShapeError("schedule must run from exactly 1.0 down to exactly 0.0")
        if any(b >= a for a, b in zip(t, t[1:])):
            raise ShapeError("schedule times must be strictly decreasing")

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @classmethod
    def uniform(cls, steps: int = 25) -> "Schedule":
        ts = [1.0 - k / steps for k in range(steps)]
        return cls(tuple(ts) + (0.0,))


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 7.5

    def __post_init__(self):
        if not np.isfinite(self.scale):
            raise ShapeError(f"guidance scale must be finite, got {self.scale}")


@dataclass
class RunConfig:
    dims: Coord
    channels: int
    tile_size: int
    stride: int | None = None  # None: tile_size // 2
    seed: int = 0
    schedule: Schedule = field(default_factory=Schedule.uniform)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    prompts: PromptGrid | str = ""
    denoiser: Denoiser | None = None
    threads: int = 1
    blend: str = "cosine"  # "box" is the plain-average ablation

    def resolved_stride(self) -> int:
        return self.tile_size // 2 if self.stride is None else self.stride

    def blend_mask(self) -> BlendMask:
        if self.blend == "cosine":
            return build_mask(self.tile_size)
        if self.blend == "box":
            return box_mask(self.tile_size)
        raise ShapeError(f"unknown blend kind {self.blend!r}")


def init_noise(
    dims: Coord, channels: int, seed: int, origin: Coord = (0, 0, 0), tag: int = noise.TAG_INIT
) -> DenseWorld:
    """I.i.d. standard normal world; each voxel's draw is keyed by its global
    coordinate, so the value is independent of world dims and tiling."""
    return DenseWorld(noise.normal_block(seed, dims, channels, origin, tag).astype(np.float32))


def cfg_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, scale: float) -> np.ndarray:
    if v_cond.shape != v_uncond.shape:
        raise ShapeError(f"guidance shapes differ: {v_cond.shape} vs {v_uncond.shape}")
    return v_uncond + scale * (v_cond - v_uncond)


def euler_update(values: np.ndarray, velocity: np.ndarray, dt: float) -> np.ndarray:
    return values - dt * velocity


def _condition_fn(prompts: PromptGrid | str, tile_size: int):
    grid = uniform_grid(prompts) if isinstance(prompts, str) else prompts
    return lambda origin: condition_for_tile(grid, origin, tile_size)


def guided_tile_update(
    denoiser: Denoiser,
    values: np.ndarray,
    t: float,
    dt: float,
    condition: str,
    origin: Coord,
    guidance: GuidanceConfig,
) -> np.ndarray:
    """Euler-update one tile, with CFG applied inside the tile before fusion.

    scale == 1 is exactly the conditional pass (single denoiser call)."""
    v_cond = denoiser.velocity(DenoiserRequest(values, t, condition, origin))
    if guidance.scale == 1.0:
        v = v_cond
    else:
        v_uncond = denoiser.velocity(DenoiserRequest(values, t, UNCONDITIONAL, origin))
        v = cfg_velocity(v_cond, v_uncond, guidance.scale)
    return euler_update(values, v, dt)


def _map_tiles(executor, fn, origins):
    if executor is None:
        return [fn(o) for o in origins]
    return list(executor.map(fn, origins))


def tiled_step(
    world: DenseWorld,
    t: float,
    dt: float,
    layout: TileLayout,
    mask: BlendMask,
    denoiser: Denoiser,
    prompts: PromptGrid | str,
    guidance: GuidanceConfig,
    executor: ThreadPoolExecutor | None = None,
) -> DenseWorld:
    """One fused update of the whole world from t to t - dt."""
    S = layout.tile_size
    if mask.size != S:
        raise ShapeError(f"mask size {mask.size} does not match tile size {S}")
    cond_of = _condition_fn(prompts, S)

    def eval_tile(origin: Coord) -> np.ndarray:
        sl = tuple(slice(o, o + S) for o in origin)
        values = world.data[sl].astype(np.float64)
        return guided_tile_update(denoiser, values, t, dt, cond_of(origin), origin, guidance)

    updates = _map_tiles(executor, eval_tile, layout.origins)
    num = np.zeros(world.data.shape, dtype=np.float64)
    den = np.zeros(world.dims, dtype=np.float64)
    for origin, updated in zip(layout.origins, updates):
        scatter_accumulate(num, den, updated, mask.weights, origin)
    if np.any(den == 0.0):
        n = int((den == 0.0).sum())
        raise CoverageError(f"{n} voxels uncovered by layout during step at t={t}")
    return DenseWorld((num / den[..., None]).astype(np.float32))


def sparse_tiled_step(
    sparse: SparseWorld,
    t: float,
    dt: float,
    layout: TileLayout,
    mask: BlendMask,
    denoiser: Denoiser,
    prompts: PromptGrid | str,
    guidance: GuidanceConfig,
    executor: ThreadPoolExecutor | None = None,
) -> SparseWorld:
    """The fused update restricted to occupied voxels.

    Each tile is presented to the denoiser as a dense block with zeros at
    unoccupied positions; only occupied outputs enter the accumulation, with
    weights taken from the dense mask at the local position.
    """
    S = layout.tile_size
    if mask.size != S:
        raise ShapeError(f"mask size {mask.size} does not match tile size {S}")
    if len(sparse) == 0:
        return sparse
    cond_of = _condition_fn(prompts, S)
    tiles = [(origin, *sparse_extract_tile(sparse, origin, S)) for origin in layout.origins]

    def eval_tile(item):
        origin, local, values, _ = item
        block = np.zeros((S, S, S, sparse.channels), dtype=np.float64)
        block[local[:, 0], local[:, 1], local[:, 2]] = values
        updated = guided_tile_update(denoiser, block, t, dt, cond_of(origin), origin, guidance)
        return updated[local[:, 0], local[:, 1], local[:, 2]]

    occupied = [item for item in tiles if len(item[1])]
    updates = _map_tiles(executor, eval_tile, occupied)
    num = np.zeros((len(sparse), sparse.channels), dtype=np.float64)
    den = np.zeros(len(sparse), dtype=np.float64)
    for (origin, local, _, idx), updated in zip(occupied, updates):
        w = mask.weights[local[:, 0], local[:, 1], local[:, 2]]
        num[idx] += w[:, None] * updated
        den[idx] += w
    if np.any(den == 0.0):
        n = int((den == 0.0).sum())
        raise CoverageError(f"{n} occupied voxels uncovered by layout at t={t}")
    values = (num / den[:, None]).astype(np.float32)
    return SparseWorld(sparse.dims, sparse.channels, sparse.coords.copy(), values)


def _run_schedule(state, step_fn, schedule: Schedule, tile_count: int, progress, collect):
    times = schedule.times
    n = schedule.steps
    for i in range(n):
        t, t_next = times[i], times[i + 1]
        started = time.perf_counter()
        try:
            state = step_fn(state, t, t - t_next)
        except TileWorldError as e:
            raise type(e)(f"step {i + 1}/{n} (t={t:g}): {e}") from e
        elapsed = time.perf_counter() - started
        if progress:
            print(
                f"step {i + 1}/{n} t={t:.4f} tiles={tile_count} {elapsed * 1e3:.1f}ms",
                file=sys.stderr,
            )
        if collect is not None:
            collect.append({"step": i + 1, "t": t, "tiles": tile_count, "seconds": elapsed})
    return state


def _executor_for(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else None


def run_diffusion(config: RunConfig, progress: bool = True, collect: list | None = None) -> DenseWorld:
    """Full generation: noise at t = 1, fused Euler steps down to t = 0."""
    if config.denoiser is None:
        raise ShapeError("run config has no denoiser")
    S, s = config.tile_size, config.resolved_stride()
    layout = plan_tiles(config.dims, S, s)
    coverage_check(layout)
    mask = config.blend_mask()
    world = init_noise(config.dims, config.channels, config.seed)
    executor = _executor_for(config.threads)
    try:
        step = lambda w, t, dt: tiled_step(
            w, t, dt, layout, mask, config.denoiser, config.prompts, config.guidance, executor
        )
        return _run_schedule(world, step, config.schedule, len(layout.origins), progress, collect)
    finally:
        if executor is not None:
            executor.shutdown()


def run_sparse_diffusion(
    config: RunConfig,
    sparse: SparseWorld,
    progress: bool = True,
    collect: list | None = None,
) -> SparseWorld:
    """Run the schedule on an already-noised sparse world."""
    if config.denoiser is None:
        raise ShapeError("run config has no denoiser")
    S, s = config.tile_size, config.resolved_stride()
    layout = plan_tiles(sparse.dims, S, s)
    coverage_check(layout)
    mask = config.blend_mask()
    executor = _executor_for(config.threads)
    try:
        step = lambda w, t, dt: sparse_tiled_step(
            w, t, dt, layout, mask, config.denoiser, config.prompts, config.guidance, executor
        )
        return _run_schedule(sparse, step, config.schedule, len(layout.origins), progress, collect)
    finally:
        if executor is not None:
            executor.shutdown()
