"""Known-region re-imposition for scene expansion and editing.

At every reverse step the fused update is computed as usual, then voxels
under the (Gaussian-blurred) keep mask are replaced with the ground truth
pushed forward to the step's time along the linear path.  At t = 0 the
replacement uses the ground truth itself, and voxels that were 1 in the
binary mask before blurring are forced to it exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import noise
from .blend import build_mask
from .errors import ShapeError
from .grid import DenseWorld
from .sampler import RunConfig, _executor_for, _run_schedule, init_noise, tiled_step
from .tiling import coverage_check, plan_tiles


@dataclass
class KeepMask:
    values: np.ndarray  # (X, Y, Z) float in [0, 1]; 1 = keep ground truth
    sigma: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.min() < 0 or self.values.max() > 1:
            raise ShapeError("keep mask values must lie in [0, 1]")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ShapeError(f"blur sigma must be finite and >= 0, got {self.sigma}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized Gaussian kernel truncated at radius ceil(3*sigma)."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def blur_mask(binary: np.ndarray, sigma: float) -> KeepMask:
    """Separable Gaussian blur with reflective boundary; sigma = 0 is identity."""
    m = np.asarray(binary, dtype=np.float64)
    if sigma > 0:
        k = gaussian_kernel(sigma)
        for axis in range(m.ndim):
            m = correlate1d(m, k, axis=axis, mode="reflect")
        m = np.clip(m, 0.0, 1.0)
    return KeepMask(m, sigma)


def forward_noise(
    x0: DenseWorld, t: float, seed: int, tag: int = noise.TAG_FORWARD, origin=(0, 0, 0)
) -> DenseWorld:
    """(1 - t) * x0 + t * eps along the linear path, with counter-keyed eps."""
    if not 0.0 <= t <= 1.0:
        raise ShapeError(f"forward time must be in [0, 1], got {t}")
    eps = noise.normal_block(seed, x0.dims, x0.channels, origin, tag)
    return DenseWorld(((1.0 - t) * x0.data.astype(np.float64) + t * eps).astype(np.float32))


def repaint_run(
    config: RunConfig,
    ground_truth: DenseWorld,
    binary_mask: np.ndarray,
    sigma: float = 1.5,
    resample: int = 1,
    progress: bool = True,
    noise_origin=(0, 0, 0),
) -> DenseWorld:
    """RePaint-style generation conforming to known content.

    `binary_mask` is (X, Y, Z) with 1 over the known region; it is blurred by
    `sigma` before use.  `resample` repeats each step's denoise/re-impose
    cycle, re-noising by one forward step in between.
    """
    if config.denoiser is None:
        raise ShapeError("run config has no denoiser")
    binary = np.asarray(binary_mask)
    if binary.shape != tuple(config.dims) or ground_truth.dims != tuple(config.dims):
        raise ShapeError(
            f"mask {binary.shape} / ground truth {ground_truth.dims} must match "
            f"world dims {tuple(config.dims)}"
        )
    if resample < 1:
        raise ShapeError(f"resample count must be >= 1, got {resample}")
    m = blur_mask(binary, sigma).values[..., None]
    x0 = ground_truth.data.astype(np.float64)
    S, s = config.tile_size, config.resolved_stride()
    layout = plan_tiles(config.dims, S, s)
    coverage_check(layout)
    mask = build_mask(S)
    executor = _executor_for(config.threads)
    times = config.schedule.times
    world = init_noise(config.dims, config.channels, config.seed, noise_origin)

    def step(w: DenseWorld, t: float, dt: float) -> DenseWorld:
        step_id = times.index(t)
        for rep in range(resample):
            gen = tiled_step(
                w, t, dt, layout, mask, config.denoiser, config.prompts, config.guidance, executor
            )
            t_next = t - dt
            if t_next > 0:
                known = forward_noise(
                    ground_truth, t_next, config.seed, noise.TAG_FORWARD, noise_origin
                ).data.astype(np.float64)
            else:
                known = x0
            merged = m * known + (1.0 - m) * gen.data.astype(np.float64)
            if t_next <= 0:
                merged = np.where(binary[..., None] == 1, x0, merged)
            w = DenseWorld(merged.astype(np.float32))
            if rep < resample - 1:
                eps = noise.normal_block(
                    config.seed ^ ((step_id + 1) << 32 | (rep + 1)),
                    config.dims,
                    config.channels,
                    noise_origin,
                    noise.TAG_RENOISE,
                )
                w = DenseWorld((w.data.astype(np.float64) + dt * eps).astype(np.float32))
        return w

    try:
        return _run_schedule(world, step, config.schedule, len(layout.origins), progress, None)
    finally:
        if executor is not None:
            executor.shutdown()
