"""Arbitrary-size 3D scene synthesis by overlapping-tile denoising with
cosine-weighted fusion."""

__version__ = "0.1.0"

from .blend import BlendMask, box_mask, build_mask, cosine_weight, downsample_mask
from .denoisers import (
    Denoiser,
    DenoiserCapabilities,
    DenoiserRequest,
    MixtureDenoiser,
    PatternDenoiser,
    PointTargetDenoiser,
)
from .grid import DenseWorld, SparseWorld, TileView, extract_tile, load_world, save_world
from .inpaint import KeepMask, blur_mask, forward_noise, repaint_run
from .prompts import PromptGrid, condition_for_tile, load_prompt_grid, parse_prompt_grid
from .sampler import (
    GuidanceConfig,
    RunConfig,
    Schedule,
    init_noise,
    run_diffusion,
    run_sparse_diffusion,
    tiled_step,
)
from .tiling import TileLayout, coverage_check, decode_layout, plan_tiles
