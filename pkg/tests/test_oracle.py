import numpy as np
import pytest

from tileworld.denoisers import (
    DenoiserCapabilities,
    PatternDenoiser,
    PointTargetDenoiser,
    border_pattern,
)
from tileworld.errors import CapabilityError
from tileworld.grid import DenseWorld
from tileworld.oracle import (
    autoregressive_baseline,
    interior_faces,
    reference_step,
    seam_discontinuity,
)
from tileworld.sampler import (
    GuidanceConfig,
    RunConfig,
    Schedule,
    run_diffusion,
)
from tileworld.tiling import TileLayout, plan_tiles

G1 = GuidanceConfig(1.0)


class TestReferenceStep:
    def test_point_target_closed_form(self):
        world = DenseWorld.full((4, 4, 4), 1, 2.0)
        out = reference_step(world, 1.0, 0.5, PointTargetDenoiser(default=0.0), "c", G1)
        # x - dt * x / t = 2 - 0.5 * 2 = 1
        assert np.all(out.data == 1.0)

    def test_capability_limit_enforced(self):
        den = PointTargetDenoiser(default=0.0)
        den.capabilities = DenoiserCapabilities(max_size=4, pointwise=True, deterministic=True)
        with pytest.raises(CapabilityError):
            reference_step(DenseWorld.zeros((8, 8, 8), 1), 1.0, 0.1, den, "c", G1)


class TestInteriorFaces:
    def test_single_tile_has_none(self):
        assert interior_faces(plan_tiles((8, 8, 8), 8, 8)) == []

    def test_two_tiles_on_x(self):
        layout = plan_tiles((16, 8, 8), 8, 8)
        assert interior_faces(layout) == [(0, 8)]

    def test_overlapping_layout_lists_both_edges(self):
        layout = plan_tiles((12, 8, 8), 8, 4)
        assert interior_faces(layout) == [(0, 4), (0, 8)]


class TestSeamDiscontinuity:
    def test_smooth_world_zero(self):
        world = DenseWorld.full((16, 8, 8), 2, 3.0)
        rep = seam_discontinuity(world, plan_tiles((16, 8, 8), 8, 8))
        assert rep.max_jump == 0.0 and rep.mean_jump == 0.0

    def test_unit_step_max_one(self):
        data = np.zeros((16, 8, 8, 1), dtype=np.float32)
        data[8:] = 1.0
        rep = seam_discontinuity(DenseWorld(data), plan_tiles((16, 8, 8), 8, 8))
        assert rep.max_jump == 1.0
        assert rep.mean_jump == 1.0
        assert rep.faces[0].axis == 0 and rep.faces[0].plane == 8

    def test_brute_force_agreement(self):
        rng = np.random.default_rng(0)
        world = DenseWorld(rng.normal(size=(12, 8, 8, 2)).astype(np.float32))
        layout = plan_tiles((12, 8, 8), 8, 4)
        rep = seam_discontinuity(world, layout)
        # direct evaluation of the same two planes
        expect = []
        for plane in (4, 8):
            jump = np.abs(
                world.data[plane].astype(np.float64) - world.data[plane - 1].astype(np.float64)
            )
            expect.append((jump.max(), jump.mean()))
        assert rep.max_jump == pytest.approx(max(e[0] for e in expect))
        assert rep.mean_jump == pytest.approx(np.mean([e[1] for e in expect]))

    def test_empty_layout_report(self):
        world = DenseWorld.zeros((8, 8, 8), 1)
        rep = seam_discontinuity(world, plan_tiles((8, 8, 8), 8, 8))
        assert rep.faces == ()


def border_config(dims, blend="cosine"):
    den = PatternDenoiser({"c": border_pattern(base=0.0, lift=1.0, width=1)})
    return RunConfig(
        dims=dims,
        channels=2,
        tile_size=8,
        stride=4,
        seed=5,
        schedule=Schedule.uniform(12),
        guidance=G1,
        prompts="c",
        denoiser=den,
        blend=blend,
    )


class TestBaselineComparison:
    def test_baseline_converges_for_uniform_target(self):
        cfg = RunConfig(
            dims=(12, 8, 8), channels=1, tile_size=8, stride=4, seed=1,
            schedule=Schedule.uniform(10), guidance=G1,
            denoiser=PointTargetDenoiser(default=0.5),
        )
        out = autoregressive_baseline(cfg)
        assert np.abs(out.data - 0.5).max() < 1e-5

    def test_fused_seams_not_worse_than_stitched(self):
        # per-tile border-lift targets: fused updates blend the conflicting
        # tile opinions, whereas stitching keeps each tile's borders
        cfg = border_config((16, 8, 8))
        fused = run_diffusion(cfg, progress=False)
        stitched = autoregressive_baseline(border_config((16, 8, 8)))
        layout = plan_tiles(cfg.dims, 8, 4)
        assert (
            seam_discontinuity(fused, layout).max_jump
            <= seam_discontinuity(stitched, layout).max_jump + 1e-9
        )

    def test_baseline_respects_prompt_regions(self):
        from tileworld.prompts import PromptGrid

        grid = PromptGrid((2, 1, 1), ("left", "right"), cell_size=8)
        den = PointTargetDenoiser({"left": -1.0, "right": 1.0})
        cfg = RunConfig(
            dims=(16, 8, 8), channels=1, tile_size=8, stride=8, seed=2,
            schedule=Schedule.uniform(8), guidance=G1, prompts=grid, denoiser=den,
        )
        out = autoregressive_baseline(cfg)
        assert np.abs(out.data[:8] + 1.0).max() < 1e-5
        assert np.abs(out.data[8:] - 1.0).max() < 1e-5
