import math

import numpy as np
import pytest

from tileworld.blend import (
    box_mask,
    build_mask,
    cosine_weight,
    downsample_mask,
    profile_1d,
)
from tileworld.errors import ShapeError


def direct_weight(local, size):
    """Literal product-of-cosines evaluation, independent of the library path."""
    if any(d < 0 or d >= size for d in local):
        return 0.0
    w = 1.0
    for d in local:
        w *= math.cos(math.pi * ((d + 1) / (size + 1) - 0.5))
    return w


class TestCosineWeight:
    def test_size_one_center(self):
        assert cosine_weight((0, 0, 0), 1) == 1.0

    def test_out_of_range_is_zero(self):
        assert cosine_weight((-1, 0, 0), 4) == 0.0
        assert cosine_weight((0, 4, 0), 4) == 0.0
        assert cosine_weight((3, 3, 7), 4) == 0.0

    def test_s3_symmetry_value(self):
        # cos(-pi/4) * cos(0) * cos(pi/4) = 1/2
        assert cosine_weight((0, 1, 2), 3) == pytest.approx(0.5, abs=1e-12)

    def test_matches_direct_evaluation_all_sizes(self):
        for size in range(1, 17):
            for x in range(-1, size + 1):
                for y in range(-1, size + 1):
                    for z in range(-1, size + 1):
                        assert cosine_weight((x, y, z), size) == pytest.approx(
                            direct_weight((x, y, z), size), abs=1e-12
                        )


class TestBuildMask:
    def test_size_one(self):
        mask = build_mask(1)
        assert mask.weights.shape == (1, 1, 1)
        assert mask.weights[0, 0, 0] == 1.0

    def test_size_two_uniform_value(self):
        mask = build_mask(2)
        expected = math.cos(math.pi / 6) ** 3
        assert np.allclose(mask.weights, expected, atol=1e-12)

    def test_profile_symmetry(self):
        p = profile_1d(4)
        assert p[0] == pytest.approx(p[3], abs=1e-15)
        assert p[1] == pytest.approx(p[2], abs=1e-15)

    def test_matches_pointwise(self):
        mask = build_mask(5)
        for x in range(5):
            for y in range(5):
                for z in range(5):
                    assert mask.weights[x, y, z] == pytest.approx(
                        cosine_weight((x, y, z), 5), abs=1e-15
                    )

    def test_cached(self):
        assert build_mask(6) is build_mask(6)

    def test_strict_positivity(self):
        for size in (1, 2, 3, 8, 16, 33, 64):
            assert build_mask(size).weights.min() > 0.0

    def test_separability(self):
        mask = build_mask(7)
        p = profile_1d(7)
        ref = p[:, None, None] * p[None, :, None] * p[None, None, :]
        assert np.allclose(mask.weights, ref, atol=1e-12)

    def test_immutable(self):
        with pytest.raises(ValueError):
            build_mask(3).weights[0, 0, 0] = 2.0


class TestBoxMask:
    def test_all_ones(self):
        assert np.all(box_mask(2).weights == 1.0)

    def test_two_overlapping_boxes_average(self):
        w = box_mask(4).weights
        num = np.zeros(6)
        den = np.zeros(6)
        v1, v2 = 2.0, 6.0
        num[0:4] += w[0, 0, 0] * v1
        den[0:4] += w[0, 0, 0]
        num[2:6] += w[0, 0, 0] * v2
        den[2:6] += w[0, 0, 0]
        assert np.allclose(num[2:4] / den[2:4], (v1 + v2) / 2)


class TestDownsampleMask:
    def test_identity_factor(self):
        mask = build_mask(8)
        assert downsample_mask(mask, 1) is mask

    def test_recompute_matches_small_size(self):
        small = downsample_mask(build_mask(64), 4)
        assert np.array_equal(small.weights, build_mask(16).weights)

    def test_collapse_to_single_weight(self):
        small = downsample_mask(build_mask(8), 8)
        assert small.size == 1
        assert small.weights[0, 0, 0] == 1.0

    def test_non_divisible_factor(self):
        with pytest.raises(ShapeError):
            downsample_mask(build_mask(8), 3)

    def test_pool_variant_preserves_positivity(self):
        pooled = downsample_mask(build_mask(16), 4, method="pool")
        assert pooled.size == 4
        assert pooled.weights.min() > 0


def test_normalized_weights_partition_unity():
    # for any layout, per-voxel sum of beta / sum-beta is exactly 1
    from tileworld.tiling import plan_tiles

    layout = plan_tiles((12, 10, 8), 4, 2)
    w = build_mask(4).weights
    den = np.zeros(layout.dims)
    for ox, oy, oz in layout.origins:
        den[ox : ox + 4, oy : oy + 4, oz : oz + 4] += w
    total = np.zeros(layout.dims)
    for ox, oy, oz in layout.origins:
        sl = (slice(ox, ox + 4), slice(oy, oy + 4), slice(oz, oz + 4))
        total[sl] += w / den[sl]
    assert np.allclose(total, 1.0, atol=1e-12)
