import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blob_grid
from icount.density import (
    DotScene,
    SmoothKernel,
    downsample_sum,
    place_dots,
    render_density,
    smooth,
    upsample_labels,
)


class TestRenderDensity:
    def test_empty_scene_is_zero(self):
        grid = render_density(DotScene(height=16, width=16, sigma=2.0))
        assert grid.shape == (16, 16)
        assert grid.sum() == 0.0

    def test_single_dot_mass_is_one(self):
        scene = DotScene(height=32, width=32, sigma=2.0, dots=((16.0, 16.0),))
        grid = render_density(scene)
        assert grid.sum() == pytest.approx(1.0, abs=1e-3)
        assert grid.min() >= 0

    def test_many_dots_total_mass(self, rng):
        dots = tuple(
            (float(x), float(y))
            for x, y in rng.uniform(2, 62, size=(37, 2))
        )
        grid = render_density(DotScene(height=64, width=64, sigma=1.5, dots=dots))
        assert grid.sum() == pytest.approx(37.0, abs=0.05)

    def test_edge_dot_still_unit_mass(self):
        # clipped window is renormalized, so border dots keep full mass
        scene = DotScene(height=32, width=32, sigma=2.0, dots=((0.0, 0.0),))
        assert render_density(scene).sum() == pytest.approx(1.0, abs=1e-3)

    def test_out_of_bounds_dot_rejected(self):
        with pytest.raises(ValueError):
            DotScene(height=16, width=16, sigma=1.0, dots=((20.0, 5.0),))

    def test_scene_json_roundtrip(self):
        scene = DotScene(height=24, width=40, sigma=1.5, dots=((3.5, 4.25), (10.0, 20.0)))
        assert DotScene.from_json(scene.to_json()) == scene


class TestSmooth:
    def test_zero_grid_stays_zero(self):
        out = smooth(np.zeros((16, 16)), SmoothKernel.for_sigma(1.5))
        assert not out.any()

    def test_impulse_peak_equals_kernel_center(self):
        kernel = SmoothKernel.for_sigma(1.5)
        grid = np.zeros((17, 17))
        grid[8, 8] = 1.0
        out = smooth(grid, kernel)
        center_weight = kernel.weights_2d()[kernel.radius, kernel.radius]
        assert out[8, 8] == pytest.approx(center_weight, rel=1e-12)

    def test_mass_preserved(self, rng):
        grid = rng.uniform(0, 3, size=(21, 33))
        out = smooth(grid, SmoothKernel.for_sigma(2.0))
        assert out.sum() == pytest.approx(grid.sum(), rel=1e-6)

    def test_argmax_near_an_input_local_max(self, rng):
        # brute-force oracle: scan all pixels for 8-neighbourhood local maxima
        kernel = SmoothKernel.for_sigma(1.0)
        for _ in range(10):
            grid = rng.uniform(0, 1, size=(16, 16))
            out = smooth(grid, kernel)
            br, bc = np.unravel_index(np.argmax(out), out.shape)
            maxima = []
            for r in range(16):
                for c in range(16):
                    patch = grid[max(0, r - 1) : r + 2, max(0, c - 1) : c + 2]
                    if grid[r, c] >= patch.max():
                        maxima.append((r, c))
            dist = min((r - br) ** 2 + (c - bc) ** 2 for r, c in maxima)
            assert dist <= kernel.radius**2

    def test_kernel_normalized(self):
        kernel = SmoothKernel(sigma=1.5, radius=6)
        assert abs(kernel.weights_1d().sum() - 1.0) < 1e-9
        assert abs(kernel.weights_2d().sum() - 1.0) < 1e-9

    def test_kernel_radius_validated(self):
        with pytest.raises(ValueError):
            SmoothKernel(sigma=3.0, radius=4)


class TestDownsampleSum:
    def test_uniform_blocks(self):
        out = downsample_sum(np.ones((8, 8)), 4)
        assert out.shape == (2, 2)
        np.testing.assert_allclose(out, 16.0)

    def test_mass_conserved(self, rng):
        grid = rng.uniform(0, 1, size=(30, 41))
        grid *= 42.0 / grid.sum()
        out = downsample_sum(grid, 4)
        assert out.sum() == pytest.approx(42.0, rel=1e-9)

    def test_zero_padded_ragged_input(self):
        grid = np.arange(36, dtype=float).reshape(6, 6)
        out = downsample_sum(grid, 4)
        assert out.shape == (2, 2)
        padded = np.zeros((8, 8))
        padded[:6, :6] = grid
        expected = np.array(
            [
                [padded[:4, :4].sum(), padded[:4, 4:].sum()],
                [padded[4:, :4].sum(), padded[4:, 4:].sum()],
            ]
        )
        np.testing.assert_allclose(out, expected)

    def test_bad_factor_rejected(self):
        with pytest.raises(ValueError):
            downsample_sum(np.ones((8, 8)), 3)


class TestUpsampleLabels:
    def test_block_replication(self):
        labels = np.array([[0, 1], [2, 3]])
        out = upsample_labels(labels, 2, 4, 4)
        expected = np.array(
            [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]]
        )
        np.testing.assert_array_equal(out, expected)

    def test_factor_one_is_identity(self):
        labels = np.arange(12).reshape(3, 4)
        np.testing.assert_array_equal(upsample_labels(labels, 1, 3, 4), labels)

    def test_cropped_to_target(self):
        labels = np.array([[0, 1], [2, 3]])
        out = upsample_labels(labels, 4, 7, 7)
        full = np.repeat(np.repeat(labels, 4, axis=0), 4, axis=1)
        np.testing.assert_array_equal(out, full[:7, :7])

    def test_incompatible_target_rejected(self):
        with pytest.raises(ValueError):
            upsample_labels(np.zeros((2, 2), int), 2, 9, 4)


class TestPlaceDots:
    def test_tiny_mass_yields_no_dots(self):
        grid = np.full((8, 8), 0.2 / 64)
        region = np.argwhere(np.ones((8, 8), bool))
        assert place_dots(grid, region, radius=2.0) == []

    def test_two_blobs_give_three_dots_peak_first(self):
        grid = blob_grid(64, 64, [(16.0, 16.0), (48.0, 48.0)], sigma=2.0)
        grid *= 2.6 / grid.sum()
        region = np.argwhere(np.ones_like(grid, bool))
        dots = place_dots(grid, region, radius=6.0)
        assert len(dots) == 3
        peak = np.unravel_index(np.argmax(grid), grid.shape)
        assert dots[0] == (float(peak[1]), float(peak[0]))

    def test_single_blob_dot_at_argmax(self):
        grid = blob_grid(32, 32, [(15.0, 17.0)], sigma=2.0)
        region = np.argwhere(np.ones_like(grid, bool))
        (dot,) = place_dots(grid, region, radius=4.0)
        peak = np.unravel_index(np.argmax(grid), grid.shape)
        assert dot == (float(peak[1]), float(peak[0]))

    def test_dots_separated_and_inside_region(self, rng):
        grid = rng.uniform(0, 0.1, size=(32, 32))
        grid *= 5.0 / grid.sum()
        region = np.argwhere(grid > np.median(grid))
        radius = 3.0
        dots = place_dots(grid, region, radius)
        region_set = {(int(r), int(c)) for r, c in region}
        for x, y in dots:
            assert (int(y), int(x)) in region_set
        for i in range(len(dots)):
            for j in range(i + 1, len(dots)):
                d = np.hypot(dots[i][0] - dots[j][0], dots[i][1] - dots[j][1])
                assert d > radius


class TestPipelineConservation:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=12), st.integers(min_value=0, max_value=10**6))
    def test_render_smooth_downsample_preserves_mass(self, n_dots, seed):
        rng = np.random.default_rng(seed)
        dots = tuple(
            (float(x), float(y)) for x, y in rng.uniform(4, 60, size=(n_dots, 2))
        )
        grid = render_density(DotScene(height=64, width=64, sigma=1.5, dots=dots))
        out = downsample_sum(smooth(grid, SmoothKernel.for_sigma(1.5)), 4)
        assert abs(out.sum() - n_dots) <= 1e-3 * max(1, n_dots)

    def test_downsample_sum_matches_input_sum(self, rng):
        grid = rng.uniform(0, 2, size=(50, 77))
        out = downsample_sum(grid, 8)
        assert out.sum() == pytest.approx(grid.sum(), rel=1e-6)
