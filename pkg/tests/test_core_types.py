import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from croscale.core_types import (
    BeliefMap,
    PixelCoord,
    Raster,
    SimplexVec,
    WorldPose,
    belief_at,
    bilinear_sample,
    bilinear_sample_many,
    normalize_heading,
    patch_to_world,
    world_to_patch,
)
from croscale.errors import ArgumentError


def ramp_raster():
    return Raster(np.array([[0.0, 1.0], [2.0, 3.0]]), scale=1.0)


class TestRaster:
    def test_shape_properties(self):
        r = Raster(np.zeros((4, 5, 3)), scale=2.0)
        assert (r.height, r.width, r.channels) == (4, 5, 3)

    def test_2d_values_promoted_to_single_channel(self):
        assert ramp_raster().channels == 1

    def test_rejects_nonfinite(self):
        with pytest.raises(ArgumentError):
            Raster(np.array([[np.nan]]), scale=1.0)

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ArgumentError):
            Raster(np.zeros((2, 2)), scale=0.0)

    def test_values_immutable(self):
        r = ramp_raster()
        with pytest.raises(ValueError):
            r.values[0, 0, 0] = 9.0


class TestSimplexVec:
    def test_valid(self):
        v = SimplexVec([0.25, 0.75])
        assert len(v) == 2

    def test_rejects_negative(self):
        with pytest.raises(ArgumentError):
            SimplexVec([1.1, -0.1])

    def test_rejects_bad_sum(self):
        with pytest.raises(ArgumentError):
            SimplexVec([0.5, 0.5 + 1e-6])

    def test_tolerates_tiny_rounding(self):
        SimplexVec([0.5, 0.5 + 1e-10])

    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8))
    def test_normalized_vectors_accepted(self, raw):
        arr = np.asarray(raw)
        SimplexVec(arr / arr.sum())


class TestBilinear:
    def test_midpoint_is_mean(self):
        assert bilinear_sample(ramp_raster(), 0.5, 0.5)[0] == pytest.approx(1.5)

    def test_integer_coordinate_returns_stored_value(self):
        assert bilinear_sample(ramp_raster(), 0, 1)[0] == 1.0

    def test_derived_fractional_value(self):
        # (1-0.25)*((1-0.75)*0 + 0.75*1) + 0.25*((1-0.75)*2 + 0.75*3) = 1.25
        assert bilinear_sample(ramp_raster(), 0.25, 0.75)[0] == pytest.approx(1.25, abs=1e-12)

    def test_out_of_bounds_raises(self):
        with pytest.raises(ArgumentError):
            bilinear_sample(ramp_raster(), -0.01, 0.0)
        with pytest.raises(ArgumentError):
            bilinear_sample(ramp_raster(), 0.0, 1.01)

    def test_many_matches_scalar(self):
        rng = np.random.default_rng(3)
        r = Raster(rng.random((7, 9, 2)), scale=1.0)
        rows = rng.uniform(0, 6, size=50)
        cols = rng.uniform(0, 8, size=50)
        batch = bilinear_sample_many(r, rows, cols)
        for i in range(50):
            np.testing.assert_allclose(batch[i], bilinear_sample(r, rows[i], cols[i]),
                                       rtol=0, atol=1e-12)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=200)
    def test_within_neighbor_range(self, row, col):
        r = ramp_raster()
        val = bilinear_sample(r, row, col)[0]
        assert r.values.min() - 1e-12 <= val <= r.values.max() + 1e-12


class TestPose:
    def test_heading_normalized(self):
        assert WorldPose(0, 0, 3 * math.pi).heading == pytest.approx(math.pi)
        assert -math.pi < WorldPose(0, 0, -math.pi).heading <= math.pi

    def test_normalize_heading_range(self):
        for h in np.linspace(-20, 20, 113):
            out = normalize_heading(h)
            assert -math.pi < out <= math.pi
            assert math.isclose(math.cos(out), math.cos(h), abs_tol=1e-12)
            assert math.isclose(math.sin(out), math.sin(h), abs_tol=1e-12)


class TestPatchWorldTransform:
    def test_identity_rotation(self):
        pose = WorldPose(10.0, 20.0, 0.0)
        assert patch_to_world(pose, 1.0, 5, 5) == pytest.approx((15.0, 25.0))

    def test_quarter_turn(self):
        pose = WorldPose(0.0, 0.0, math.pi / 2)
        x, y = patch_to_world(pose, 1.0, 1, 0)
        assert (x, y) == pytest.approx((0.0, 1.0), abs=1e-12)

    def test_scale_divides(self):
        pose = WorldPose(0.0, 0.0, 0.0)
        assert patch_to_world(pose, 4.0, 8, 2) == pytest.approx((2.0, 0.5))

    def test_round_trip_100_random(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            pose = WorldPose(*rng.uniform(-50, 50, 2), rng.uniform(-4, 4))
            scale = rng.uniform(0.1, 10)
            u, v = rng.uniform(0, 512, 2)
            x, y = patch_to_world(pose, scale, u, v)
            u2, v2 = world_to_patch(pose, scale, x, y)
            assert abs(u2 - u) < 1e-9 and abs(v2 - v) < 1e-9


class TestBeliefMap:
    def test_uniform_lookup(self):
        bm = BeliefMap(np.full((3, 3, 4), 0.25))
        np.testing.assert_array_equal(belief_at(bm, PixelCoord(1, 2)).probs,
                                      [0.25, 0.25, 0.25, 0.25])

    def test_one_hot_lookup(self):
        vals = np.zeros((4, 4, 3))
        vals[:, :, 1] = 1.0
        vals[2, 3] = [1.0, 0.0, 0.0]
        bm = BeliefMap(vals)
        np.testing.assert_array_equal(belief_at(bm, PixelCoord(2, 3)).probs, [1, 0, 0])

    def test_nearest_pixel_rounding(self):
        vals = np.zeros((2, 2, 2))
        vals[:, :, 0] = 1.0
        vals[1, 1] = [0.0, 1.0]
        bm = BeliefMap(vals)
        assert belief_at(bm, (0.9, 1.2)).probs[1] == 1.0

    def test_out_of_bounds(self):
        bm = BeliefMap(np.full((2, 2, 2), 0.5))
        with pytest.raises(ArgumentError):
            belief_at(bm, PixelCoord(2, 0))

    def test_rejects_unnormalized_pixel(self):
        vals = np.full((2, 2, 2), 0.5)
        vals[0, 0] = [0.6, 0.6]
        with pytest.raises(ArgumentError):
            BeliefMap(vals)
