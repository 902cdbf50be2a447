import math

import numpy as np
import pytest
from scipy.special import gammaln
from scipy.stats import dirichlet as scipy_dirichlet

from croscale.core_types import BeliefMap, PixelCoord, SimplexVec
from croscale.errors import ArgumentError
from croscale.inference import (
    DirichletModel,
    HeatMap,
    belief_profile,
    dirichlet_logpdf,
    likelihood_map,
    recall_at_k,
    render_heat_pgm,
    segmentation_render,
)


class TestDirichletLogpdf:
    def test_flat_concentration_is_log_factorial(self):
        # theta = 0: alpha all ones, density (C-1)! everywhere
        y = SimplexVec([0.2, 0.3, 0.5])
        assert dirichlet_logpdf(y, np.ones(3)) == math.log(2.0)

    def test_symmetric_concentration_value(self):
        # alpha = [3.5, 3.5], y = [0.5, 0.5]: log-gamma oracle
        got = dirichlet_logpdf(SimplexVec([0.5, 0.5]), np.array([3.5, 3.5]))
        want = gammaln(7.0) - 2 * gammaln(3.5) + 5.0 * math.log(0.5)
        assert got == pytest.approx(want, abs=1e-12)
        assert math.exp(got) == pytest.approx(2.0372, abs=5e-4)

    def test_matches_scipy_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            c = int(rng.integers(2, 6))
            alpha = rng.uniform(0.5, 8.0, size=c)
            y = rng.dirichlet(np.ones(c))
            got = dirichlet_logpdf(SimplexVec(y), alpha)
            want = scipy_dirichlet.logpdf(y, alpha)
            assert got == pytest.approx(want, rel=1e-10)

    def test_monte_carlo_normalization(self):
        # integral of the density over the C=3 simplex must be 1: uniform
        # samples on the simplex have density 2, so E[pdf]/2 = 1
        rng = np.random.default_rng(1)
        z = rng.dirichlet(np.ones(3))
        theta = rng.uniform(1.0, 6.0)
        alpha = 1.0 + theta * z
        samples = rng.dirichlet(np.ones(3), size=200_000)
        logpdfs = (gammaln(alpha.sum()) - gammaln(alpha).sum()
                   + ((alpha - 1.0) * np.log(np.maximum(samples, 1e-12))).sum(axis=1))
        est = np.exp(logpdfs).mean() / 2.0
        assert est == pytest.approx(1.0, abs=0.02)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ArgumentError):
            dirichlet_logpdf(SimplexVec([0.5, 0.5]), np.array([1.0, 0.0]))

    def test_clamps_zero_entries(self):
        out = dirichlet_logpdf(SimplexVec([1.0, 0.0]), np.array([2.0, 1.5]))
        assert math.isfinite(out)


def two_region_belief(h=8, w=8, c=3):
    vals = np.zeros((h, w, c))
    vals[:, : w // 2] = [0.8, 0.1, 0.1]
    vals[:, w // 2:] = [0.1, 0.8, 0.1]
    return BeliefMap(vals)


class TestLikelihoodMap:
    def test_theta_zero_constant(self):
        rng = np.random.default_rng(8)
        bm = BeliefMap(rng.dirichlet(np.ones(4), size=(8, 8)))
        heat = likelihood_map(bm, SimplexVec([0.4, 0.3, 0.2, 0.1]),
                              DirichletModel(theta=0.0))
        np.testing.assert_allclose(heat.log_density, gammaln(4.0), atol=1e-12)

    def test_matching_pixel_attains_maximum(self):
        rng = np.random.default_rng(2)
        vals = rng.dirichlet(np.ones(4), size=(10, 10))
        sharp = np.array([0.91, 0.03, 0.03, 0.03])
        vals[6, 3] = sharp
        bm = BeliefMap(vals)
        heat = likelihood_map(bm, SimplexVec(sharp), DirichletModel(theta=5.0))
        best = np.unravel_index(np.argmax(heat.log_density), heat.log_density.shape)
        assert best == (6, 3)

    def test_identical_reps_identical_heat(self):
        bm = two_region_belief()
        y = SimplexVec([0.5, 0.3, 0.2])
        h1 = likelihood_map(bm, y, DirichletModel(5.0))
        h2 = likelihood_map(bm, SimplexVec([0.5, 0.3, 0.2]), DirichletModel(5.0))
        np.testing.assert_array_equal(h1.log_density, h2.log_density)

    def test_matches_scalar_logpdf(self):
        bm = two_region_belief()
        y = SimplexVec([0.3, 0.6, 0.1])
        model = DirichletModel(theta=4.0)
        heat = likelihood_map(bm, y, model)
        for u, v in [(0, 0), (3, 2), (7, 7), (4, 4)]:
            alpha = 1.0 + model.theta * bm.values[u, v]
            assert heat.log_density[u, v] == pytest.approx(
                dirichlet_logpdf(y, alpha), abs=1e-10)

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            likelihood_map(two_region_belief(), SimplexVec([0.5, 0.5]),
                           DirichletModel(5.0))

    def test_sharper_theta_raises_matching_density(self):
        # at a pixel whose belief equals y exactly, density grows with theta
        vals = np.full((4, 4, 3), 1.0 / 3.0)
        y_int = np.array([0.5, 0.3, 0.2])
        vals[2, 2] = y_int
        bm = BeliefMap(vals)
        y = SimplexVec(y_int)
        prev = -np.inf
        for theta in (0.0, 2.0, 5.0, 10.0):
            heat = likelihood_map(bm, y, DirichletModel(theta))
            val = heat.log_density[2, 2]
            assert val >= prev - 1e-12
            assert val == heat.log_density.max()
            prev = val


class TestRecall:
    def make_heat(self, arr):
        return HeatMap(np.asarray(arr, dtype=np.float64))

    def test_argmax_recalled_at_one_percent(self):
        rng = np.random.default_rng(3)
        vals = rng.random((20, 20))
        vals[11, 7] = 2.0
        assert recall_at_k(self.make_heat(vals), PixelCoord(11, 7), 1.0)

    def test_constant_heat_all_tied(self):
        heat = self.make_heat(np.zeros((10, 10)))
        assert recall_at_k(heat, PixelCoord(9, 9), 1.0)

    def test_hand_ranked_4x4(self):
        # truth ranks 3rd; k = 12.5% of 16 = top 2 -> miss
        vals = np.arange(16, dtype=np.float64).reshape(4, 4)
        truth = PixelCoord(3, 1)   # value 13, two strictly greater
        assert not recall_at_k(self.make_heat(vals), truth, 12.5)
        # top 3 budget (k=18.75%) -> hit
        assert recall_at_k(self.make_heat(vals), truth, 18.75)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(4)
        vals = rng.random((16, 16))
        truth = PixelCoord(5, 5)
        heat = self.make_heat(vals)
        hits = [recall_at_k(heat, truth, k) for k in (1, 5, 10, 25, 50, 100)]
        for a, b in zip(hits, hits[1:]):
            assert (not a) or b

    def test_invalid_k(self):
        heat = self.make_heat(np.zeros((4, 4)))
        with pytest.raises(ArgumentError):
            recall_at_k(heat, PixelCoord(0, 0), 0.0)
        with pytest.raises(ArgumentError):
            recall_at_k(heat, PixelCoord(0, 0), 101.0)


class TestSegmentationRender:
    def test_one_hot_recovery(self):
        rng = np.random.default_rng(5)
        classes = rng.integers(0, 4, size=(6, 6))
        vals = np.eye(4)[classes]
        np.testing.assert_array_equal(segmentation_render(BeliefMap(vals)), classes)

    def test_uniform_ties_to_zero(self):
        bm = BeliefMap(np.full((3, 3, 4), 0.25))
        np.testing.assert_array_equal(segmentation_render(bm), np.zeros((3, 3)))

    def test_trained_render_matches_terrain_mask(self):
        # train on a two-terrain world, render a belief map, and compare to
        # the ground-truth mask under the best channel-to-class assignment
        import math

        from scipy.optimize import linear_sum_assignment

        from croscale.encoders import TrainConfig, encode_map, train
        from croscale.sampler import SampleConfig, sample_tuple
        from croscale.synth_world import WorldSpec, generate_world

        world = generate_world(WorldSpec(
            seed=21, world_size=96.0, num_terrains=2, map_scale=1.0,
            obs_scale=4.0, map_channels=3, obs_channels=2,
            noise_sigma_map=0.03, noise_sigma_obs=0.03, blur_radius_map=1,
            texture_period_obs=10.0, n_blobs=24, blob_sigma_min=6.0,
            blob_sigma_max=18.0))
        scfg = SampleConfig(patch_size=32, obs_size=16, n_obs=4)
        rng = np.random.default_rng(5)
        ds = [sample_tuple(world.map_raster, world.obs_raster, scfg, rng)
              for _ in range(8)]
        cfg = TrainConfig(C=3, lr=0.3, epochs=200, b=4, n=4, seed=2,
                          kernel_size=3, n_bins=4, plateau_patience=50)
        res = train(ds, cfg, np.random.default_rng(2))

        for dt in ds[:3]:
            render = segmentation_render(encode_map(res.map_params, dt.map_patch))
            ch = math.cos(dt.patch_pose.heading)
            sh = math.sin(dt.patch_pose.heading)
            ug, vg = np.meshgrid(np.arange(32.0), np.arange(32.0), indexing="ij")
            xs = (ch * ug - sh * vg) + dt.patch_pose.x
            ys = (sh * ug + ch * vg) + dt.patch_pose.y
            iu = np.clip(np.rint(xs * 4).astype(int), 0, world.terrain.shape[0] - 1)
            iv = np.clip(np.rint(ys * 4).astype(int), 0, world.terrain.shape[1] - 1)
            truth = world.terrain[iu, iv]
            conf = np.array(
                [[np.sum((truth == k) & (render == c)) for c in range(cfg.C)]
                 for k in range(2)], dtype=float)
            rows, cols = linear_sum_assignment(-conf)
            agreement = conf[rows, cols].sum() / truth.size
            assert agreement >= 0.80


class TestBeliefProfile:
    def test_degenerate_segment(self):
        bm = two_region_belief()
        prof = belief_profile(bm, PixelCoord(2, 2), PixelCoord(2, 2), 7)
        np.testing.assert_array_equal(prof, np.tile(bm.values[2, 2], (7, 1)))

    def test_constant_region_constant_profile(self):
        bm = two_region_belief(w=8)
        prof = belief_profile(bm, PixelCoord(1, 0), PixelCoord(6, 0), 5)
        np.testing.assert_array_equal(prof, np.tile([0.8, 0.1, 0.1], (5, 1)))

    def test_step_at_known_boundary(self):
        bm = two_region_belief(h=8, w=8)
        prof = belief_profile(bm, PixelCoord(4, 0), PixelCoord(4, 7), 8)
        first = prof[:4, 0]
        second = prof[4:, 0]
        np.testing.assert_allclose(first, 0.8)
        np.testing.assert_allclose(second, 0.1)

    def test_out_of_bounds_endpoint(self):
        bm = two_region_belief()
        with pytest.raises(ArgumentError):
            belief_profile(bm, PixelCoord(0, 0), PixelCoord(8, 0), 4)


class TestRenderPgm:
    def test_header_and_size(self):
        heat = HeatMap(np.arange(12, dtype=np.float64).reshape(3, 4))
        data = render_heat_pgm(heat)
        assert data.startswith(b"P5\n4 3\n255\n")
        assert len(data) == len(b"P5\n4 3\n255\n") + 12

    def test_min_max_normalized(self):
        heat = HeatMap(np.array([[0.0, 10.0]]))
        data = render_heat_pgm(heat)
        pixels = data.split(b"255\n", 1)[1]
        assert pixels == bytes([0, 255])
