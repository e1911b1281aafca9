"""Noise models, scene generation, shapes, the selection bound, and the
Monte Carlo harnesses at quick desk scale."""

import json
import math

import numpy as np
import pytest

from percopick import (
    DetectParams,
    SceneSpec,
    TruncatedGaussianNoise,
    UniformNoise,
    annulus_gap_mask,
    disc_mask,
    find_clear_square,
    generate_scene,
    l_shape_mask,
    load_scene,
    mask_contains_square,
    mc_consistency,
    mc_detection,
    percolation_phase,
    place_shape,
    window_selection_bound,
    scene_from_dict,
    shape_library,
    square_mask,
)


def simple_scene(n=128, a=0.3, b=0.7, phi0=32, phi1=8, boxes=((70, 70, 20),)):
    """Square particles plus a guaranteed clear square in the top-left corner."""
    masks = tuple(place_shape(n, square_mask(side), r, c) for r, c, side in boxes)
    return SceneSpec(
        n=n, a=a, b=b, particles=masks,
        noise_square=(0, 0), noise_square_side=phi0, min_particle_square=phi1,
    )


class TestNoiseModels:
    def test_uniform_moments(self):
        noise = UniformNoise(half_width=0.2)
        assert noise.bound == 0.2
        assert noise.variance == pytest.approx(0.04 / 3)
        rng = np.random.default_rng(1)
        x = noise.sample(rng, (400, 400))
        assert abs(x.mean()) < 4 * noise.sigma / 400
        assert x.var() == pytest.approx(noise.variance, rel=0.05)

    def test_uniform_bounded_exactly(self):
        x = UniformNoise(0.2).sample(np.random.default_rng(2), 10**5)
        assert np.all(np.abs(x) <= 0.2)

    def test_uniform_symmetry(self):
        x = UniformNoise(0.2).sample(np.random.default_rng(3), 10**5)
        n = x.size
        assert abs((x >= 0).mean() - 0.5) < 4 / math.sqrt(n)

    def test_zero_width_uniform_is_silent(self):
        x = UniformNoise(0.0).sample(np.random.default_rng(4), (8, 8))
        assert np.all(x == 0.0)

    def test_truncated_gaussian_bounded_exactly(self):
        noise = TruncatedGaussianNoise(sigma_raw=1.0, bound=1.0)
        x = noise.sample(np.random.default_rng(5), 10**5)
        assert np.all(np.abs(x) <= 1.0)

    def test_truncated_gaussian_variance_formula(self):
        # variance of N(0,1) truncated to [-1, 1] is 1 - 2*pdf(1)/erf(1/sqrt(2))
        noise = TruncatedGaussianNoise(sigma_raw=1.0, bound=1.0)
        pdf1 = math.exp(-0.5) / math.sqrt(2 * math.pi)
        expected = 1.0 - 2.0 * pdf1 / math.erf(1 / math.sqrt(2))
        assert noise.variance == pytest.approx(expected, rel=1e-12)
        x = noise.sample(np.random.default_rng(6), 10**6)
        assert x.var() == pytest.approx(noise.variance, rel=0.05)
        assert abs(x.mean()) < 4 * noise.sigma / 1000

    def test_wide_truncation_approaches_raw_variance(self):
        noise = TruncatedGaussianNoise(sigma_raw=1.0, bound=8.0)
        assert noise.variance == pytest.approx(1.0, rel=1e-6)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            UniformNoise(half_width=-0.1)
        with pytest.raises(ValueError):
            TruncatedGaussianNoise(sigma_raw=0.0, bound=1.0)
        with pytest.raises(ValueError):
            TruncatedGaussianNoise(sigma_raw=1.0, bound=0.0)


class TestShapes:
    def test_square_pixel_count(self):
        assert square_mask(10).sum() == 100

    def test_l_shape_count_and_contained_square(self):
        mask = l_shape_mask(12, 6)
        assert mask.sum() == 6 * 12 + 6 * 6
        assert mask_contains_square(mask, 6)
        assert not mask_contains_square(mask, 7)

    def test_l_shape_is_nonconvex(self):
        mask = l_shape_mask(12, 6)
        # midpoint of two mask pixels falls outside the mask
        assert mask[0, 0] and mask[0, 11] is not None
        assert mask[0, 0] and mask[11, 11]
        assert not mask[0, 11]

    def test_disc_count_matches_enumeration(self):
        for radius in (3, 5, 8):
            mask = disc_mask(radius)
            count = 0
            for i in range(2 * radius + 1):
                for j in range(2 * radius + 1):
                    if (i - radius) ** 2 + (j - radius) ** 2 <= radius**2:
                        count += 1
            assert mask.sum() == count

    def test_annulus_gap_nonconvex_and_holds_square(self):
        mask = annulus_gap_mask(24, 8, 4)
        assert not mask[24, 24]            # center hollow
        assert not mask[40, 24]            # gap channel below center
        assert mask_contains_square(mask, 12)

    def test_shape_library_dispatch(self):
        assert shape_library("square", 4).shape == (4, 4)
        assert shape_library("disc", 5).shape == (11, 11)
        assert shape_library("l_shape", 12).sum() == l_shape_mask(12, 6).sum()
        assert shape_library("annulus_gap", 24).any()
        with pytest.raises(ValueError):
            shape_library("pentagon", 5)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            l_shape_mask(4, 4)
        with pytest.raises(ValueError):
            annulus_gap_mask(5, 5, 1)
        with pytest.raises(ValueError):
            disc_mask(0)

    def test_place_shape_bounds(self):
        with pytest.raises(ValueError):
            place_shape(16, square_mask(8), 10, 0)


class TestSceneSpec:
    def test_valid_scene(self):
        spec = simple_scene()
        assert len(spec.particles) == 1
        assert spec.truth_image[0, 0] == 0.3
        assert spec.truth_image[75, 75] == 0.7

    def test_overlapping_particles_rejected(self):
        masks = (
            place_shape(64, square_mask(10), 40, 40),
            place_shape(64, square_mask(10), 45, 45),
        )
        with pytest.raises(ValueError, match="overlap"):
            SceneSpec(n=64, a=0.0, b=1.0, particles=masks,
                      noise_square=(0, 0), noise_square_side=16, min_particle_square=4)

    def test_particle_on_noise_square_rejected(self):
        masks = (place_shape(64, square_mask(10), 2, 2),)
        with pytest.raises(ValueError, match="noise square"):
            SceneSpec(n=64, a=0.0, b=1.0, particles=masks,
                      noise_square=(0, 0), noise_square_side=16, min_particle_square=4)

    def test_mask_without_full_square_rejected(self):
        sparse = np.zeros((64, 64), dtype=bool)
        sparse[40, ::2] = True
        with pytest.raises(ValueError, match="no full"):
            SceneSpec(n=64, a=0.0, b=1.0, particles=(sparse,),
                      noise_square=(0, 0), noise_square_side=16, min_particle_square=4)

    def test_b_not_above_a_rejected(self):
        with pytest.raises(ValueError):
            SceneSpec(n=16, a=0.5, b=0.5, particles=(),
                      noise_square=(0, 0), noise_square_side=4, min_particle_square=2)

    def test_noise_square_outside_frame_rejected(self):
        with pytest.raises(ValueError):
            SceneSpec(n=16, a=0.0, b=1.0, particles=(),
                      noise_square=(10, 10), noise_square_side=8, min_particle_square=2)


class TestGenerateScene:
    def test_no_particles_no_noise_is_constant(self):
        spec = SceneSpec(n=32, a=0.4, b=1.0, particles=(),
                         noise_square=(0, 0), noise_square_side=8, min_particle_square=2)
        img, masks = generate_scene(spec, UniformNoise(0.0), 0)
        assert np.all(img.pixels == 0.4)
        assert masks == ()

    def test_noiseless_two_level(self):
        spec = simple_scene(boxes=((60, 60, 10),))
        img, _ = generate_scene(spec, UniformNoise(0.0), 0)
        values = np.unique(img.pixels)
        assert values.tolist() == [0.3, 0.7]
        assert img.pixels[65, 65] == 0.7

    def test_reproducible_and_seed_sensitive(self):
        spec = simple_scene()
        noise = UniformNoise(0.2)
        img1, _ = generate_scene(spec, noise, 42)
        img2, _ = generate_scene(spec, noise, 42)
        img3, _ = generate_scene(spec, noise, 43)
        assert np.array_equal(img1.pixels, img2.pixels)
        assert not np.array_equal(img1.pixels, img3.pixels)

    def test_off_mask_noise_moments(self):
        spec = simple_scene(n=256, phi0=64, boxes=((100, 100, 40),))
        img, masks = generate_scene(spec, UniformNoise(0.2), 7)
        off = img.pixels[~masks[0]] - 0.3
        assert abs(off.mean()) < 0.005
        assert off.var() == pytest.approx(0.04 / 3, rel=0.05)

    def test_midpoint_threshold_straddles_criticality(self):
        # with theta = (a+b)/2 and symmetric noise, the background black
        # fraction sits below 1/2 and the particle fraction above, each by a
        # clear margin even at contrast 0.1 under +/-0.25 noise
        spec = simple_scene(n=256, a=0.45, b=0.55, phi0=64, boxes=((100, 100, 80),))
        img, masks = generate_scene(spec, UniformNoise(0.25), 11)
        theta = (0.45 + 0.55) / 2
        black = img.pixels >= theta
        p_background = black[~masks[0]].mean()
        p_particle = black[masks[0]].mean()
        assert p_background <= 0.5 - 0.02
        assert p_particle >= 0.5 + 0.02


class TestSceneJson:
    DOC = {
        "n": 96,
        "a": 0.2,
        "b": 0.8,
        "phi0": 24,
        "phi1": 6,
        "shapes": [
            {"kind": "l_shape", "size": 16, "row": 50, "col": 10},
            {"kind": "disc", "size": 8, "row": 50, "col": 60},
        ],
        "noise": {"kind": "uniform", "half_width": 0.15},
    }

    def test_round_trip_from_file(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(self.DOC))
        spec, noise = load_scene(path)
        assert spec.n == 96
        assert len(spec.particles) == 2
        assert noise == UniformNoise(0.15)

    def test_auto_placed_noise_square_is_clear(self):
        spec, _ = scene_from_dict(self.DOC)
        r, c = spec.noise_square
        union = np.zeros((96, 96), dtype=bool)
        for m in spec.particles:
            union |= m
        assert not union[r : r + 24, c : c + 24].any()

    def test_explicit_noise_square(self):
        doc = dict(self.DOC, noise_square=[0, 40])
        spec, _ = scene_from_dict(doc)
        assert spec.noise_square == (0, 40)

    def test_truncated_gaussian_noise_doc(self):
        doc = dict(self.DOC, noise={"kind": "truncated_gaussian", "sigma_raw": 0.1, "bound": 0.2})
        _, noise = scene_from_dict(doc)
        assert noise == TruncatedGaussianNoise(sigma_raw=0.1, bound=0.2)

    def test_unknown_noise_kind(self):
        with pytest.raises(ValueError, match="noise kind"):
            scene_from_dict(dict(self.DOC, noise={"kind": "cauchy"}))

    def test_no_room_for_noise_square(self):
        doc = dict(self.DOC, n=20, phi0=20,
                   shapes=[{"kind": "square", "size": 8, "row": 6, "col": 6}])
        with pytest.raises(ValueError, match="no noise-only square"):
            scene_from_dict(doc)


class TestFindClearSquare:
    def test_first_row_major_position(self):
        masks = [place_shape(32, square_mask(8), 0, 0)]
        assert find_clear_square(32, masks, 8) == (0, 8)

    def test_no_particles_gives_origin(self):
        assert find_clear_square(32, [], 8) == (0, 0)


class TestWindowSelectionBound:
    def test_zero_s1_is_vacuous(self):
        result = window_selection_bound([0], [100], b_minus_a=1, sigma=1, bound_m=1)
        assert result.raw_sum == 1.0
        assert result.clipped == 1.0

    def test_direct_evaluation(self):
        # exp(-3*100^2 / (12*100 + 4*100)) = exp(-18.75)
        result = window_selection_bound([100], [100], b_minus_a=1.0, sigma=1.0, bound_m=1.0)
        assert result.raw_sum == pytest.approx(math.exp(-18.75), rel=1e-12)
        assert result.clipped == result.raw_sum

    def test_doubling_s1_strictly_decreases_term(self):
        small = window_selection_bound([50], [100], 1.0, 1.0, 1.0).raw_sum
        large = window_selection_bound([100], [100], 1.0, 1.0, 1.0).raw_sum
        assert large < small

    def test_monotone_in_excess_and_sigma(self):
        base = window_selection_bound([50], [100], 1.0, 1.0, 1.0).raw_sum
        assert window_selection_bound([50], [200], 1.0, 1.0, 1.0).raw_sum >= base
        assert window_selection_bound([50], [100], 1.0, 2.0, 1.0).raw_sum >= base

    def test_sum_over_windows_and_clipping(self):
        result = window_selection_bound([0, 0, 100], [0, 50, 100], 1.0, 1.0, 1.0)
        assert result.raw_sum == pytest.approx(2.0 + math.exp(-18.75), rel=1e-12)
        assert result.clipped == 1.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(s1_list=[-1], excess_list=[0]),
            dict(s1_list=[1], excess_list=[-2]),
            dict(s1_list=[1, 2], excess_list=[1]),
            dict(s1_list=[1], excess_list=[1], b_minus_a=0.0),
            dict(s1_list=[1], excess_list=[1], sigma=0.0),
            dict(s1_list=[1], excess_list=[1], bound_m=-1.0),
        ],
    )
    def test_invalid_inputs(self, kwargs):
        full = dict(s1_list=[1], excess_list=[1], b_minus_a=1.0, sigma=1.0, bound_m=1.0)
        full.update(kwargs)
        with pytest.raises(ValueError):
            window_selection_bound(**full)


class TestMcConsistency:
    def test_noiseless_family_has_zero_error(self):
        # dyadic intensities keep the cumulative sums exact
        spec = simple_scene(a=0.25, b=0.75, boxes=((70, 70, 20),))
        table = mc_consistency(spec, UniformNoise(0.0), [8, 16, 32], trials=3, seed=0)
        for row in table.rows:
            assert row.median_abs_err == 0.0
        assert table.naive_median_abs_err > 0.0  # particle bias never vanishes

    def test_naive_mean_dominated_by_scan(self):
        # particles cover ~39% of the frame, so the naive mean is far off
        boxes = ((40, 40, 40), (40, 90, 30), (90, 40, 30), (88, 80, 40))
        spec = simple_scene(n=128, phi0=32, boxes=boxes)
        table = mc_consistency(spec, UniformNoise(0.2), [32], trials=20, seed=1)
        assert table.naive_median_abs_err > 10 * table.rows[0].median_abs_err

    def test_error_decreases_with_window_side(self):
        spec = simple_scene(n=128, phi0=32, boxes=((70, 70, 30),))
        table = mc_consistency(spec, UniformNoise(0.2), [8, 16, 32], trials=30, seed=2)
        errs = [row.median_abs_err for row in table.rows]
        assert errs[0] > errs[1] > errs[2]

    def test_csv_shape(self):
        spec = simple_scene()
        table = mc_consistency(spec, UniformNoise(0.1), [8, 16], trials=4, seed=3)
        lines = table.to_csv().strip().splitlines()
        assert lines[0] == "phi0,trials,median_abs_err,q25_abs_err,q75_abs_err,naive_median_abs_err"
        assert len(lines) == 3
        assert lines[1].startswith("8,4,")

    def test_parallel_jobs_match_serial(self):
        spec = simple_scene()
        noise = UniformNoise(0.2)
        serial = mc_consistency(spec, noise, [8, 16], trials=8, seed=5, jobs=1)
        parallel = mc_consistency(spec, noise, [8, 16], trials=8, seed=5, jobs=2)
        assert serial == parallel


class TestMcDetection:
    PARAMS = DetectParams(
        phi0=32, phi1=8, min_cluster_pixels=30, downsample_passes=0, normalize=False
    )

    def test_zero_noise_perfect_detection(self):
        spec = simple_scene(boxes=((70, 70, 20),))
        stats = mc_detection(spec, UniformNoise(0.0), self.PARAMS, trials=3, seed=0)
        assert stats.all_detected_fraction == 1.0
        assert stats.any_false_fraction == 0.0
        assert stats.mean_false_clusters == 0.0

    def test_moderate_noise_detection(self):
        spec = simple_scene(n=128, phi0=32, boxes=((60, 60, 30),))
        stats = mc_detection(spec, UniformNoise(0.15), self.PARAMS, trials=20, seed=1)
        assert stats.all_detected_fraction >= 0.95

    def test_forced_theta_above_noise_ceiling_never_alarms(self):
        # pure noise: background 0.3, bound 0.2, threshold 0.65 is unreachable
        spec = SceneSpec(n=256, a=0.3, b=1.0, particles=(),
                         noise_square=(0, 0), noise_square_side=64, min_particle_square=2)
        stats = mc_detection(
            spec, UniformNoise(0.2), self.PARAMS, trials=50, seed=2, theta=0.65
        )
        assert math.isnan(stats.all_detected_fraction)
        assert stats.any_false_fraction == 0.0

    def test_false_positive_rate_nonincreasing_with_size_scaled_cutoff(self):
        # the decay mechanism needs the significance cutoff to grow with n;
        # with cutoff side-proportional the rate cannot rise
        rates = []
        for n, cutoff in ((64, 30), (128, 60), (256, 120)):
            spec = SceneSpec(n=n, a=0.3, b=1.0, particles=(),
                             noise_square=(0, 0), noise_square_side=16,
                             min_particle_square=2)
            params = DetectParams(phi0=16, phi1=4, min_cluster_pixels=cutoff,
                                  downsample_passes=0, normalize=False)
            stats = mc_detection(spec, UniformNoise(0.2), params,
                                 trials=40, seed=3, theta=0.4)
            rates.append(stats.any_false_fraction)
        assert all(r2 <= r1 for r1, r2 in zip(rates, rates[1:]))

    def test_csv_shape(self):
        spec = simple_scene()
        stats = mc_detection(spec, UniformNoise(0.0), self.PARAMS, trials=2, seed=0)
        lines = stats.to_csv().strip().splitlines()
        assert lines[0].startswith("trials,n_particles,")
        assert lines[1].startswith("2,1,")

    def test_parallel_jobs_match_serial(self):
        spec = simple_scene(boxes=((70, 70, 20),))
        noise = UniformNoise(0.15)
        serial = mc_detection(spec, noise, self.PARAMS, trials=8, seed=4, jobs=1)
        parallel = mc_detection(spec, noise, self.PARAMS, trials=8, seed=4, jobs=2)
        assert serial == parallel


class TestPercolationPhase:
    def test_rows_and_reproducibility(self):
        table = percolation_phase(64, [0.4, 0.6], trials=5, seed=0)
        assert len(table.rows) == 10
        again = percolation_phase(64, [0.4, 0.6], trials=5, seed=0)
        assert table == again
        high = [r.largest_fraction for r in table.rows if r.p == 0.6]
        low = [r.largest_fraction for r in table.rows if r.p == 0.4]
        assert min(high) > max(low)

    def test_csv_header(self):
        table = percolation_phase(16, [0.5], trials=2, seed=1)
        lines = table.to_csv().strip().splitlines()
        assert lines[0] == "p,trial,largest_cluster,largest_fraction,n_clusters"
        assert len(lines) == 3
