"""Dense features, DoG detection, descriptors, and matching."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupreg.features import (DESCRIPTOR_SIZE, FeatureFrame, FeatureSet,
                               compute_descriptor_at, dense_grid_shape,
                               dense_sample, describe_keypoints,
                               detect_dog_keypoints, distance_ratio_match,
                               top_k_matches, EPS_DIV)
from groupreg.image import ImageGrid
from groupreg.synth import road_texture


def texture_image(size=256, seed=0):
    return ImageGrid(road_texture(size, seed))


def rot90_image(img: ImageGrid) -> ImageGrid:
    """Rotate the raster 90 degrees counterclockwise in pixel space."""
    return ImageGrid(np.rot90(img.pixels).copy(), img.meters_per_px)


def random_featureset(rng, n):
    desc = rng.random((n, DESCRIPTOR_SIZE)).astype(np.float32)
    return FeatureSet(rng.uniform(-50, 50, n), rng.uniform(-50, 50, n),
                      np.full(n, 10.0), rng.uniform(0, 2 * np.pi, n), desc)


class TestDenseGrid:
    def test_production_scale_grid_arithmetic(self):
        # 5000 x 5000 m image, 40 m step, 240 m support
        assert dense_grid_shape(5000, 5000, 40, 240) == (119, 119)

    def test_small_image_counts(self):
        img = texture_image(256)
        feats = dense_sample(img, step=10.0, support=48.0)
        per_axis = int(np.floor((256 - 1 - 48) / 10)) + 1
        assert len(feats) == per_axis ** 2

    def test_constant_image_yields_no_features(self):
        img = ImageGrid(np.full((128, 128), 0.5))
        feats = dense_sample(img, step=10.0, support=48.0)
        assert len(feats) == 0

    def test_image_smaller_than_support_warns(self):
        img = texture_image(64)
        with pytest.warns(UserWarning):
            feats = dense_sample(img, step=10.0, support=80.0)
        assert len(feats) == 0

    def test_descriptor_norm_properties(self):
        feats = dense_sample(texture_image(128), step=16.0, support=48.0)
        norms = np.linalg.norm(feats.descriptors, axis=1)
        assert np.all(norms > 0)
        assert np.all(norms <= 1.0 + 1e-5)
        assert np.all(feats.descriptors >= 0)


class TestRotationEquivariance:
    def test_90deg_rotation_descriptor_match(self):
        img = texture_image(256, seed=2)
        rot = rot90_image(img)
        # np.rot90 maps pixel (r, c) -> (H-1-c, r): center-origin meters
        # (x, y) -> (y, -x)
        feats = dense_sample(img, step=16.0, support=48.0)
        sims = []
        for i in range(0, len(feats), 7):
            x, y = feats.x[i], feats.y[i]
            fr = FeatureFrame(y, -x, feats.sigma[i], 0.0)
            try:
                # pixel rot90 turns content by gamma = -90 deg in the
                # p' = R(gamma) p convention; matching orientations satisfy
                # theta_orig - theta_rot = gamma
                d_rot = compute_descriptor_at(
                    rot, fr, (feats.theta[i] + np.pi / 2) % (2 * np.pi))
            except ValueError:
                continue
            d = feats.descriptors[i]
            denom = np.linalg.norm(d) * np.linalg.norm(d_rot)
            if denom > 0:
                sims.append(float(d @ d_rot) / denom)
        assert len(sims) > 20
        assert np.mean(sims) > 0.9


class TestDogKeypoints:
    def test_blank_image_empty(self):
        assert detect_dog_keypoints(ImageGrid(np.zeros((64, 64)))) == []

    def test_single_blob_detected(self):
        size = 128
        yy, xx = np.mgrid[0:size, 0:size]
        c = (size - 1) / 2.0
        blob = np.exp(-(((xx - c) ** 2 + (yy - c) ** 2) / (2 * 8.0 ** 2)))
        frames = detect_dog_keypoints(ImageGrid(blob * 0.9))
        assert len(frames) >= 1
        best = min(frames, key=lambda f: f.x ** 2 + f.y ** 2)
        assert np.hypot(best.x, best.y) <= 2.0
        assert 8.0 / 1.5 <= best.sigma <= 8.0 * 1.5

    def test_count_roughly_rotation_invariant(self):
        img = texture_image(256, seed=5)
        n = len(detect_dog_keypoints(img))
        n_rot = len(detect_dog_keypoints(rot90_image(img)))
        assert n > 0
        assert abs(n - n_rot) <= 0.2 * n

    def test_deterministic(self):
        img = texture_image(128, seed=6)
        assert detect_dog_keypoints(img) == detect_dog_keypoints(img)


class TestDescriptorAt:
    def test_forced_dominant_equals_dense(self):
        img = texture_image(128, seed=1)
        feats = dense_sample(img, step=16.0, support=48.0)
        i = len(feats) // 2
        d = compute_descriptor_at(
            img, FeatureFrame(feats.x[i], feats.y[i], feats.sigma[i], 0.0),
            feats.theta[i])
        assert np.allclose(d, feats.descriptors[i], atol=1e-6)

    def test_zero_gradient_patch_zero_vector(self):
        img = ImageGrid(np.full((128, 128), 0.25))
        d = compute_descriptor_at(img, FeatureFrame(0, 0, 24.0, 0.0), 0.0)
        assert np.all(d == 0)

    def test_support_outside_image_rejected(self):
        img = texture_image(128)
        with pytest.raises(ValueError):
            compute_descriptor_at(img, FeatureFrame(60.0, 0.0, 24.0, 0.0), 0.0)


class TestTopKMatches:
    def test_k_exceeding_cross_product_returns_all(self):
        rng = np.random.default_rng(0)
        fa, fb = random_featureset(rng, 5), random_featureset(rng, 7)
        m = top_k_matches(fa, fb, 1000)
        assert len(m) == 35

    def test_identical_descriptors_hit_guard(self):
        desc = np.random.default_rng(1).random((1, DESCRIPTOR_SIZE)).astype(np.float32)
        fa = FeatureSet([0.0], [0.0], [10.0], [0.0], desc)
        fb = FeatureSet([1.0], [1.0], [10.0], [0.0], desc.copy())
        m = top_k_matches(fa, fb, 1)
        assert np.isclose(m.similarity[0], 1.0 / EPS_DIV, rtol=1e-3)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        fa, fb = random_featureset(rng, 200), random_featureset(rng, 200)
        m = top_k_matches(fa, fb, 50)
        d = np.linalg.norm(
            fa.descriptors.astype(np.float64)[:, None, :]
            - fb.descriptors.astype(np.float64)[None, :, :], axis=2)
        sims = 1.0 / (d + EPS_DIV)
        best = np.sort(sims.ravel())[::-1][:50]
        assert np.allclose(np.sort(m.similarity)[::-1], best, rtol=1e-9)

    def test_similarity_non_increasing(self):
        rng = np.random.default_rng(3)
        m = top_k_matches(random_featureset(rng, 40), random_featureset(rng, 40),
                          100)
        assert np.all(np.diff(m.similarity) <= 1e-15)

    @given(st.integers(1, 60))
    @settings(max_examples=20, deadline=None)
    def test_returns_exactly_k(self, k):
        rng = np.random.default_rng(4)
        m = top_k_matches(random_featureset(rng, 10), random_featureset(rng, 10), k)
        assert len(m) == min(k, 100)


class TestDistanceRatio:
    def test_clear_winner_accepted(self):
        rng = np.random.default_rng(5)
        q = rng.random((1, DESCRIPTOR_SIZE)).astype(np.float32)
        far = (q + 5.0).astype(np.float32)
        fa = FeatureSet([0.0], [0.0], [10.0], [0.0], q)
        fb = FeatureSet([0, 1], [0, 1], [10, 10], [0, 0], np.vstack([q, far]))
        m = distance_ratio_match(fa, fb, 0.7)
        assert len(m) == 1 and m.ib[0] == 0

    def test_equidistant_tie_rejected(self):
        q = np.zeros((1, DESCRIPTOR_SIZE), np.float32)
        b0 = np.zeros(DESCRIPTOR_SIZE, np.float32)
        b0[0] = 1.0
        b1 = np.zeros(DESCRIPTOR_SIZE, np.float32)
        b1[1] = 1.0
        fa = FeatureSet([0.0], [0.0], [10.0], [0.0], q)
        fb = FeatureSet([0, 1], [0, 1], [10, 10], [0, 0], np.vstack([b0, b1]))
        assert len(distance_ratio_match(fa, fb, 0.99)) == 0

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(6)
        fa, fb = random_featureset(rng, 100), random_featureset(rng, 100)
        m = distance_ratio_match(fa, fb, 0.97)
        d = np.linalg.norm(
            fa.descriptors.astype(np.float64)[:, None, :]
            - fb.descriptors.astype(np.float64)[None, :, :], axis=2)
        expected = {}
        for i in range(100):
            order = np.argsort(d[i])
            if d[i][order[1]] > 0 and d[i][order[0]] / d[i][order[1]] < 0.97:
                expected[i] = order[0]
        assert dict(zip(m.ia.tolist(), m.ib.tolist())) == expected

    def test_tau_bounds_enforced(self):
        rng = np.random.default_rng(7)
        fa, fb = random_featureset(rng, 4), random_featureset(rng, 4)
        with pytest.raises(ValueError):
            distance_ratio_match(fa, fb, 1.0)
