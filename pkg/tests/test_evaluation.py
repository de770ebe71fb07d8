"""Accuracy metrics, the chained-matching baseline, and result CSV formats."""

import numpy as np
import pytest

from groupreg.evaluation import (EvaluationError, GroundTruthCorrespondences,
                                 inlier_ratio, load_ground_truth, load_metrics,
                                 rigid_component_errors, rmse,
                                 save_ground_truth, save_metrics,
                                 topology_baseline)
from groupreg.geometry import (Homography, RigidTransform, apply_homography,
                               apply_rigid, rigid_to_homography)
from groupreg.image import ImageGrid
from groupreg.synth import Corruption, SyntheticScenario, generate_scenario


@pytest.fixture(scope="module")
def baseline_pair():
    transforms = (RigidTransform(25.0, -40.0, np.radians(75.0)),
                  RigidTransform(-30.0, 15.0, np.radians(290.0)))
    spec = SyntheticScenario(512, transforms, texture_seed=21,
                             corruption=Corruption(0.1, 0.0, 0.01))
    return spec, generate_scenario(spec)


class TestGroundTruthCorrespondences:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            GroundTruthCorrespondences(np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(ValueError):
            GroundTruthCorrespondences(np.zeros((0, 2)), np.zeros((0, 2)))

    def test_arrays_read_only(self):
        gt = GroundTruthCorrespondences([[0.0, 0.0]], [[1.0, 1.0]])
        with pytest.raises(ValueError):
            gt.image_points[0, 0] = 5.0


class TestRmse:
    def test_hand_computed_value(self):
        # identity transform: residuals are (3,4) and (0,0)
        gt = GroundTruthCorrespondences([[0.0, 0.0], [10.0, 10.0]],
                                        [[3.0, 4.0], [10.0, 10.0]])
        # sqrt((25 + 0) / 2)
        assert np.isclose(rmse(gt, RigidTransform.identity()),
                          np.sqrt(12.5))

    def test_zero_for_exact_rigid(self):
        t = RigidTransform(7.0, -3.0, 1.1)
        rng = np.random.default_rng(0)
        pa = rng.uniform(-100, 100, (20, 2))
        gt = GroundTruthCorrespondences(pa, apply_rigid(t, pa))
        assert rmse(gt, t) < 1e-12

    def test_zero_for_exact_homography(self):
        h = rigid_to_homography(RigidTransform(7.0, -3.0, 1.1))
        rng = np.random.default_rng(1)
        pa = rng.uniform(-100, 100, (20, 2))
        gt = GroundTruthCorrespondences(pa, apply_homography(h, pa))
        assert rmse(gt, h) < 1e-12


class TestRigidComponentErrors:
    def test_hand_computed(self):
        a = RigidTransform(3.0, 4.0, np.radians(10.0))
        b = RigidTransform(0.0, 0.0, np.radians(30.0))
        dv, dg = rigid_component_errors(a, b)
        assert np.isclose(dv, 5.0)
        assert np.isclose(dg, 20.0)

    def test_rotation_wraps_to_half_turn(self):
        a = RigidTransform(0, 0, np.radians(359.0))
        b = RigidTransform(0, 0, np.radians(1.0))
        _, dg = rigid_component_errors(a, b)
        assert np.isclose(dg, 2.0)

    def test_never_exceeds_180(self):
        a = RigidTransform(0, 0, np.radians(350.0))
        b = RigidTransform(0, 0, np.radians(10.0))
        _, dg = rigid_component_errors(a, b)
        assert np.isclose(dg, 20.0)


class TestInlierRatio:
    def test_hand_computed_fraction(self):
        pa = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [30.0, 0.0]])
        pb = pa.copy()
        pb[2] += 100.0                       # one gross outlier
        assert np.isclose(
            inlier_ratio(pa, pb, RigidTransform.identity(), 5.0), 0.75)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(2)
        pa = rng.uniform(-100, 100, (200, 2))
        pb = pa + rng.normal(0, 10.0, pa.shape)
        ratios = [inlier_ratio(pa, pb, RigidTransform.identity(), d)
                  for d in np.linspace(0.5, 50.0, 20)]
        assert all(b >= a for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] > ratios[0]

    def test_callable_mapping(self):
        pa = np.array([[1.0, 2.0]])
        pb = np.array([[2.0, 4.0]])
        assert inlier_ratio(pa, pb, lambda p: 2.0 * p, 0.1) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(EvaluationError):
            inlier_ratio(np.zeros((0, 2)), np.zeros((0, 2)),
                         RigidTransform.identity(), 5.0)


class TestTopologyBaseline:
    def test_registers_planted_pair(self, baseline_pair):
        spec, data = baseline_pair
        homs, paths = topology_baseline(data.historical, data.reference,
                                        step=10.0, support=48.0)
        for k, hom in enumerate(homs):
            assert hom is not None
            assert paths[k][0] == k and paths[k][-1] == 2
            gt = data.ground_truth[k]
            err = np.hypot(*(apply_homography(hom, gt[:, 0]) - gt[:, 1]).T)
            assert np.sqrt((err ** 2).mean()) < 5.0

    def test_unmatchable_images_get_none(self, baseline_pair):
        _, data = baseline_pair
        rng = np.random.default_rng(3)
        noise = ImageGrid(rng.random(data.reference.pixels.shape))
        homs, paths = topology_baseline([noise], data.reference,
                                        step=10.0, support=48.0)
        assert homs == [None] and paths == [None]


class TestGroundTruthCsv:
    def test_round_trip(self, tmp_path):
        per_image = {
            0: GroundTruthCorrespondences([[1.25, -3.5]], [[4.0, 5.0]]),
            2: GroundTruthCorrespondences([[0.1, 0.2], [0.3, 0.4]],
                                          [[1.0, 2.0], [3.0, 4.0]]),
        }
        p = tmp_path / "gt.csv"
        save_ground_truth(p, per_image)
        loaded = load_ground_truth(p)
        assert set(loaded) == {0, 2}
        for k in per_image:
            assert np.array_equal(loaded[k].image_points,
                                  per_image[k].image_points)
            assert np.array_equal(loaded[k].reference_points,
                                  per_image[k].reference_points)

    def test_header_layout(self, tmp_path):
        p = tmp_path / "gt.csv"
        save_ground_truth(p, {0: GroundTruthCorrespondences([[1.0, 2.0]],
                                                            [[3.0, 4.0]])})
        lines = p.read_text().splitlines()
        assert lines[0] == ("# coordinates in meters, image-center origin, "
                            "x right, y down")
        assert lines[1] == "image_id,x_hist,y_hist,x_opm,y_opm"

    def test_missing_convention_rejected(self, tmp_path):
        p = tmp_path / "gt.csv"
        p.write_text("image_id,x_hist,y_hist,x_opm,y_opm\n0,1,2,3,4\n")
        with pytest.raises(EvaluationError):
            load_ground_truth(p)


class TestMetricsCsv:
    def test_round_trip_with_missing_values(self, tmp_path):
        rows = [(0, 1.5, 0.75, 2.0), (1, 3.25, None, None)]
        p = tmp_path / "metrics.csv"
        save_metrics(p, rows)
        assert load_metrics(p) == rows
        assert p.read_text().splitlines()[0] == \
            "image_id,rmse_m,trans_err_m,rot_err_deg"

    def test_bad_header_rejected(self, tmp_path):
        p = tmp_path / "metrics.csv"
        p.write_text("id,rmse\n0,1.0\n")
        with pytest.raises(EvaluationError):
            load_metrics(p)
