"""Rigid transform and homography algebra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupreg.geometry import (DegenerateHomographyError, Homography,
                               RigidTransform, apply_homography, apply_rigid,
                               compose_homography, compose_rigid,
                               compose_via_reference, invert_rigid,
                               normalize_angle, rigid_to_homography)

finite_coord = st.floats(-1e4, 1e4, allow_nan=False)
any_angle = st.floats(-50.0, 50.0, allow_nan=False)
rigid_st = st.builds(RigidTransform, finite_coord, finite_coord, any_angle)


def rigid_matrix_oracle(t):
    """Homogeneous 3x3 matrix of a rigid transform, built independently."""
    c, s = np.cos(t.gamma), np.sin(t.gamma)
    return np.array([[c, -s, t.vx], [s, c, t.vy], [0, 0, 1]])


class TestApplyRigid:
    def test_identity(self):
        assert np.allclose(apply_rigid(RigidTransform(0, 0, 0), [5.0, 7.0]),
                           [5.0, 7.0])

    def test_quarter_turn_with_shift(self):
        p = apply_rigid(RigidTransform(10, 0, np.pi / 2), [1.0, 0.0])
        assert np.allclose(p, [10.0, 1.0], atol=1e-12)

    def test_half_turn(self):
        p = apply_rigid(RigidTransform(3, -4, np.pi), [2.0, 2.0])
        assert np.allclose(p, [1.0, -6.0], atol=1e-12)

    def test_batch_shape(self):
        pts = np.random.default_rng(0).normal(size=(17, 2))
        out = apply_rigid(RigidTransform(1, 2, 0.3), pts)
        assert out.shape == (17, 2)


class TestInvertRigid:
    def test_identity(self):
        t = invert_rigid(RigidTransform(0, 0, 0))
        assert (t.vx, t.vy, t.gamma) == (0.0, 0.0, 0.0)

    def test_quarter_turn(self):
        t = invert_rigid(RigidTransform(10, 0, np.pi / 2))
        assert np.allclose([t.vx, t.vy], [0.0, 10.0], atol=1e-12)
        assert np.isclose(t.gamma, 3 * np.pi / 2)

    @given(rigid_st)
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, t):
        pts = np.random.default_rng(1).uniform(-100, 100, size=(100, 2))
        back = apply_rigid(invert_rigid(t), apply_rigid(t, pts))
        assert np.allclose(back, pts, atol=1e-9)


class TestComposeViaReference:
    def test_self_composition_is_identity(self):
        t = RigidTransform(12.0, -3.0, 1.234)
        c = compose_via_reference(t, t)
        assert abs(c.vx) < 1e-9 and abs(c.vy) < 1e-9
        assert min(c.gamma, 2 * np.pi - c.gamma) < 1e-9

    def test_identity_second_operand(self):
        c = compose_via_reference(RigidTransform(5, 0, 0), RigidTransform(0, 0, 0))
        assert np.allclose([c.vx, c.vy, c.gamma], [5, 0, 0])

    def test_matrix_oracle_example(self):
        tk = RigidTransform(10, 0, np.pi / 2)
        tl = RigidTransform(0, 10, np.pi / 2)
        c = compose_via_reference(tk, tl)
        expect = np.linalg.inv(rigid_matrix_oracle(tl)) @ rigid_matrix_oracle(tk)
        assert np.allclose(rigid_matrix_oracle(c), expect, atol=1e-9)

    def test_rotation_is_difference(self):
        tk = RigidTransform(1, 2, 2.0)
        tl = RigidTransform(3, 4, 0.5)
        c = compose_via_reference(tk, tl)
        assert np.isclose(c.gamma, normalize_angle(2.0 - 0.5))

    @given(rigid_st, rigid_st)
    @settings(max_examples=100, deadline=None)
    def test_homography_equivalence(self, tk, tl):
        pts = np.random.default_rng(2).uniform(-50, 50, size=(20, 2))
        lhs = apply_homography(rigid_to_homography(compose_via_reference(tk, tl)),
                               pts)
        rhs = apply_homography(
            compose_homography(rigid_to_homography(tl).inverse(),
                               rigid_to_homography(tk)), pts)
        assert np.allclose(lhs, rhs, atol=1e-9)


class TestAngles:
    @given(any_angle)
    @settings(max_examples=200, deadline=None)
    def test_normalized_range(self, g):
        t = RigidTransform(0, 0, g)
        assert 0.0 <= t.gamma < 2 * np.pi

    def test_wrap_boundary(self):
        assert normalize_angle(2 * np.pi) == 0.0
        assert normalize_angle(-1e-18) < 2 * np.pi


class TestHomography:
    def test_rigid_identity_matrix(self):
        h = rigid_to_homography(RigidTransform(0, 0, 0))
        assert np.allclose(h.h, np.eye(3))

    def test_rigid_quarter_turn_matrix(self):
        h = rigid_to_homography(RigidTransform(10, 0, np.pi / 2))
        assert np.allclose(h.h, [[0, -1, 10], [1, 0, 0], [0, 0, 1]], atol=1e-12)

    def test_compose_identity(self):
        i = Homography.identity()
        assert np.allclose(compose_homography(i, i).h, np.eye(3))

    def test_compose_with_inverse(self):
        h = Homography(np.array([[1.1, 0.02, 3.0], [-0.01, 0.95, -2.0],
                                 [1e-4, -2e-4, 1.0]]))
        assert np.allclose(compose_homography(h, h.inverse()).h, np.eye(3),
                           atol=1e-9)

    def test_compose_matches_point_mapping(self):
        rng = np.random.default_rng(3)
        a = Homography(np.eye(3) + 0.05 * rng.normal(size=(3, 3)))
        b = Homography(np.eye(3) + 0.05 * rng.normal(size=(3, 3)))
        pts = rng.uniform(-10, 10, size=(100, 2))
        assert np.allclose(apply_homography(compose_homography(a, b), pts),
                           apply_homography(a, apply_homography(b, pts)),
                           atol=1e-9)

    def test_singular_rejected(self):
        with pytest.raises(DegenerateHomographyError):
            Homography(np.zeros((3, 3)))

    def test_rigid_round_trip_points(self):
        t = RigidTransform(-7.5, 2.25, 0.77)
        pts = np.random.default_rng(4).uniform(-100, 100, size=(100, 2))
        assert np.allclose(apply_homography(rigid_to_homography(t), pts),
                           apply_rigid(t, pts), atol=1e-12)


class TestComposeRigid:
    @given(rigid_st, rigid_st)
    @settings(max_examples=100, deadline=None)
    def test_matches_matrix_product(self, a, b):
        c = compose_rigid(a, b)
        assert np.allclose(rigid_matrix_oracle(c),
                           rigid_matrix_oracle(a) @ rigid_matrix_oracle(b),
                           atol=1e-9)
