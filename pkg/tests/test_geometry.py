import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from implicitvol import autodiff as ad
from implicitvol.geometry import (
    SlicePose,
    euler_to_matrix,
    plane_to_world,
    positional_encode,
    reference_grid,
    transform_points,
)

angles = st.floats(-np.pi, np.pi)


def dense_rotation(tx, ty, tz):
    """Independent oracle: explicit elementary rotations multiplied out."""
    rx = np.array([[1, 0, 0], [0, np.cos(tx), -np.sin(tx)], [0, np.sin(tx), np.cos(tx)]])
    ry = np.array([[np.cos(ty), 0, np.sin(ty)], [0, 1, 0], [-np.sin(ty), 0, np.cos(ty)]])
    rz = np.array([[np.cos(tz), -np.sin(tz), 0], [np.sin(tz), np.cos(tz), 0], [0, 0, 1]])
    return rz @ ry @ rx


def test_identity_angles_give_identity():
    np.testing.assert_array_equal(euler_to_matrix([0.0, 0.0, 0.0]), np.eye(3))


def test_quarter_turn_about_z():
    r = euler_to_matrix([0.0, 0.0, np.pi / 2])
    np.testing.assert_allclose(r @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(angles, angles, angles)
def test_rotation_is_proper(tx, ty, tz):
    r = euler_to_matrix([tx, ty, tz])
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(r) - 1.0) < 1e-12
    np.testing.assert_allclose(r, dense_rotation(tx, ty, tz), atol=1e-12)


def test_non_finite_angles_rejected():
    with pytest.raises(ValueError):
        euler_to_matrix([np.nan, 0.0, 0.0])
    with pytest.raises(ValueError):
        SlicePose((0.0, np.inf, 0.0))


def test_reference_grid_corners_and_center():
    g = reference_grid(2, 2)
    assert {tuple(p) for p in g.points} == {(-1, -1, 0), (1, -1, 0), (-1, 1, 0), (1, 1, 0)}
    g = reference_grid(3, 3)
    np.testing.assert_array_equal(g.points[4], [0, 0, 0])


def test_reference_grid_rectangular():
    g = reference_grid(3, 5)
    np.testing.assert_array_equal(g.points[1 * 5 + 2], [0, 0, 0])
    np.testing.assert_array_equal(g.points[0 * 5 + 4], [1, -1, 0])
    assert g.points.shape == (15, 3)


def test_reference_grid_too_small():
    with pytest.raises(ValueError):
        reference_grid(1, 4)


def test_translation_only_pose():
    g = reference_grid(3, 3)
    out = plane_to_world(g, SlicePose((0, 0, 0), (0.1, 0, 0)))
    np.testing.assert_allclose(out.points[4], [0.1, 0.0, 0.0], atol=0)


def test_rotation_only_pose():
    pts = np.array([[1.0, 0.0, 0.0]])
    out = transform_points(pts, SlicePose((0, 0, np.pi / 2)))
    np.testing.assert_allclose(out[0], [0.0, 1.0, 0.0], atol=1e-15)


def test_identity_pose_is_exact_identity():
    g = reference_grid(7, 5)
    out = plane_to_world(g, SlicePose())
    assert out.points.tobytes() == g.points.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_plane_to_world_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    pose = rng.uniform(-np.pi, np.pi, 6)
    pose[3:] *= 0.3
    pts = rng.uniform(-1, 1, (40, 3))
    expected = (dense_rotation(*pose[:3]) @ pts.T).T + pose[3:]
    np.testing.assert_allclose(transform_points(pts, pose), expected, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_composition(seed):
    rng = np.random.default_rng(seed)
    p1, p2 = rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6)
    pts = rng.uniform(-1, 1, (20, 3))
    r1, r2 = euler_to_matrix(p1[:3]), euler_to_matrix(p2[:3])
    twice = transform_points(transform_points(pts, p1), p2)
    once = pts @ (r2 @ r1).T + (r2 @ p1[3:] + p2[3:])
    np.testing.assert_allclose(twice, once, atol=1e-12)


def test_pose_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, (12, 3))
    weights = rng.normal(size=(12, 3))
    pose0 = np.array([0.3, -0.2, 0.5, 0.05, -0.1, 0.2])

    def f(pose):
        return ad.sum(ad.sin(transform_points(pts, pose)) * weights)

    assert ad.finite_diff_check(f, pose0, h=1e-6) < 1e-6


def test_encoding_length_and_layout():
    pts = np.array([[0.25, -0.5, 0.75]])
    feats = positional_encode(pts, 10)
    assert feats.shape == (1, 60)
    # axis-major, frequency-minor, sin before cos
    for axis in range(3):
        for k in range(10):
            arg = 2.0 ** k * np.pi * pts[0, axis]
            assert feats[0, axis * 20 + 2 * k] == pytest.approx(np.sin(arg), abs=1e-15)
            assert feats[0, axis * 20 + 2 * k + 1] == pytest.approx(np.cos(arg), abs=1e-15)


def test_encoding_at_zero():
    feats = positional_encode(np.zeros((1, 3)), 4)
    np.testing.assert_array_equal(feats[0], np.tile([0.0, 1.0], 12))


def test_encoding_at_one():
    feats = positional_encode(np.array([[1.0, 1.0, 1.0]]), 3)
    np.testing.assert_allclose(feats[0, :6], [0, -1, 0, 1, 0, 1], atol=1e-14)


def test_encoding_rejects_zero_depth():
    with pytest.raises(ValueError):
        positional_encode(np.zeros((1, 3)), 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_encoding_parity_and_range(xyz):
    p = np.array([xyz])
    fp, fm = positional_encode(p, 6), positional_encode(-p, 6)
    assert np.all(np.abs(fp) <= 1.0)
    np.testing.assert_allclose(fp[0, 0::2], -fm[0, 0::2], atol=1e-12)
    np.testing.assert_allclose(fp[0, 1::2], fm[0, 1::2], atol=1e-12)


def test_encoding_outside_cube_not_clamped():
    feats = positional_encode(np.array([[1.5, 0.0, 0.0]]), 1)
    assert feats[0, 0] == pytest.approx(np.sin(1.5 * np.pi))


def test_encoding_differentiable_in_coordinates():
    pts0 = np.array([0.1, -0.3, 0.7, 0.2, 0.4, -0.9])
    w = np.random.default_rng(2).normal(size=(2, 18))

    def f(x):
        return ad.sum(positional_encode(ad.reshape(x, (2, 3)), 3) * w)

    assert ad.finite_diff_check(f, pts0, h=1e-6) < 1e-6
