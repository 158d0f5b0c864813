import itertools

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shapepose.geometry import (CameraIntrinsics, PointCloud, Pose, axis_angle_to_matrix, ball_query,
                                diameter, farthest_point_sample, matrix_to_quat, project_points,
                                quat_to_matrix, random_quaternion, transform_points)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
quats = arrays(np.float64, 4, elements=finite).filter(lambda q: np.linalg.norm(q) > 1e-3)


def rodrigues_from_quat(q):
    """Independent route: quaternion -> axis/angle -> Rodrigues formula."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    w, v = q[0], q[1:]
    s = np.linalg.norm(v)
    if s < 1e-15:
        return np.eye(3)
    angle = 2 * np.arctan2(s, w)
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def random_pose(rng):
    return Pose(random_quaternion(rng), rng.normal(size=3))


# -- rotations -----------------------------------------------------------------

def test_quat_identity_and_half_turn():
    np.testing.assert_allclose(quat_to_matrix(np.array([1.0, 0, 0, 0])).numpy(), np.eye(3))
    np.testing.assert_allclose(quat_to_matrix(np.array([0.0, 0, 0, 1])).numpy(),
                               np.diag([-1.0, -1.0, 1.0]), atol=1e-15)


def test_quat_matches_rodrigues_oracle(rng):
    for _ in range(100):
        q = random_quaternion(rng)
        np.testing.assert_allclose(quat_to_matrix(q).numpy(), rodrigues_from_quat(q), atol=1e-10)


def test_zero_quaternion_raises():
    with pytest.raises(ValueError):
        quat_to_matrix(np.zeros(4))


def test_batched_quat_to_matrix(rng):
    q = np.stack([random_quaternion(rng) for _ in range(6)]).reshape(2, 3, 4)
    R = quat_to_matrix(q).numpy()
    assert R.shape == (2, 3, 3, 3)
    np.testing.assert_allclose(R[1, 2], rodrigues_from_quat(q[1, 2]), atol=1e-12)


@given(quats)
def test_quat_sign_invariance(q):
    np.testing.assert_allclose(quat_to_matrix(q).numpy(), quat_to_matrix(-q).numpy(), atol=1e-12)


@given(quats)
def test_rotation_is_orthonormal(q):
    R = quat_to_matrix(q).numpy()
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-5)
    assert abs(np.linalg.det(R) - 1) < 1e-5


@given(quats)
def test_matrix_to_quat_round_trip(q):
    R = quat_to_matrix(q).numpy()
    np.testing.assert_allclose(quat_to_matrix(matrix_to_quat(R)).numpy(), R, atol=1e-9)


def test_axis_angle_quarter_turn():
    R = axis_angle_to_matrix([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_pose_rejects_non_unit_quaternion():
    with pytest.raises(ValueError):
        Pose(np.array([0.5, 0, 0, 0]), np.zeros(3))
    Pose(np.array([1 + 5e-7, 0, 0, 0]), np.zeros(3))


# -- transforms and projection ---------------------------------------------------

def test_transform_identity_and_offset():
    pts = np.arange(12, dtype=np.float64).reshape(4, 3)
    np.testing.assert_array_equal(transform_points(pts, Pose.identity()).numpy(), pts)
    out = transform_points(np.zeros((1, 3)), Pose(np.array([1.0, 0, 0, 0]), np.array([1.0, 0, 0])))
    np.testing.assert_array_equal(out.numpy(), [[1.0, 0, 0]])


def test_transform_matches_per_point_oracle(rng):
    pose = random_pose(rng)
    pts = rng.normal(size=(5, 3))
    R, T = rodrigues_from_quat(pose.quat), pose.translation
    expected = np.array([R @ p + T for p in pts])
    np.testing.assert_allclose(transform_points(pts, pose).numpy(), expected, atol=1e-12)


def test_transform_inverse_round_trip(rng):
    for _ in range(20):
        pose = random_pose(rng)
        pts = rng.normal(size=(30, 3))
        back = transform_points(transform_points(pts, pose), pose.inverse()).numpy()
        np.testing.assert_allclose(back, pts, atol=1e-9)


def test_project_on_axis_point():
    K = CameraIntrinsics(100, 100, 64, 64, 128, 128)
    uv, valid = project_points(np.array([[0.0, 0, 1]]), Pose.identity(), K)
    np.testing.assert_allclose(uv.numpy(), [[64, 64]])
    assert bool(valid[0])


def test_project_flags_degenerate_depth():
    K = CameraIntrinsics(100, 100, 64, 64, 128, 128)
    uv, valid = project_points(np.array([[0.1, 0, 0.0], [0, 0, -1.0]]), Pose.identity(), K)
    assert not valid.any()
    assert torch.isfinite(uv).all()


def test_project_matches_homogeneous_oracle(rng):
    K = CameraIntrinsics(120.0, 110.0, 63.5, 60.0, 128, 128)
    pose = Pose(random_quaternion(rng), np.array([0.0, 0.0, 3.0]))
    pts = rng.normal(size=(10, 3)) * 0.5
    uv, _ = project_points(pts, pose, K)
    R, T = rodrigues_from_quat(pose.quat), pose.translation
    P = K.matrix @ np.hstack([R, T[:, None]])
    h = (P @ np.hstack([pts, np.ones((10, 1))]).T).T
    np.testing.assert_allclose(uv.numpy(), h[:, :2] / h[:, 2:], atol=1e-9)


def test_project_bounds_use_pixel_centers():
    K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 4, 4)
    pts = np.array([[-0.5, 0, 1], [-0.51, 0, 1], [3.49, 0, 1], [3.5, 0, 1]])
    _, valid = project_points(pts, Pose.identity(), K)
    assert valid.tolist() == [True, False, True, False]


@given(quats)
def test_projection_ignores_quaternion_scale(q):
    K = CameraIntrinsics(100, 100, 64, 64, 128, 128)
    pts = np.array([[0.1, -0.2, 0.05], [0.0, 0.1, -0.1]])
    t = np.array([0.0, 0.0, 2.0])
    a, va = project_points(pts, (q, t), K)
    b, vb = project_points(pts, (q / np.linalg.norm(q), t), K)
    np.testing.assert_allclose(a.numpy(), b.numpy(), atol=1e-9)
    assert va.tolist() == vb.tolist()


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 100, 10, 10, 20, 20)
    with pytest.raises(ValueError):
        CameraIntrinsics(100, 100, 20, 10, 20, 20)


# -- sampling and grouping ---------------------------------------------------------

def test_fps_full_and_single():
    pts = torch.randn(9, 3, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    assert sorted(farthest_point_sample(pts, 9).tolist()) == list(range(9))
    assert farthest_point_sample(pts, 1, start_index=4).tolist() == [4]
    with pytest.raises(ValueError):
        farthest_point_sample(pts, 10)


def test_fps_greedy_steps_are_maximin(rng):
    pts = rng.normal(size=(8, 3))
    idx = farthest_point_sample(pts, 3, start_index=2).tolist()
    assert idx[0] == 2
    for k in range(1, 3):
        chosen = idx[:k]
        score = [min(np.linalg.norm(pts[j] - pts[c]) for c in chosen) for j in range(8)]
        assert score[idx[k]] == max(score)


def test_fps_random_start_is_seeded(rng):
    pts = torch.as_tensor(rng.normal(size=(2, 50, 3)))
    a = farthest_point_sample(pts, 10, None, torch.Generator().manual_seed(3))
    b = farthest_point_sample(pts, 10, None, torch.Generator().manual_seed(3))
    assert torch.equal(a, b)


@given(st.integers(2, 40), st.integers(1, 40), st.integers(0, 2**16))
def test_fps_indices_unique(n, m, seed):
    m = min(m, n)
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    idx = farthest_point_sample(pts, m).tolist()
    assert len(set(idx)) == m


def test_ball_query_matches_radius_filter(rng):
    pts = rng.uniform(size=(16, 3))
    centers = pts[[0, 5, 9]]
    idx = ball_query(centers, pts, 0.4, 16).numpy()
    for c, group in zip(centers, idx):
        d = np.linalg.norm(pts - c, axis=1)
        inside = set(np.nonzero(d <= 0.4)[0].tolist())
        assert set(group.tolist()) == inside
        # nearest-first, padding repeats the nearest point
        order = [g for g in group[:len(inside)]]
        assert list(d[order]) == sorted(d[order])
        assert all(g == group[0] for g in group[len(inside):])


def test_ball_query_large_radius_and_tiny_radius(rng):
    pts = rng.uniform(size=(12, 3))
    idx = ball_query(pts, pts, 10.0, 4).numpy()
    for i, group in enumerate(idx):
        d = np.linalg.norm(pts - pts[i], axis=1)
        np.testing.assert_array_equal(np.sort(d[group]), np.sort(d)[:4])
    idx = ball_query(pts, pts, 1e-9, 3).numpy()
    np.testing.assert_array_equal(idx, np.repeat(np.arange(12)[:, None], 3, 1))


def test_diameter_cases(rng):
    assert diameter(np.array([[0.0, 0, 0], [1, 0, 0]])) == 1.0
    cube = np.array(list(itertools.product([0.0, 1.0], repeat=3)))
    assert abs(diameter(cube) - np.sqrt(3)) < 1e-15
    pts = rng.normal(size=(20, 3))
    brute = max(np.linalg.norm(a - b) for a in pts for b in pts)
    assert diameter(pts) == brute
    with pytest.raises(ValueError):
        diameter(np.zeros((1, 3)))


def test_diameter_large_cloud_uses_hull(rng):
    pts = rng.normal(size=(3000, 3))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)).max()
    assert abs(diameter(pts) - d) < 1e-12


def test_diameter_rigid_invariance(rng):
    pts = rng.normal(size=(40, 3))
    moved = transform_points(pts, random_pose(rng)).numpy()
    assert abs(diameter(pts) - diameter(moved)) < 1e-9


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.nan, 0, 0]]))
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, 0, 0], [2.0, 0, 0]])).check_canonical()
    PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]])).check_canonical()
