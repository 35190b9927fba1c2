import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epifocus.errors import DegenerateProjectionError, GeometryError
from epifocus.geometry import CircularGeometry, DetectorSpec, MotionTrajectory, camera_center, check_projection_matrix, \
    circular_trajectory, compose_trajectory, default_markers, geometry_from_views, invert_rigid, is_rigid, \
    markers_in_field_of_view, normalize_projection, project_point, rpe, rpe_between, rpe_per_view, se3_batch, \
    se3_from_params

angles = st.floats(-math.pi, math.pi, allow_nan=False)
shifts = st.floats(-50.0, 50.0, allow_nan=False)


def test_detector_defaults_principal_point_to_center():
    det = DetectorSpec(nu=64, nv=48, du=2.0, dv=2.0)
    assert det.u0 == 31.5
    assert det.v0 == 23.5


def test_detector_rejects_principal_point_outside():
    with pytest.raises(ValueError):
        DetectorSpec(nu=64, nv=48, du=2.0, dv=2.0, u0=64.0)


def test_geometry_requires_source_inside_detector_distance():
    with pytest.raises(ValueError):
        CircularGeometry(sid=600.0, sdd=600.0, n_views=10, detector=DetectorSpec(nu=8, nv=8, du=1.0, dv=1.0))


def test_isocenter_projects_to_principal_point(small_traj):
    det = small_traj.geometry.detector
    for P in small_traj.views:
        assert project_point(P, (0.0, 0.0, 0.0)) == pytest.approx([det.u0, det.v0], abs=1e-9)


def test_axial_offset_follows_magnification(small_traj):
    geom = small_traj.geometry
    h = 10.0
    u, v = project_point(small_traj[0], (0.0, 0.0, h))
    assert v == pytest.approx(geom.detector.v0 + h * (geom.sdd / geom.detector.dv) / geom.sid, abs=1e-9)
    assert u == pytest.approx(geom.detector.u0, abs=1e-9)


def test_opposite_views_have_antipodal_sources(small_traj):
    n = len(small_traj)
    centers = camera_center(small_traj.views)
    np.testing.assert_allclose(centers[: n // 2] + centers[n // 2:], 0.0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(centers, axis=1), small_traj.geometry.sid, rtol=1e-12)


def test_canonical_camera():
    P = np.hstack([np.eye(3), np.zeros((3, 1))])
    assert project_point(P, (0.0, 0.0, 1.0)) == pytest.approx([0.0, 0.0])


@given(st.floats(0.01, 100.0), st.lists(st.floats(-40, 40), min_size=3, max_size=3))
def test_projection_is_scale_invariant(scale, point):
    P = circular_trajectory(
        CircularGeometry(sid=300.0, sdd=600.0, n_views=8, detector=DetectorSpec(nu=64, nv=48, du=2.0, dv=2.0))
    )[3]
    np.testing.assert_allclose(project_point(P * scale, point), project_point(P, point), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(project_point(-P * scale, point), project_point(P, point), rtol=1e-9, atol=1e-9)


def test_projection_matches_explicit_formula():
    rng = np.random.default_rng(7)
    for _ in range(20):
        P = rng.normal(size=(3, 4))
        x = rng.normal(size=3)
        xh = np.append(x, 1.0)
        expected = [P[0] @ xh / (P[2] @ xh), P[1] @ xh / (P[2] @ xh)]
        np.testing.assert_allclose(project_point(P, x), expected, rtol=1e-10)


def test_projection_on_principal_plane_raises():
    P = np.hstack([np.eye(3), np.zeros((3, 1))])
    with pytest.raises(DegenerateProjectionError):
        project_point(P, (1.0, 1.0, 0.0))


def test_singular_projection_matrix_rejected():
    with pytest.raises(GeometryError):
        check_projection_matrix(np.zeros((3, 4)))


def test_se3_zero_is_identity():
    np.testing.assert_array_equal(se3_from_params(0, 0, 0, 0, 0, 0), np.eye(4))


def test_se3_quarter_turn_about_z():
    T = se3_from_params(0, 0, math.pi / 2, 0, 0, 0)
    np.testing.assert_allclose(T @ [1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 0.0, 1.0], atol=1e-12)


def test_se3_rotation_order():
    rx, ry, rz = 0.3, -0.2, 0.5
    cx, sx, cy, sy, cz, sz = math.cos(rx), math.sin(rx), math.cos(ry), math.sin(ry), math.cos(rz), math.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    np.testing.assert_allclose(se3_from_params(rx, ry, rz, 1, 2, 3)[:3, :3], Rz @ Ry @ Rx, atol=1e-12)


@given(angles, angles, angles, shifts, shifts, shifts)
def test_se3_is_rigid_and_invertible(rx, ry, rz, tx, ty, tz):
    T = se3_from_params(rx, ry, rz, tx, ty, tz)
    assert is_rigid(T)
    np.testing.assert_allclose(T @ invert_rigid(T), np.eye(4), atol=1e-10)


def test_many_random_transforms_are_rigid():
    rng = np.random.default_rng(0)
    params = np.hstack([rng.uniform(-math.pi, math.pi, (1000, 3)), rng.uniform(-100, 100, (1000, 3))])
    assert all(is_rigid(T) for T in se3_batch(params))


def test_non_rigid_motion_rejected():
    T = np.eye(4)
    T[0, 0] = 1.01
    with pytest.raises(GeometryError):
        MotionTrajectory(T[None])


def test_motion_inverse_composes_to_identity():
    rng = np.random.default_rng(3)
    motion = MotionTrajectory.from_params(rng.normal(scale=0.2, size=(5, 6)))
    composed = motion.compose(motion.inverse())
    np.testing.assert_allclose(composed.transforms, np.tile(np.eye(4), (5, 1, 1)), atol=1e-12)


def test_compose_trajectory_length_mismatch(small_traj):
    with pytest.raises(GeometryError):
        compose_trajectory(small_traj, MotionTrajectory.identity(len(small_traj) - 1))


def test_rpe_zero_for_identity(small_traj, small_markers):
    assert rpe(small_traj, MotionTrajectory.identity(len(small_traj)), small_markers) == 0.0


def test_rpe_detector_parallel_shift(small_traj):
    geom = small_traj.geometry
    d = 2.5
    motion = MotionTrajectory.from_params(np.tile([0, 0, 0, d, 0, 0], (len(small_traj), 1)))
    per_view = rpe_per_view(small_traj, motion, [[0.0, 0.0, 0.0]])
    assert per_view[0] == pytest.approx(d * (geom.sdd / geom.detector.du) / geom.sid, rel=1e-9)


def test_rpe_linear_in_detector_parallel_shift(small_traj):
    def view0(d):
        motion = MotionTrajectory.from_params(np.tile([0, 0, 0, d, 0, 0], (len(small_traj), 1)))
        return rpe_per_view(small_traj, motion, [[0.0, 0.0, 0.0]])[0]

    assert view0(3.0) == pytest.approx(2 * view0(1.5), rel=1e-9)


def test_rpe_names_degenerate_view_and_marker(small_traj):
    sid = small_traj.geometry.sid
    with pytest.raises(DegenerateProjectionError) as info:
        rpe(small_traj, MotionTrajectory.identity(len(small_traj)), [[0.0, 0.0, 0.0], [5.0, -sid, 0.0]])
    assert info.value.view == 0
    assert info.value.marker == 1


def test_rpe_between_is_zero_for_identical_estimates(small_traj, small_markers):
    rng = np.random.default_rng(1)
    motion = MotionTrajectory.from_params(rng.normal(scale=[0.01] * 3 + [1.0] * 3, size=(len(small_traj), 6)))
    assert rpe_between(small_traj, motion, motion, small_markers) == pytest.approx(0.0, abs=1e-9)
    identity = MotionTrajectory.identity(len(small_traj))
    assert rpe_between(small_traj, identity, motion, small_markers) > 0


def test_default_markers():
    markers = default_markers()
    assert markers.shape == (9, 3)
    assert np.abs(markers[:8]).max() == 50.0
    np.testing.assert_array_equal(markers[8], 0.0)


def test_markers_in_field_of_view(small_traj, small_markers):
    assert markers_in_field_of_view(small_traj, small_markers)
    assert not markers_in_field_of_view(small_traj, default_markers())


def test_normalized_projection_depth_at_isocenter(small_traj):
    views = normalize_projection(small_traj.views * -3.0)
    np.testing.assert_allclose(views[:, 2, 3], small_traj.geometry.sid, rtol=1e-12)


def test_geometry_recovered_from_matrices(small_geometry, small_traj):
    det = small_geometry.detector
    recovered = geometry_from_views(small_traj.views, det.nu, det.nv, det.du, det.dv)
    assert recovered.sid == pytest.approx(small_geometry.sid, rel=1e-9)
    assert recovered.sdd == pytest.approx(small_geometry.sdd, rel=1e-9)
    assert recovered.detector.u0 == pytest.approx(det.u0, abs=1e-9)
    assert recovered.detector.v0 == pytest.approx(det.v0, abs=1e-9)
    assert recovered.angular_step == pytest.approx(small_geometry.angular_step, rel=1e-9)
    assert recovered.is_full_scan
