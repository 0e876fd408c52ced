import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccfusion.icp import (IDENTITY, IcpConfig, LaserOdometry, RigidTransform2D,
                          estimate_displacement, fit_rigid, icp_register, scan_to_points,
                          wrap_angle)
from ccfusion.world import LaserConfig, generate_trajectory, simulate_laser_scan


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(-5, 5), st.floats(-5, 5))
def test_transform_inverse(theta, tx, ty):
    t = RigidTransform2D(theta, (tx, ty))
    assert -math.pi < t.theta <= math.pi
    both = t.compose(t.inverse())
    assert both.distance < 1e-9 and abs(wrap_angle(both.theta)) < 1e-9


def test_scan_to_points():
    scan = np.array([[1.0, 0.0], [2.0, math.pi / 2], [-1.0, 1.0]])
    pts = scan_to_points(scan)
    np.testing.assert_allclose(pts, [[1, 0], [0, 2]], atol=1e-12)


def test_scan_to_points_drops_sentinels():
    r = np.full(600, 3.0)
    r[::60] = -1.0
    angles = LaserConfig().angles
    assert len(scan_to_points(np.stack([r, angles], axis=1))) == 590


def test_fit_rigid_degenerate():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    assert fit_rigid(pts, pts) is None


def _scan_points(scene, pose, sigma=0.0, seed=0):
    return scan_to_points(simulate_laser_scan(scene, pose, LaserConfig(sigma=sigma), seed=seed))


def test_identity_registration(scene):
    pts = _scan_points(scene, (7.0, 6.0, 0.4))
    res = icp_register(pts, pts)
    assert res.converged and res.transform.distance < 1e-9
    assert abs(res.transform.theta) < 1e-9 and res.rms_residual < 1e-9


def _planted(scene, theta, t, sigma=0.0, seed=0):
    """Scan pair of the UE at pose A and at pose B = A moved by the planted motion.

    Returns (points at B, points at A, true transform mapping B-frame into A-frame).
    """
    x, y, h = 9.0, 7.0, 0.3
    c, s = math.cos(h), math.sin(h)
    pose_b = (x + c * t[0] - s * t[1], y + s * t[0] + c * t[1], h + theta)
    a = _scan_points(scene, (x, y, h), sigma, seed)
    b = _scan_points(scene, pose_b, sigma, seed + 1)
    return b, a, RigidTransform2D(theta, t)


def test_planted_transform_noiseless(scene):
    src, dst, truth = _planted(scene, math.radians(5), (0.3, -0.2))
    res = icp_register(src, dst)
    assert res.converged
    assert np.linalg.norm(res.transform.translation - truth.translation) <= 0.02
    assert abs(math.degrees(wrap_angle(res.transform.theta - truth.theta))) <= 0.5


def test_registration_symmetry(scene):
    src, dst, _ = _planted(scene, math.radians(-4), (0.2, 0.1))
    ab = icp_register(src, dst).transform
    ba = icp_register(dst, src).transform
    both = ab.compose(ba)
    assert both.distance < 1e-3 and abs(both.theta) < 1e-3


def test_rotation_invariance_of_distance(scene):
    src, dst, _ = _planted(scene, math.radians(3), (0.25, 0.1))
    rot = RigidTransform2D(1.1, (0, 0))
    d0 = icp_register(src, dst).transform.distance
    d1 = icp_register(rot.apply(src), rot.apply(dst)).transform.distance
    assert d1 == pytest.approx(d0, abs=1e-3)


def test_consecutive_steps(scene):
    traj = generate_trajectory(scene, 3, seed=2)
    scans = np.stack([simulate_laser_scan(scene, (*p[:2], h), LaserConfig(sigma=0.0)).as_array()
                      for p, h in zip(traj.positions, traj.headings)])
    t_hat, q = estimate_displacement(scans, 0, 1)
    true = np.linalg.norm(traj.positions[1, :2] - traj.positions[0, :2])
    assert abs(t_hat - true) <= 0.005 and q > 0.6


def test_same_scan_zero(small_dataset):
    assert estimate_displacement(small_dataset.laser, 5, 5) == (0.0, 1.0)


def test_broken_chain_gives_zero_quality(small_dataset):
    scans = small_dataset.laser.copy()
    scans[3, :, 0] = -1.0  # scan with no returns breaks the odometry chain
    t_hat, q = estimate_displacement(scans, 0, 10)
    assert q == 0.0 and t_hat >= 0.0


def test_odometry_relative_is_consistent(small_dataset):
    odo = LaserOdometry(small_dataset.laser, IcpConfig(source_stride=2))
    r = odo.relative(10, 30).compose(odo.relative(30, 10))
    assert r.distance < 1e-9
    assert odo.pose(0) == IDENTITY


def test_pairs_400_steps_apart(scene):
    traj = generate_trajectory(scene, 1000, seed=42)
    scans = np.stack([simulate_laser_scan(scene, (*p[:2], h), LaserConfig(),
                                          rng=np.random.default_rng(i)).as_array()
                      for i, (p, h) in enumerate(zip(traj.positions, traj.headings))])
    odo = LaserOdometry(scans, IcpConfig(source_stride=2))
    starts = np.arange(0, 600, 20)
    err = []
    for n in starts:
        t_hat, _ = estimate_displacement(scans, n, n + 400, odo.cfg, odometry=odo)
        err.append(abs(t_hat - np.linalg.norm(traj.positions[n + 400, :2] - traj.positions[n, :2])))
    assert np.mean(np.array(err) <= 0.15) >= 0.9


def test_interpolation_can_be_disabled(scene):
    src, dst, truth = _planted(scene, math.radians(2), (0.1, 0.1))
    res = icp_register(src, dst, cfg=IcpConfig(interpolate=False))
    assert res.converged
    assert np.linalg.norm(res.transform.translation - truth.translation) < 0.05
