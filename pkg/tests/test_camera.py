import math

import numpy as np
import pytest

from camflow.actions import Action, NULL_ACTION
from camflow.camera import (
    CameraPose,
    Intrinsics,
    Trajectory,
    extrinsic_to_pose,
    integrate_action,
    load_action_script,
    load_trajectory,
    plucker_embedding,
    pose_to_extrinsic,
    relative_pose,
    save_action_script,
    save_trajectory,
    wrap_angle,
)

ORIGIN = CameraPose(np.zeros(3))
K64 = Intrinsics.square_fov(64)


def w_action(alpha=0.1):
    return Action(np.array([0, 0, 1.0]), np.zeros(3), alpha, 0.0)


def yaw_action(beta, sign=1.0):
    return Action(np.zeros(3), np.array([0.0, sign, 0.0]), 0.0, beta)


def test_null_action_integration_repeats_start():
    traj = integrate_action(ORIGIN, NULL_ACTION, 8)
    assert len(traj) == 8
    for p in traj.poses:
        assert p.almost_equal(ORIGIN)


def test_forward_integration_closed_form():
    # scalar-loop oracle for the straight line
    traj = integrate_action(ORIGIN, w_action(0.1), 5)
    z = 0.0
    for k, p in enumerate(traj.poses):
        z += 0.1
        assert np.allclose(p.position, [0, 0, z], atol=1e-12)
        assert p.yaw == 0.0 and p.pitch == 0.0


def test_yaw_full_turn_wraps_back():
    traj = integrate_action(ORIGIN, yaw_action(math.pi / 16), 32)
    assert abs(wrap_angle(traj[-1].yaw - ORIGIN.yaw)) < 1e-9


def test_path_length_property():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        alpha = float(rng.uniform(0.01, 0.3))
        n = int(rng.integers(1, 40))
        start = CameraPose(rng.normal(size=3), rng.uniform(-3, 3), rng.uniform(-0.5, 0.5))
        traj = integrate_action(start, Action(d, np.zeros(3), alpha, 0.0), n)
        pts = np.vstack([start.position[None], traj.positions()])
        length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
        assert abs(length - n * alpha) < 1e-6


def test_step_then_inverse_step_is_identity():
    rng = np.random.default_rng(1)
    for _ in range(30):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        dr = np.array([rng.normal(), rng.normal(), 0.0])
        dr /= np.linalg.norm(dr)
        act = Action(d, dr, 0.15, math.pi / 24)
        inv = Action(-d, -dr, 0.15, math.pi / 24)
        start = CameraPose(rng.normal(size=3), rng.uniform(-2, 2), rng.uniform(-0.6, 0.6))
        fwd = integrate_action(start, act, 1)[0]
        back = integrate_action(fwd, inv, 1)[0]
        assert back.almost_equal(start, tol=1e-9)


def test_pitch_clamp_engages():
    act = Action(np.zeros(3), np.array([1.0, 0, 0]), 0.0, 0.5)
    traj = integrate_action(ORIGIN, act, 10)
    assert traj[-1].pitch == pytest.approx(math.pi / 2 - 1e-3)


def test_identity_pose_extrinsic():
    E = pose_to_extrinsic(ORIGIN)
    assert np.allclose(E, np.eye(4), atol=1e-15)


def test_yaw_quarter_turn_forward_maps_to_plus_x():
    E = pose_to_extrinsic(CameraPose(np.zeros(3), yaw=math.pi / 2))
    R_cw = E[:3, :3].T
    fwd_world = R_cw @ np.array([0, 0, 1.0])
    assert np.allclose(fwd_world, [1, 0, 0], atol=1e-12)


def test_extrinsic_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(25):
        p = CameraPose(rng.normal(size=3), rng.uniform(-math.pi, math.pi), rng.uniform(-1.2, 1.2))
        E = pose_to_extrinsic(p)
        back = extrinsic_to_pose(E)
        assert p.almost_equal(back, tol=1e-9)
        assert np.allclose(pose_to_extrinsic(back), E, atol=1e-9)


def test_extrinsic_bottom_row_and_translation():
    p = CameraPose(np.array([1.0, 2.0, 3.0]), 0.3, -0.2)
    E = pose_to_extrinsic(p)
    assert np.allclose(E[3], [0, 0, 0, 1])
    assert np.allclose(E[:3, 3], -E[:3, :3] @ p.position)


def test_plucker_center_pixel_identity_pose():
    g = plucker_embedding(CameraPose(np.array([2.0, 0.5, 1.0])), K64, downsample=1)
    assert g.shape == (64, 64, 6)
    # principal ray: mean of the four central pixels points forward
    centre_d = g[31:33, 31:33, :3].mean(axis=(0, 1))
    centre_d /= np.linalg.norm(centre_d)
    assert np.allclose(centre_d, [0, 0, 1], atol=1e-3)


def test_plucker_moments_zero_at_origin():
    g = plucker_embedding(ORIGIN, K64)
    assert np.allclose(g[..., 3:], 0.0)


def test_plucker_translation_adds_t_cross_d():
    p0 = CameraPose(np.zeros(3), 0.4, 0.1)
    t = np.array([0.5, -0.25, 1.5])
    p1 = CameraPose(t, 0.4, 0.1)
    g0 = plucker_embedding(p0, K64, downsample=4)
    g1 = plucker_embedding(p1, K64, downsample=4)
    assert np.allclose(g0[..., :3], g1[..., :3], atol=1e-12)
    extra = np.cross(np.broadcast_to(t, g0[..., :3].shape), g0[..., :3])
    assert np.allclose(g1[..., 3:] - g0[..., 3:], extra, atol=1e-12)


def test_plucker_invariants_random_poses():
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = CameraPose(rng.normal(size=3) * 3, rng.uniform(-3, 3), rng.uniform(-1, 1))
        g = plucker_embedding(p, K64, downsample=8)
        d, m = g[..., :3], g[..., 3:]
        assert np.allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-6)
        assert np.abs((d * m).sum(-1)).max() < 1e-6


def test_plucker_rejects_bad_factor():
    with pytest.raises(ValueError):
        plucker_embedding(ORIGIN, K64, downsample=5)


def test_relative_pose_quotient_is_exact():
    rng = np.random.default_rng(7)
    act = Action(np.array([0, 0, 1.0]), np.array([0, 1.0, 0]) , 0.1, 0.05)
    ref = integrate_action(CameraPose(np.zeros(3)), act, 6)
    for _ in range(5):
        start = CameraPose(rng.normal(size=3), rng.uniform(-3, 3), 0.0)
        traj = integrate_action(start, act, 6)
        for a, b in zip(ref.poses, traj.poses):
            ra = relative_pose(a, CameraPose(np.zeros(3)))
            rb = relative_pose(b, start)
            assert ra.almost_equal(rb, tol=1e-9)


def test_trajectory_json_round_trip(tmp_path):
    traj = integrate_action(CameraPose(np.array([1.0, 0.5, 2.0]), 0.7, -0.1), w_action(), 9)
    path = tmp_path / "traj.json"
    save_trajectory(traj, path)
    back = load_trajectory(path)
    assert len(back) == len(traj)
    assert back.fps == traj.fps
    for a, b in zip(traj.poses, back.poses):
        assert a.almost_equal(b, tol=1e-15)


def test_action_script_round_trip(tmp_path):
    steps = [(w_action(0.12), 8), (yaw_action(0.1, -1.0), 16), (NULL_ACTION, 4)]
    path = tmp_path / "script.json"
    save_action_script(steps, path)
    back = load_action_script(path)
    assert len(back) == 3
    for (a0, n0), (a1, n1) in zip(steps, back):
        assert n0 == n1
        assert a0.almost_equal(a1, tol=1e-15)


def test_pose_invariants():
    p = CameraPose(np.zeros(3), yaw=4 * math.pi + 0.25, pitch=2.0)
    assert abs(p.yaw - 0.25) < 1e-12
    assert p.pitch == pytest.approx(math.pi / 2 - 1e-3)
    with pytest.raises(ValueError):
        CameraPose(np.array([np.nan, 0, 0]))
    with pytest.raises(ValueError):
        Trajectory(())
