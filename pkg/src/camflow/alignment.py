"""Similarity alignment of trajectories and relative pose error."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .camera import CameraPose, Trajectory, pose_to_extrinsic

__all__ = ["Sim3", "umeyama_sim3", "apply_sim3", "RpeResult", "rpe"]


@dataclass(frozen=True)
class Sim3:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    degenerate: bool = False

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        return self.scale * pts @ self.rotation.T + self.translation


def umeyama_sim3(est: Trajectory, gt: Trajectory) -> Sim3:
    """Closed-form least-squares similarity mapping est positions onto gt.

    Collinear (or shorter than 3 poses worth of spread) configurations
    fall back to scale 1, identity rotation, translation of means, with
    the ``degenerate`` flag set.
    """
    if len(est) != len(gt):
        raise ValueError("trajectories must have equal length")
    if len(est) < 3:
        raise ValueError("alignment needs at least 3 poses")
    x = est.positions()
    y = gt.positions()
    mx, my = x.mean(0), y.mean(0)
    xc, yc = x - mx, y - my
    n = len(est)
    cov = yc.T @ xc / n
    var_x = float((xc**2).sum() / n)

    U, D, Vt = np.linalg.svd(cov)
    if var_x < 1e-24 or D[1] <= 1e-9 * max(D[0], 1e-300):
        warnings.warn("degenerate trajectory configuration; translation-only fallback")
        return Sim3(1.0, np.eye(3), my - mx, degenerate=True)

    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_x)
    t = my - s * R @ mx
    return Sim3(s, R, t)


def apply_sim3(sim: Sim3, traj: Trajectory) -> Trajectory:
    """Apply a similarity to the positions of a trajectory.

    Orientation angles are carried over with the rotation's yaw applied,
    which is exact for rotations about the world up axis (the case
    exercised by the alignment round-trip property); general rotations
    would take the poses out of the roll-free family.
    """
    yaw_shift = math.atan2(sim.rotation[0, 2], sim.rotation[2, 2])
    poses = [
        CameraPose(sim.transform_points(p.position[None])[0], p.yaw + yaw_shift, p.pitch)
        for p in traj.poses
    ]
    return Trajectory(tuple(poses), fps=traj.fps)


@dataclass(frozen=True)
class RpeResult:
    rpe_trans: float
    rpe_rot: float
    normalized: bool = True


def rpe(est: Trajectory, gt: Trajectory) -> RpeResult:
    """Relative pose error over consecutive frame pairs.

    ``rpe_trans`` is the RMS of per-step translation discrepancies
    normalised by the mean ground-truth step length (so the number is
    scale-free); ``rpe_rot`` is the RMS relative-rotation angle error in
    radians.  Static ground truth returns the unnormalised value with
    ``normalized=False``.  Trajectories are assumed already aligned.
    """
    if len(est) != len(gt):
        raise ValueError("trajectories must have equal length")
    if len(est) < 2:
        raise ValueError("rpe needs at least 2 poses")
    pe, pg = est.positions(), gt.positions()
    de = np.diff(pe, axis=0)
    dg = np.diff(pg, axis=0)
    trans_err = math.sqrt(float(((de - dg) ** 2).sum(axis=1).mean()))
    mean_step = float(np.linalg.norm(dg, axis=1).mean())
    if mean_step < 1e-12:
        normalized = False
        rpe_trans = trans_err
    else:
        normalized = True
        rpe_trans = trans_err / mean_step

    angs = []
    for i in range(len(est) - 1):
        Re = _relative_rotation(est[i], est[i + 1])
        Rg = _relative_rotation(gt[i], gt[i + 1])
        angs.append(_rotation_angle(Re @ Rg.T) ** 2)
    rpe_rot = math.sqrt(float(np.mean(angs)))
    return RpeResult(rpe_trans, rpe_rot, normalized)


def _relative_rotation(a: CameraPose, b: CameraPose) -> np.ndarray:
    Ra = pose_to_extrinsic(a)[:3, :3]
    Rb = pose_to_extrinsic(b)[:3, :3]
    return Rb @ Ra.T


def _rotation_angle(R: np.ndarray) -> float:
    skew = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = (float(np.trace(R)) - 1.0) / 2.0
    ang = math.atan2(float(np.linalg.norm(skew)), c)
    # identical inputs leave only matmul rounding; snap below the floor
    return 0.0 if ang < 1e-9 else ang
