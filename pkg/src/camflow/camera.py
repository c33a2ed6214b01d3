"""Roll-free camera poses, action integration, extrinsics and Plücker grids.

Rotation convention (``RxRy_rollfree_v1``, fixed throughout):

* world frame: y up; camera frame: x right, y up, z forward
* ``forward(yaw, pitch) = (cos p * sin y, sin p, cos p * cos y)`` — yaw 0
  faces world +z, yaw +pi/2 faces world +x, positive pitch looks up
* camera-to-world rotation has columns ``[right, up, forward]``; the
  world-to-camera extrinsic is its transpose composed with ``-R @ position``

Translation during integration uses the midpoint orientation of each
step, which makes a step followed by the inverted action an exact
identity (required for lossless temporal inversion of chunks).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .actions import Action

__all__ = [
    "PITCH_LIMIT",
    "CameraPose",
    "Trajectory",
    "Intrinsics",
    "wrap_angle",
    "rotation_cw",
    "integrate_action",
    "pose_to_extrinsic",
    "extrinsic_to_pose",
    "relative_pose",
    "plucker_embedding",
    "save_trajectory",
    "load_trajectory",
    "save_action_script",
    "load_action_script",
]

PITCH_EPS = 1e-3
PITCH_LIMIT = math.pi / 2 - PITCH_EPS
CONVENTION = "RxRy_rollfree_v1"


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    r = math.remainder(a, 2.0 * math.pi)
    return math.pi if r <= -math.pi else r


@dataclass(frozen=True)
class CameraPose:
    position: np.ndarray
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ValueError("position must be a finite 3-vector")
        if not (math.isfinite(self.yaw) and math.isfinite(self.pitch)):
            raise ValueError("angles must be finite")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        object.__setattr__(
            self, "pitch", float(np.clip(self.pitch, -PITCH_LIMIT, PITCH_LIMIT))
        )

    def almost_equal(self, other: "CameraPose", tol: float = 1e-9) -> bool:
        dyaw = wrap_angle(self.yaw - other.yaw)
        return (
            bool(np.allclose(self.position, other.position, atol=tol))
            and abs(dyaw) <= tol
            and abs(self.pitch - other.pitch) <= tol
        )


@dataclass(frozen=True)
class Trajectory:
    poses: tuple
    fps: float = 25.0

    def __post_init__(self):
        poses = tuple(self.poses)
        if len(poses) < 1:
            raise ValueError("trajectory needs at least one pose")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def positions(self) -> np.ndarray:
        return np.stack([p.position for p in self.poses])


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def square_fov(cls, size: int, fov_deg: float = 90.0) -> "Intrinsics":
        f = size / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
        return cls(fx=f, fy=f, cx=size / 2.0, cy=size / 2.0, width=size, height=size)


def rotation_cw(yaw: float, pitch: float) -> np.ndarray:
    """Camera-to-world rotation, columns = [right, up, forward]."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    right = np.array([cy, 0.0, -sy])
    forward = np.array([cp * sy, sp, cp * cy])
    up = np.cross(forward, right)
    return np.stack([right, up, forward], axis=1)


def integrate_action(start: CameraPose, act: Action, n_frames: int) -> Trajectory:
    """Roll the action forward for ``n_frames`` steps.

    The returned trajectory holds the post-step poses; ``start`` itself
    is not repeated.  Each step rotates first and translates along the
    midpoint orientation.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if not np.all(np.isfinite(start.position)):
        raise ValueError("non-finite start pose")
    poses = []
    yaw, pitch, pos = start.yaw, start.pitch, start.position.copy()
    d_pitch = act.beta * act.d_rot[0]
    d_yaw = act.beta * act.d_rot[1]
    for _ in range(n_frames):
        new_yaw = yaw + d_yaw
        new_pitch = float(np.clip(pitch + d_pitch, -PITCH_LIMIT, PITCH_LIMIT))
        if act.alpha != 0.0:
            mid = rotation_cw(0.5 * (yaw + new_yaw), 0.5 * (pitch + new_pitch))
            pos = pos + act.alpha * (mid @ act.d_trans)
        yaw, pitch = wrap_angle(new_yaw), new_pitch
        poses.append(CameraPose(pos.copy(), yaw, pitch))
    return Trajectory(tuple(poses))


def pose_to_extrinsic(p: CameraPose) -> np.ndarray:
    """4x4 world-to-camera matrix under the documented convention."""
    R = rotation_cw(p.yaw, p.pitch).T
    E = np.eye(4)
    E[:3, :3] = R
    E[:3, 3] = -R @ p.position
    return E


def extrinsic_to_pose(E: np.ndarray) -> CameraPose:
    """Invert :func:`pose_to_extrinsic`; the rotation must be roll-free."""
    E = np.asarray(E, dtype=np.float64)
    if E.shape != (4, 4):
        raise ValueError("extrinsic must be 4x4")
    R_cw = E[:3, :3].T
    position = -R_cw @ E[:3, 3]
    forward = R_cw[:, 2]
    pitch = math.asin(float(np.clip(forward[1], -1.0, 1.0)))
    yaw = math.atan2(float(forward[0]), float(forward[2]))
    return CameraPose(position, yaw, pitch)


def relative_pose(p: CameraPose, anchor: CameraPose) -> CameraPose:
    """Express ``p`` in the yaw-derotated frame anchored at ``anchor``.

    Position is rotated into the anchor's yaw frame and shifted to its
    origin; yaw becomes the difference, pitch stays absolute (pitching
    the anchor must not tilt the quotient frame, or the mapping from
    action sequences to relative poses would stop being exact).  Two
    trajectories that differ only by a horizontal rigid motion map to
    identical relative pose sequences.
    """
    Ry = rotation_cw(anchor.yaw, 0.0)
    return CameraPose(
        Ry.T @ (p.position - anchor.position),
        wrap_angle(p.yaw - anchor.yaw),
        p.pitch,
    )


def plucker_embedding(
    p: CameraPose, K: Intrinsics, downsample: int = 1
) -> np.ndarray:
    """Per-pixel Plücker 6-vectors (unit ray direction, moment o x d).

    Rays are cast through the centers of ``downsample x downsample``
    pixel blocks; output shape is (H/downsample, W/downsample, 6).
    """
    if downsample < 1 or K.width % downsample or K.height % downsample:
        raise ValueError("downsample factor must divide width and height")
    h, w = K.height // downsample, K.width // downsample
    u = (np.arange(w) + 0.5) * downsample
    v = (np.arange(h) + 0.5) * downsample
    uu, vv = np.meshgrid(u, v)
    dirs = np.stack(
        [
            (uu - K.cx) / K.fx,
            -(vv - K.cy) / K.fy,  # pixel v grows downward, camera y up
            np.ones_like(uu),
        ],
        axis=-1,
    )
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    R = rotation_cw(p.yaw, p.pitch)
    d_world = dirs @ R.T
    m = np.cross(np.broadcast_to(p.position, d_world.shape), d_world)
    return np.concatenate([d_world, m], axis=-1)


# ---------------------------------------------------------------------------
# file formats

def save_trajectory(traj: Trajectory, path) -> None:
    doc = {
        "fps": traj.fps,
        "convention": CONVENTION,
        "frames": [
            {
                "frame": i,
                "position": [float(x) for x in p.position],
                "yaw": p.yaw,
                "pitch": p.pitch,
            }
            for i, p in enumerate(traj.poses)
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_trajectory(path) -> Trajectory:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("convention") != CONVENTION:
        raise ValueError(f"unsupported trajectory convention {doc.get('convention')!r}")
    poses = [
        CameraPose(np.array(e["position"]), e["yaw"], e["pitch"])
        for e in sorted(doc["frames"], key=lambda e: e["frame"])
    ]
    return Trajectory(tuple(poses), fps=doc["fps"])


def _action_to_json(a: Action) -> dict:
    return {
        "d_trans": [float(x) for x in a.d_trans],
        "d_rot": [float(x) for x in a.d_rot],
        "alpha": a.alpha,
        "beta": a.beta,
    }


def _action_from_json(d: dict) -> Action:
    return Action(np.array(d["d_trans"]), np.array(d["d_rot"]), d["alpha"], d["beta"])


def save_action_script(steps, path) -> None:
    """Steps are (action, n_frames) pairs."""
    doc = [{"action": _action_to_json(a), "n_frames": int(n)} for a, n in steps]
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_action_script(path):
    with open(path) as f:
        doc = json.load(f)
    return [(_action_from_json(e["action"]), int(e["n_frames"])) for e in doc]
