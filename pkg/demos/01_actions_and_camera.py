"""Actions, key mapping, trajectory integration and Plücker grids.

Walks the control vocabulary end to end: key states become continuous
actions, actions integrate into camera trajectories, trajectories turn
into extrinsics and per-pixel ray grids.
"""

import numpy as np

from camflow import (
    ControlConfig,
    Intrinsics,
    KeyState,
    blend_actions,
    integrate_action,
    keys_to_action,
    plucker_embedding,
    pose_to_extrinsic,
)
from camflow.camera import CameraPose

cfg = ControlConfig()
print("== key states to actions ==")
for keys in [{"W"}, {"W", "D"}, {"Left"}, {"W", "S"}, set()]:
    a = keys_to_action(KeyState(pressed=keys), cfg)
    print(f"{sorted(keys) or ['-']}: d_trans={np.round(a.d_trans, 3)} "
          f"d_rot={np.round(a.d_rot, 3)} alpha={a.alpha:.3f} beta={a.beta:.3f}")

mouse = keys_to_action(KeyState(mouse_delta=(30.0, -10.0)), cfg)
print(f"mouse drag (30, -10): d_rot={np.round(mouse.d_rot, 3)} beta={mouse.beta:.4f}")

print("\n== smooth blending ==")
fwd = keys_to_action(KeyState(pressed={"W"}), cfg)
right = keys_to_action(KeyState(pressed={"D"}), cfg)
for s in (0.0, 0.25, 0.5, 0.75, 1.0):
    b = blend_actions(fwd, right, s)
    print(f"s={s:.2f}: d_trans={np.round(b.d_trans, 3)}")

print("\n== integration ==")
start = CameraPose(np.array([8.0, 0.5, 8.0]), yaw=0.0)
traj = integrate_action(start, blend_actions(fwd, right, 0.5), 8)
for i, p in enumerate(traj.poses):
    print(f"frame {i}: pos={np.round(p.position, 3)} yaw={p.yaw:.3f}")

print("\n== extrinsics and rays ==")
E = pose_to_extrinsic(traj[-1])
print("world-to-camera:\n", np.round(E, 3))
K = Intrinsics.square_fov(64)
grid = plucker_embedding(traj[-1], K, downsample=8)
print("plucker grid:", grid.shape)
d, m = grid[..., :3], grid[..., 3:]
print("max | |d|-1 |:", np.abs(np.linalg.norm(d, axis=-1) - 1).max())
print("max |d.m|:", np.abs((d * m).sum(-1)).max())
