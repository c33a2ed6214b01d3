"""Procedural worlds and the raycast renderer.

Generates a world, walks the camera forward and turns it, and dumps the
frames to PNG so you can eyeball wall perspective, floor patterns and
sprite motion.
"""

import os

import numpy as np

from camflow import Intrinsics, generate_world, render_frame
from camflow.actions import Action
from camflow.camera import integrate_action
from camflow.session import default_start_pose
from camflow.world import write_frames_png, write_frames_raw

OUT = os.path.join(os.path.dirname(__file__), "out", "02_world")

world = generate_world(7)
print(f"world seed=7: {world.size}x{world.size} grid, "
      f"{(world.grid == 0).sum()} free cells, {len(world.sprites)} sprites, "
      f"floor pattern {world.floor_pattern!r}")

K = Intrinsics.square_fov(64)
start = default_start_pose(world)
fwd = Action(np.array([0, 0, 1.0]), np.zeros(3), 0.12, 0.0)
turn = Action(np.zeros(3), np.array([0.0, 1.0, 0.0]), 0.0, np.pi / 24)

frames = [render_frame(world, start, K, 0)]
pose = start
for i, act in enumerate([fwd] * 6 + [turn] * 10):
    pose = integrate_action(pose, act, 1)[0]
    frames.append(render_frame(world, pose, K, i + 1))

write_frames_png(frames, OUT)
write_frames_raw(np.stack(frames), os.path.join(OUT, "frames.gcmv"))
print(f"wrote {len(frames)} frames to {OUT}")
print("mean frame brightness:", float(np.mean(frames)))
