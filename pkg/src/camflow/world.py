"""Deterministic grid-world raycast renderer.

The world is a square occupancy grid of textured wall cells with a
patterned floor and ceiling and a handful of orbiting billboard
sprites.  Rendering is a column DDA raycast with perspective-correct
wall heights, a sheared horizon for pitch, per-pixel floor/ceiling
projection, distance shading and z-buffered sprite compositing.  Every
frame is a pure function of (world, pose, intrinsics, time), which is
what lets the renderer double as the evaluation oracle.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .camera import CameraPose, Intrinsics

__all__ = [
    "WALL_HEIGHT",
    "World",
    "Sprite",
    "WorldGeometryError",
    "generate_world",
    "render_frame",
    "save_world",
    "load_world",
    "write_frames_png",
    "write_frames_raw",
    "read_frames_raw",
]

WALL_HEIGHT = 1.0
RAW_MAGIC = b"GCMV"


class WorldGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Sprite:
    """Billboard orbiting a fixed point: center, orbit radius, angular
    speed (radians/frame), phase, body radius, two-tone colors."""

    center: np.ndarray
    orbit_radius: float
    omega: float
    phase: float
    radius: float
    color_a: np.ndarray
    color_b: np.ndarray

    def position(self, t: float) -> np.ndarray:
        a = self.omega * t + self.phase
        return self.center + self.orbit_radius * np.array(
            [math.cos(a), 0.0, math.sin(a)]
        )


@dataclass(frozen=True)
class World:
    seed: int
    grid: np.ndarray  # (n, n) int, 0 = free, >0 = wall texture id
    palette: dict  # texture id -> (color_a, color_b) float RGB
    floor_pattern: str  # "rings" | "stripes"
    floor_colors: tuple
    ceiling_colors: tuple
    sprites: tuple = ()

    @property
    def size(self) -> int:
        return self.grid.shape[0]

    def is_free(self, x: float, z: float) -> bool:
        n = self.size
        if not (0.0 <= x < n and 0.0 <= z < n):
            return False
        return self.grid[int(z), int(x)] == 0

    def cell_of(self, x: float, z: float):
        return int(math.floor(x)), int(math.floor(z))

    def free_cells(self) -> np.ndarray:
        zz, xx = np.nonzero(self.grid == 0)
        return np.stack([xx, zz], axis=1)


def _carve(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random-walk carving: connected free region by construction."""
    grid = np.ones((n, n), dtype=np.int16)
    target = max(25, int(0.45 * (n - 2) * (n - 2)))
    x = z = n // 2
    grid[z, x] = 0
    carved = 1
    dirs = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])
    heading = rng.integers(0, 4)
    steps = 0
    while carved < target and steps < 40 * n * n:
        steps += 1
        if rng.random() > 0.6:
            heading = rng.integers(0, 4)
        dx, dz = dirs[heading]
        nx, nz = x + dx, z + dz
        if 1 <= nx < n - 1 and 1 <= nz < n - 1:
            x, z = nx, nz
            if grid[z, x] == 1:
                grid[z, x] = 0
                carved += 1
        else:
            heading = rng.integers(0, 4)
    return grid


def generate_world(seed: int, size: int = 16, n_textures: int = 4) -> World:
    """Deterministic world from a seed: same seed, bit-identical world."""
    rng = np.random.default_rng(seed)
    grid = _carve(rng, size)
    tex = rng.integers(1, n_textures + 1, size=grid.shape).astype(np.int16)
    grid = np.where(grid > 0, tex, 0).astype(np.int16)

    palette = {}
    for t in range(1, n_textures + 1):
        a = rng.uniform(0.15, 0.95, size=3)
        b = rng.uniform(0.15, 0.95, size=3)
        if float(np.abs(a - b).sum()) < 0.6:
            b = np.clip(1.05 - b, 0.05, 0.95)
        palette[t] = (a, b)

    floor_pattern = "rings" if rng.random() < 0.5 else "stripes"
    floor_colors = (rng.uniform(0.1, 0.5, 3), rng.uniform(0.3, 0.8, 3))
    ceiling_colors = (rng.uniform(0.05, 0.35, 3), rng.uniform(0.2, 0.6, 3))

    free = np.stack(np.nonzero(grid == 0), axis=1)  # (k, 2) as (z, x)
    n_sprites = int(rng.integers(0, 5))
    sprites = []
    for _ in range(n_sprites):
        z, x = free[rng.integers(0, len(free))]
        sprites.append(
            Sprite(
                center=np.array([x + 0.5, 0.5 * WALL_HEIGHT, z + 0.5]),
                orbit_radius=float(rng.uniform(0.1, 0.3)),
                omega=float(rng.uniform(0.05, 0.2)),
                phase=float(rng.uniform(0.0, 2 * math.pi)),
                radius=float(rng.uniform(0.08, 0.16)),
                color_a=rng.uniform(0.4, 1.0, 3),
                color_b=rng.uniform(0.0, 0.5, 3),
            )
        )
    return World(
        seed=seed,
        grid=grid,
        palette=palette,
        floor_pattern=floor_pattern,
        floor_colors=floor_colors,
        ceiling_colors=ceiling_colors,
        sprites=tuple(sprites),
    )


def render_frame(
    world: World, pose: CameraPose, K: Intrinsics, time: float = 0.0
) -> np.ndarray:
    """Raycast one (H, W, 3) float frame in [0, 1]."""
    px, cam_y, pz = (float(v) for v in pose.position)
    ix, iz = world.cell_of(px, pz)
    n = world.size
    if not (0 <= ix < n and 0 <= iz < n):
        raise WorldGeometryError(f"camera outside the grid at cell ({ix}, {iz})")
    if world.grid[iz, ix] != 0:
        raise WorldGeometryError(f"camera inside wall cell ({ix}, {iz})")

    H, W = K.height, K.width
    yaw, pitch = pose.yaw, pose.pitch
    sy, cy_ = math.sin(yaw), math.cos(yaw)
    shear = K.fy * math.tan(pitch)

    u = (np.arange(W, dtype=np.float64) + 0.5 - K.cx) / K.fx
    ray_x = sy + u * cy_
    ray_z = cy_ - u * sy

    # DDA over grid cells, vectorised across columns
    map_x = np.full(W, ix, dtype=np.int64)
    map_z = np.full(W, iz, dtype=np.int64)
    with np.errstate(divide="ignore"):
        delta_x = np.abs(1.0 / ray_x)
        delta_z = np.abs(1.0 / ray_z)
    step_x = np.where(ray_x < 0, -1, 1)
    step_z = np.where(ray_z < 0, -1, 1)
    side_x = np.where(ray_x < 0, (px - map_x) * delta_x, (map_x + 1.0 - px) * delta_x)
    side_z = np.where(ray_z < 0, (pz - map_z) * delta_z, (map_z + 1.0 - pz) * delta_z)

    hit = np.zeros(W, dtype=bool)
    side_is_x = np.zeros(W, dtype=bool)
    for _ in range(4 * n):
        active = ~hit
        if not active.any():
            break
        go_x = active & (side_x < side_z)
        go_z = active & ~go_x
        map_x[go_x] += step_x[go_x]
        side_x[go_x] += delta_x[go_x]
        map_z[go_z] += step_z[go_z]
        side_z[go_z] += delta_z[go_z]
        newly = active & (world.grid[np.clip(map_z, 0, n - 1), np.clip(map_x, 0, n - 1)] > 0)
        side_is_x[newly & go_x] = True
        side_is_x[newly & go_z] = False
        hit |= newly

    t_hit = np.where(side_is_x, side_x - delta_x, side_z - delta_z)
    t_hit = np.maximum(t_hit, 1e-6)
    hit_x = px + t_hit * ray_x
    hit_z = pz + t_hit * ray_z
    u_face = np.where(side_is_x, hit_z - np.floor(hit_z), hit_x - np.floor(hit_x))

    # wall texture colors
    tex_id = world.grid[np.clip(map_z, 0, n - 1), np.clip(map_x, 0, n - 1)]
    tex_id = np.where(hit, tex_id, 1)
    col_a = np.stack([world.palette[int(t)][0] for t in tex_id])
    col_b = np.stack([world.palette[int(t)][1] for t in tex_id])

    v_center = np.arange(H, dtype=np.float64)[:, None] + 0.5
    v_top = K.cy - K.fy * (WALL_HEIGHT - cam_y) / t_hit + shear
    v_bot = K.cy + K.fy * cam_y / t_hit + shear
    wall_mask = (v_center >= v_top) & (v_center < v_bot)

    # bands on the wall face; symmetric in u_face so mirrored worlds
    # render to mirrored frames
    au = np.abs(u_face - 0.5)
    band_u = np.floor(au * 6.0).astype(np.int64)
    y_frac = np.clip((v_center - v_top) / np.maximum(v_bot - v_top, 1e-9), 0.0, 1.0)
    band_y = np.floor(y_frac * 4.0).astype(np.int64)
    wall_sel = ((band_u[None, :] + band_y) % 2).astype(bool)

    shade = 1.0 / (1.0 + 0.15 * t_hit)
    shade = np.where(side_is_x, 0.8 * shade, shade)
    # cell-parity shading disambiguates neighbouring wall cells
    shade = shade * np.where((map_x + map_z) % 2 == 0, 1.0, 0.88)
    wall_rgb = np.where(wall_sel[..., None], col_b[None], col_a[None])
    wall_rgb = wall_rgb * shade[None, :, None]

    # floor / ceiling projection per pixel
    slope = (K.cy - v_center) / K.fy + math.tan(pitch)  # y_c / z_c per row
    with np.errstate(divide="ignore", invalid="ignore"):
        z_floor = np.where(slope < 0, -cam_y / slope, np.inf)
        z_ceil = np.where(slope > 0, (WALL_HEIGHT - cam_y) / slope, np.inf)
    below = v_center >= K.cy + shear  # rows at/below the horizon see floor
    z_plane = np.where(below, z_floor, z_ceil)
    wx = px + z_plane * ray_x[None, :]
    wz = pz + z_plane * ray_z[None, :]

    gc = world.size / 2.0
    if world.floor_pattern == "rings":
        pat = np.floor(np.sqrt((wx - gc) ** 2 + (wz - gc) ** 2)).astype(np.int64) % 2
    else:
        pat = np.floor(wz).astype(np.int64) % 2
    pat = pat.astype(bool)

    fa, fb = world.floor_colors
    ca, cb = world.ceiling_colors
    plane_rgb = np.where(
        below[..., None],
        np.where(pat[..., None], fb[None, None], fa[None, None]),
        np.where(pat[..., None], cb[None, None], ca[None, None]),
    )
    plane_shade = 1.0 / (1.0 + 0.15 * np.where(np.isfinite(z_plane), z_plane, 1e9))
    plane_rgb = plane_rgb * plane_shade[..., None]

    frame = np.where(wall_mask[..., None], wall_rgb, plane_rgb)
    depth = np.where(wall_mask, t_hit[None, :], np.where(np.isfinite(z_plane), z_plane, 1e9))

    # sprites, z-buffered
    for s in world.sprites:
        sp = s.position(time)
        dx, dy_, dz = sp[0] - px, sp[1] - cam_y, sp[2] - pz
        x_c = dx * cy_ - dz * sy
        z_c = dx * sy + dz * cy_
        if z_c < 0.1:
            continue
        u_s = K.cx + K.fx * x_c / z_c
        v_s = K.cy - K.fy * (dy_ / z_c - math.tan(pitch))
        r_px = K.fx * s.radius / z_c
        if r_px < 0.5:
            continue
        uu = np.arange(W)[None, :] + 0.5
        vv = np.arange(H)[:, None] + 0.5
        d2 = (uu - u_s) ** 2 + (vv - v_s) ** 2
        inside = (d2 <= r_px**2) & (z_c < depth)
        if not inside.any():
            continue
        tone = d2 <= (0.55 * r_px) ** 2
        sprite_rgb = np.where(tone[..., None], s.color_a[None, None], s.color_b[None, None])
        sprite_rgb = sprite_rgb / (1.0 + 0.15 * z_c)
        frame = np.where(inside[..., None], sprite_rgb, frame)
        depth = np.where(inside, z_c, depth)

    return np.clip(frame, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# persistence

def save_world(world: World, path) -> None:
    doc = {
        "seed": world.seed,
        "grid": world.grid.tolist(),
        "palette": {
            str(k): [list(map(float, a)), list(map(float, b))]
            for k, (a, b) in world.palette.items()
        },
        "floor_pattern": world.floor_pattern,
        "floor_colors": [list(map(float, c)) for c in world.floor_colors],
        "ceiling_colors": [list(map(float, c)) for c in world.ceiling_colors],
        "sprites": [
            {
                "center": list(map(float, s.center)),
                "orbit_radius": s.orbit_radius,
                "omega": s.omega,
                "phase": s.phase,
                "radius": s.radius,
                "color_a": list(map(float, s.color_a)),
                "color_b": list(map(float, s.color_b)),
            }
            for s in world.sprites
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_world(path) -> World:
    with open(path) as f:
        doc = json.load(f)
    return World(
        seed=doc["seed"],
        grid=np.array(doc["grid"], dtype=np.int16),
        palette={
            int(k): (np.array(a), np.array(b)) for k, (a, b) in doc["palette"].items()
        },
        floor_pattern=doc["floor_pattern"],
        floor_colors=tuple(np.array(c) for c in doc["floor_colors"]),
        ceiling_colors=tuple(np.array(c) for c in doc["ceiling_colors"]),
        sprites=tuple(
            Sprite(
                center=np.array(s["center"]),
                orbit_radius=s["orbit_radius"],
                omega=s["omega"],
                phase=s["phase"],
                radius=s["radius"],
                color_a=np.array(s["color_a"]),
                color_b=np.array(s["color_b"]),
            )
            for s in doc["sprites"]
        ),
    )


def write_frames_png(frames, directory) -> None:
    from PIL import Image
    import os

    os.makedirs(directory, exist_ok=True)
    for i, f in enumerate(frames):
        img = (np.clip(f, 0, 1) * 255).round().astype(np.uint8)
        Image.fromarray(img).save(os.path.join(directory, f"frame_{i:05d}.png"))


def write_frames_raw(frames, path) -> None:
    """Planar uint8 RGB: header magic + u32 h, w, n_frames (little endian),
    then per frame the R, G and B planes."""
    frames = np.asarray(frames)
    n, h, w = frames.shape[0], frames.shape[1], frames.shape[2]
    q = (np.clip(frames, 0, 1) * 255).round().astype(np.uint8)
    planar = np.transpose(q, (0, 3, 1, 2))  # (n, 3, h, w)
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(struct.pack("<III", h, w, n))
        f.write(planar.tobytes())


def read_frames_raw(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != RAW_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        h, w, n = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != n * 3 * h * w:
        raise ValueError("truncated raw frame file")
    planar = data.reshape(n, 3, h, w)
    return (np.transpose(planar, (0, 2, 3, 1)).astype(np.float32)) / 255.0
