"""Training chunk generation, balancing, augmentation and serialization.

A chunk is a fixed-length block of rendered frames plus its camera
trajectory and per-frame action labels; chunks sampled consecutively
from one continuous trajectory form an episode, which is what the
history-conditioned training pairs are built from.  Backward motion
coverage is doubled by temporal inversion; directional balance across
start-to-end displacement bins is restored by manifest reweighting.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from .actions import Action, NULL_ACTION, invert_action
from .camera import CameraPose, Intrinsics, PITCH_LIMIT, Trajectory, integrate_action
from .world import World, render_frame

__all__ = [
    "Chunk",
    "ManifestEntry",
    "DatasetManifest",
    "ACTION_TEMPLATES",
    "ChunkSamplingError",
    "ChunkFormatError",
    "ChunkChecksumError",
    "ChunkVersionError",
    "sample_training_chunk",
    "sample_training_episode",
    "temporal_inversion",
    "direction_bin",
    "DIRECTION_BINS",
    "balance_manifest",
    "write_chunks",
    "read_chunks",
    "chunk_consistent",
]

CHUNK_MAGIC = b"GCCH"
CHUNK_VERSION = 1

DIRECTION_BINS = ("+x", "-x", "+y", "-y", "+z", "-z", "static")

# named direction templates of the sampling vocabulary
ACTION_TEMPLATES = {
    "W": (np.array([0.0, 0.0, 1.0]), np.zeros(3)),
    "S": (np.array([0.0, 0.0, -1.0]), np.zeros(3)),
    "A": (np.array([-1.0, 0.0, 0.0]), np.zeros(3)),
    "D": (np.array([1.0, 0.0, 0.0]), np.zeros(3)),
    "Space": (np.array([0.0, 1.0, 0.0]), np.zeros(3)),
    "Ctrl": (np.array([0.0, -1.0, 0.0]), np.zeros(3)),
    "YawLeft": (np.zeros(3), np.array([0.0, 1.0, 0.0])),
    "YawRight": (np.zeros(3), np.array([0.0, -1.0, 0.0])),
    "PitchUp": (np.zeros(3), np.array([1.0, 0.0, 0.0])),
    "PitchDown": (np.zeros(3), np.array([-1.0, 0.0, 0.0])),
    "Null": (np.zeros(3), np.zeros(3)),
}

ALPHA_RANGE = (0.05, 0.2)  # cells / frame
BETA_RANGE = (math.pi / 64, math.pi / 16)  # radians / frame
WALL_MARGIN = 0.18
Y_RANGE = (0.3, 0.7)


class ChunkSamplingError(RuntimeError):
    pass


class ChunkFormatError(ValueError):
    pass


class ChunkChecksumError(ChunkFormatError):
    pass


class ChunkVersionError(ChunkFormatError):
    pass


@dataclass
class Chunk:
    frames: np.ndarray  # (L, H, W, 3) float32 in [0, 1]
    trajectory: Trajectory
    actions: list  # L Action labels
    world_seed: int
    clip_id: str

    def __post_init__(self):
        L = self.frames.shape[0]
        if len(self.trajectory) != L or len(self.actions) != L:
            raise ValueError("frames, trajectory and actions must share a length")

    @property
    def length(self) -> int:
        return self.frames.shape[0]


def chunk_consistent(chunk: Chunk, tol: float = 1e-6) -> bool:
    """Pairwise check: integrating the label from each pose reproduces
    the next pose."""
    for i in range(chunk.length - 1):
        step = integrate_action(chunk.trajectory[i], chunk.actions[i + 1], 1)[0]
        if not step.almost_equal(chunk.trajectory[i + 1], tol=tol):
            return False
    return True


def _template_action(name: str, rng: np.random.Generator) -> Action:
    d_trans, d_rot = ACTION_TEMPLATES[name]
    alpha = float(rng.uniform(*ALPHA_RANGE)) if np.linalg.norm(d_trans) > 0 else 0.0
    beta = float(rng.uniform(*BETA_RANGE)) if np.linalg.norm(d_rot) > 0 else 0.0
    return Action(d_trans, d_rot, alpha, beta)


def _free_start(world: World, rng: np.random.Generator) -> CameraPose:
    free = world.free_cells()
    x, z = free[rng.integers(0, len(free))]
    jitter = rng.uniform(WALL_MARGIN, 1.0 - WALL_MARGIN, size=2)
    y = float(rng.uniform(*Y_RANGE))
    return CameraPose(
        np.array([x + jitter[0], y, z + jitter[1]]),
        yaw=float(rng.uniform(-math.pi, math.pi)),
        pitch=float(rng.uniform(-0.25, 0.25)),
    )


def _traj_clear(world: World, start: CameraPose, traj: Trajectory) -> bool:
    for p in [start, *traj.poses]:
        x, y, z = p.position
        if not (Y_RANGE[0] - 0.25 <= y <= Y_RANGE[1] + 0.25):
            return False
        if abs(p.pitch) >= PITCH_LIMIT - 1e-9:
            return False  # clamped steps are not invertible
        for dx in (-WALL_MARGIN, WALL_MARGIN):
            for dz in (-WALL_MARGIN, WALL_MARGIN):
                if not world.is_free(x + dx, z + dz):
                    return False
    return True


def sample_training_chunk(
    world: World,
    rng: np.random.Generator,
    vocab=("W", "S", "A", "D", "YawLeft", "YawRight"),
    L: int = 8,
    K: Intrinsics | None = None,
    max_tries: int = 20,
    start: CameraPose | None = None,
    clip_id: str = "",
    time0: float = 0.0,
) -> Chunk:
    """Sample one collision-free chunk: random free start, one action
    from the vocabulary with speeds drawn from the documented ranges,
    frames rendered along the integrated trajectory."""
    if not vocab:
        raise ValueError("vocabulary must be nonempty")
    K = K or Intrinsics.square_fov(64)
    for _ in range(max_tries):
        s = start if start is not None else _free_start(world, rng)
        act = _template_action(rng.choice(list(vocab)), rng)
        traj = integrate_action(s, act, L)
        if not _traj_clear(world, s, traj):
            continue  # fixed starts retry the action draw, free starts both
        frames = np.stack(
            [render_frame(world, p, K, time0 + 1 + i) for i, p in enumerate(traj.poses)]
        )
        return Chunk(
            frames=frames,
            trajectory=traj,
            actions=[act] * L,
            world_seed=world.seed,
            clip_id=clip_id or f"w{world.seed}",
        )
    raise ChunkSamplingError(f"no collision-free trajectory after {max_tries} tries")


def sample_training_episode(
    world: World,
    rng: np.random.Generator,
    n_chunks: int = 3,
    vocab=("W", "S", "A", "D", "YawLeft", "YawRight"),
    L: int = 8,
    K: Intrinsics | None = None,
    max_tries: int = 60,
    episode_id: str = "",
) -> list:
    """Continuous multi-chunk trajectory with an independent action per
    chunk; the unit from which history-conditioned pairs are assembled."""
    K = K or Intrinsics.square_fov(64)
    for _ in range(max_tries):
        start = _free_start(world, rng)
        chunks = []
        pose = start
        ok = True
        for j in range(n_chunks):
            try:
                c = sample_training_chunk(
                    world,
                    rng,
                    vocab=vocab,
                    L=L,
                    K=K,
                    max_tries=12,
                    start=pose,
                    clip_id=f"{episode_id or 'ep'}:c{j}",
                    time0=float(j * L),
                )
            except ChunkSamplingError:
                ok = False
                break
            chunks.append(c)
            pose = c.trajectory[-1]
        if ok:
            return chunks
    raise ChunkSamplingError(f"no collision-free episode after {max_tries} tries")


def temporal_inversion(c: Chunk) -> Chunk:
    """Reverse frames and trajectory, invert every action label."""
    return Chunk(
        frames=c.frames[::-1].copy(),
        trajectory=Trajectory(tuple(reversed(c.trajectory.poses)), fps=c.trajectory.fps),
        actions=[invert_action(a) for a in reversed(c.actions)],
        world_seed=c.world_seed,
        clip_id=c.clip_id + "~rev",
    )


def direction_bin(chunk: Chunk) -> str:
    """Dominant world axis of the start-to-end displacement."""
    d = chunk.trajectory[-1].position - chunk.trajectory[0].position
    n = float(np.linalg.norm(d))
    if n < 1e-9:
        return "static"
    axis = int(np.argmax(np.abs(d)))
    sign = "+" if d[axis] >= 0 else "-"
    return sign + "xyz"[axis]


@dataclass
class ManifestEntry:
    path: str
    chunk_count: int
    action_histogram: dict
    direction_bin: str


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    schema_version: int = 1

    def total_chunks(self) -> int:
        return sum(e.chunk_count for e in self.entries)

    def save(self, path) -> None:
        doc = {
            "schema_version": self.schema_version,
            "entries": [
                {
                    "path": e.path,
                    "chunk_count": e.chunk_count,
                    "action_histogram": e.action_histogram,
                    "direction_bin": e.direction_bin,
                }
                for e in self.entries
            ],
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=1)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as f:
            doc = json.load(f)
        return cls(
            entries=[ManifestEntry(**e) for e in doc["entries"]],
            schema_version=doc["schema_version"],
        )


def balance_manifest(manifest: DatasetManifest, quota: dict | None = None) -> np.ndarray:
    """Per-entry sampling weights equalising expected draws per
    direction bin.

    Weight of entry e in bin b is ``count_e * quota_b / count_b``
    (normalised), so the per-chunk draw probability within a bin is flat
    and each bin's total probability matches its quota.  Bins with no
    chunks get weight zero and a warning listing them.
    """
    if not manifest.entries:
        raise ValueError("manifest has no entries")
    bins = sorted({e.direction_bin for e in manifest.entries} | set(DIRECTION_BINS))
    quota = quota or {b: 1.0 for b in bins}
    bin_counts = {b: 0 for b in bins}
    for e in manifest.entries:
        bin_counts[e.direction_bin] += e.chunk_count
    uncovered = [b for b in bins if bin_counts[b] == 0 and quota.get(b, 0) > 0]
    if uncovered:
        warnings.warn(f"direction bins with no chunks: {uncovered}")
    w = np.array(
        [
            e.chunk_count * quota.get(e.direction_bin, 0.0) / bin_counts[e.direction_bin]
            if bin_counts[e.direction_bin] > 0
            else 0.0
            for e in manifest.entries
        ]
    )
    total = w.sum()
    if total <= 0:
        raise ValueError("all sampling weights vanished")
    return w / total


# ---------------------------------------------------------------------------
# chunk container file

def _pack_chunk(c: Chunk) -> bytes:
    L, H, W, _ = c.frames.shape
    clip = c.clip_id.encode()
    head = struct.pack("<IIIq H", L, H, W, c.world_seed, len(clip)) + clip
    frames = (np.clip(c.frames, 0, 1) * 255).round().astype(np.uint8)
    planar = np.transpose(frames, (0, 3, 1, 2)).tobytes()
    traj = np.stack(
        [np.concatenate([p.position, [p.yaw, p.pitch]]) for p in c.trajectory.poses]
    ).astype(np.float64)
    acts = np.stack(
        [np.concatenate([a.d_trans, a.d_rot, [a.alpha, a.beta]]) for a in c.actions]
    ).astype(np.float64)
    payload = head + struct.pack("<d", c.trajectory.fps) + planar + traj.tobytes() + acts.tobytes()
    return struct.pack("<I", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))


def _unpack_chunk(buf: bytes, off: int):
    if off + 4 > len(buf):
        raise ChunkFormatError("truncated chunk header")
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    if off + n + 4 > len(buf):
        raise ChunkFormatError("truncated chunk payload")
    payload = buf[off : off + n]
    (crc,) = struct.unpack_from("<I", buf, off + n)
    if zlib.crc32(payload) != crc:
        raise ChunkChecksumError("chunk CRC mismatch")
    off += n + 4

    L, H, W, seed, clip_len = struct.unpack_from("<IIIq H", payload, 0)
    p = struct.calcsize("<IIIq H")
    clip_id = payload[p : p + clip_len].decode()
    p += clip_len
    (fps,) = struct.unpack_from("<d", payload, p)
    p += 8
    nb = L * 3 * H * W
    planar = np.frombuffer(payload, dtype=np.uint8, count=nb, offset=p).reshape(L, 3, H, W)
    frames = np.transpose(planar, (0, 2, 3, 1)).astype(np.float32) / 255.0
    p += nb
    traj = np.frombuffer(payload, dtype=np.float64, count=L * 5, offset=p).reshape(L, 5)
    p += L * 5 * 8
    acts = np.frombuffer(payload, dtype=np.float64, count=L * 8, offset=p).reshape(L, 8)
    poses = tuple(CameraPose(r[:3].copy(), r[3], r[4]) for r in traj)
    actions = [Action(r[:3].copy(), r[3:6].copy(), r[6], r[7]) for r in acts]
    chunk = Chunk(
        frames=frames,
        trajectory=Trajectory(poses, fps=fps),
        actions=actions,
        world_seed=int(seed),
        clip_id=clip_id,
    )
    return chunk, off


def write_chunks(chunks, path) -> None:
    with open(path, "wb") as f:
        f.write(CHUNK_MAGIC)
        f.write(struct.pack("<HI", CHUNK_VERSION, len(chunks)))
        for c in chunks:
            f.write(_pack_chunk(c))


def read_chunks(path) -> list:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != CHUNK_MAGIC:
        raise ChunkFormatError(f"bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != CHUNK_VERSION:
        raise ChunkVersionError(f"unsupported chunk file version {version}")
    off = 10
    out = []
    for _ in range(count):
        chunk, off = _unpack_chunk(buf, off)
        out.append(chunk)
    return out
