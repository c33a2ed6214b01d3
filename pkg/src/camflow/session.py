"""Interactive serving layer: per-session history, live key ingestion,
on-demand chunk generation.

Ingestion and generation are decoupled: pushing an action only touches
the bounded queue under a short lock and never waits on the sampler.
Actions take effect at chunk boundaries; an empty queue repeats the
current action (held-key semantics).  Rollouts are bit-deterministic
given the session seed and the logical-timestamp event script.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

from .actions import Action, ControlConfig, KeyState, NULL_ACTION, keys_to_action
from .camera import CameraPose, Intrinsics, Trajectory
from .checkpoint import load_checkpoint
from .distill import sample_distilled
from .extension import HistoryBuffer, autoregressive_extend
from .model import Denoiser
from .world import World, generate_world, render_frame

__all__ = [
    "SessionConfig",
    "SessionError",
    "Ack",
    "ChunkResult",
    "Session",
    "SessionManager",
    "default_start_pose",
]


class SessionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    world_seed: int | None = None
    start_frame: np.ndarray | None = None
    seed: int = 0
    steps: int = 16
    guidance: float = 1.5
    distilled: bool = False
    distill_phases: int = 8
    queue_capacity: int = 4
    buffer_capacity: int = 4
    control: ControlConfig = ControlConfig()

    def __post_init__(self):
        if self.world_seed is None and self.start_frame is None:
            raise ValueError("need a world seed or a start frame")
        if self.queue_capacity < 1:
            raise ValueError("queue bound must be >= 1")


@dataclass
class Ack:
    ok: bool
    dropped: bool = False
    queue_len: int = 0
    detail: str = ""


@dataclass
class ChunkResult:
    chunk_index: int
    frames: np.ndarray  # (L, H, W, 3) float32
    trajectory: Trajectory
    latency_s: float
    denoiser_evals: int


def default_start_pose(world: World) -> CameraPose:
    """Deterministic free pose: the free cell closest to the grid
    centre, facing +z."""
    free = world.free_cells()
    centre = np.array([world.size / 2.0, world.size / 2.0])
    d = np.abs(free + 0.5 - centre).sum(axis=1)
    x, z = free[int(np.argmin(d))]
    return CameraPose(np.array([x + 0.5, 0.5, z + 0.5]), 0.0, 0.0)


class Session:
    def __init__(self, model: Denoiser, params: dict, cfg: SessionConfig, scene_map: dict):
        self.model = model
        self.params = params
        self.cfg = cfg
        self.id = uuid.uuid4().hex[:12]
        self.status = "idle"
        self._queue: list = []  # (slot, Action), newest last
        self._queue_lock = threading.Lock()
        self._gen_lock = threading.Lock()
        self.current_action: Action = NULL_ACTION
        self.buffer = HistoryBuffer(cfg.buffer_capacity)
        self.chunk_index = 0
        self.K = Intrinsics.square_fov(model.cfg.frame_size)

        if cfg.world_seed is not None:
            self.world = generate_world(cfg.world_seed)
            self.start_pose = default_start_pose(self.world)
            self.first_frame = render_frame(self.world, self.start_pose, self.K, 0)
            self.scene_id = scene_map.get(int(cfg.world_seed), 0)
        else:
            frame = np.asarray(cfg.start_frame, dtype=np.float32)
            hw = (model.cfg.frame_size, model.cfg.frame_size, 3)
            if frame.shape != hw:
                raise ValueError(f"start frame must have shape {hw}, got {frame.shape}")
            self.world = None
            self.start_pose = CameraPose(np.array([0.0, 0.5, 0.0]))
            self.first_frame = frame
            self.scene_id = 0
        self.first_frame_tokens = self.model.patchify(self.first_frame[None, None])[0]

    # ------------------------------------------------------------------

    def push_action(self, keys: KeyState, timestamp: int) -> Ack:
        """Convert and enqueue; never blocks on generation."""
        if self.status == "closed":
            raise SessionError("session is closed")
        act = keys_to_action(keys, self.cfg.control)
        slot = int(timestamp)
        with self._queue_lock:
            if self._queue and self._queue[-1][0] == slot:
                self._queue[-1] = (slot, act)  # latest wins within a slot
                return Ack(ok=True, queue_len=len(self._queue))
            dropped = False
            if len(self._queue) >= self.cfg.queue_capacity:
                self._queue.pop(0)
                dropped = True
            self._queue.append((slot, act))
            return Ack(ok=True, dropped=dropped, queue_len=len(self._queue),
                       detail="oldest action dropped" if dropped else "")

    def _dequeue(self) -> Action:
        with self._queue_lock:
            if self._queue:
                _, act = self._queue.pop(0)
                self.current_action = act
        return self.current_action

    def next_chunk(self, sampler=None) -> ChunkResult:
        if self.status == "closed":
            raise SessionError("session is closed")
        if not self._gen_lock.acquire(blocking=False):
            raise SessionError("a generation is already in flight")
        try:
            self.status = "generating"
            action = self._dequeue()
            rng = np.random.default_rng(
                np.random.SeedSequence([self.cfg.seed, self.chunk_index])
            )
            if sampler is None and self.cfg.distilled:
                sampler = self._distilled_sampler
            t0 = time.perf_counter()
            try:
                tokens, traj, stats = autoregressive_extend(
                    self.model,
                    self.params,
                    self.buffer,
                    action,
                    self.K,
                    rng,
                    steps=self.cfg.steps,
                    guidance=self.cfg.guidance,
                    scene_id=self.scene_id,
                    first_frame_tokens=self.first_frame_tokens,
                    start_pose=self.start_pose,
                    sampler=sampler,
                )
            except Exception as e:
                self.status = "errored"
                raise SessionError(f"sampler failed at chunk {self.chunk_index}: {e}") from e
            latency = time.perf_counter() - t0
            frames = self.model.unpatchify(
                tokens[None], n_frames=self.model.cfg.chunk_frames
            )[0]
            frames = np.clip(frames, 0.0, 1.0)
            result = ChunkResult(
                chunk_index=self.chunk_index,
                frames=frames,
                trajectory=traj,
                latency_s=latency,
                denoiser_evals=stats.denoiser_evals,
            )
            self.chunk_index += 1
            self.status = "idle"
            return result
        finally:
            self._gen_lock.release()

    def _distilled_sampler(self, model, params, action_tokens, mask, head_tokens,
                           steps, guidance, scene_ids, rng):
        return sample_distilled(
            model, params, action_tokens, mask, head_tokens,
            self.cfg.distill_phases, guidance, scene_ids, rng,
        )

    def close(self) -> None:
        self.status = "closed"


class SessionManager:
    """Shared read-only parameters, independent per-session state."""

    def __init__(self, model: Denoiser, params: dict, scene_map: dict | None = None):
        self.model = model
        self.params = params
        self.scene_map = scene_map or {}
        self.sessions: dict = {}
        self._lock = threading.Lock()

    @classmethod
    def from_checkpoint(cls, path) -> "SessionManager":
        cfg, params, header = load_checkpoint(path)
        scene_map = {int(k): v for k, v in header.get("scenes", {}).items()}
        return cls(Denoiser(cfg), params, scene_map)

    def start_session(self, cfg: SessionConfig):
        s = Session(self.model, self.params, cfg, self.scene_map)
        with self._lock:
            self.sessions[s.id] = s
        return s.id, s.first_frame

    def get(self, sid: str) -> Session:
        with self._lock:
            if sid not in self.sessions:
                raise SessionError(f"unknown session {sid}")
            return self.sessions[sid]

    def push_action(self, sid: str, keys: KeyState, timestamp: int) -> Ack:
        return self.get(sid).push_action(keys, timestamp)

    def next_chunk(self, sid: str, sampler=None) -> ChunkResult:
        return self.get(sid).next_chunk(sampler=sampler)

    def close(self, sid: str) -> None:
        self.get(sid).close()
