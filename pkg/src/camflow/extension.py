"""Hybrid history conditioning and autoregressive chunk rollout.

A head condition prepends clean history tokens (one frame, the previous
chunk, or the two newest chunks) before the noise region; a binary mask
marks head positions so the sampler can hold them fixed while the chunk
region is denoised.  Training mixes the three modes at fixed ratios;
inference defaults to the previous chunk when history exists.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .actions import Action
from .camera import CameraPose, Intrinsics, Trajectory, integrate_action, plucker_embedding, relative_pose
from .model import Denoiser, sample

__all__ = [
    "HeadMode",
    "HeadCondition",
    "HistoryBuffer",
    "MODE_PROBS",
    "build_head_condition",
    "sample_training_mode",
    "chunk_plucker_grids",
    "autoregressive_extend",
]


class HeadMode(enum.Enum):
    SINGLE_FRAME = "single_frame"
    LAST_CLIP = "last_clip"
    MULTI_CLIP = "multi_clip"


# training-time mode mixture
MODE_PROBS = {
    HeadMode.LAST_CLIP: 0.70,
    HeadMode.MULTI_CLIP: 0.05,
    HeadMode.SINGLE_FRAME: 0.25,
}

MULTI_CLIP_K = 2


@dataclass
class HeadCondition:
    mode: HeadMode
    head_tokens: np.ndarray  # (head_frames * tokens_per_frame, D)
    mask: np.ndarray  # (1, total_tokens) binary, 1 = head
    head_frames: int

    def __post_init__(self):
        ones = int(self.mask.sum())
        if ones != self.head_tokens.shape[0]:
            raise ValueError("mask ones must match head token count")


@dataclass
class BufferEntry:
    tokens: np.ndarray  # (chunk_tokens, D) clean
    trajectory: Trajectory
    action: Action


class HistoryBuffer:
    """Ring buffer of the newest generated chunks."""

    def __init__(self, capacity: int = 4):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self._entries)

    def append(self, entry: BufferEntry) -> None:
        self._entries.append(entry)

    def newest(self, k: int = 1) -> list:
        if k > len(self._entries):
            raise ValueError("not enough buffered chunks")
        return list(self._entries)[-k:]

    def last_pose(self) -> CameraPose:
        return self.newest(1)[0].trajectory[-1]

    def entries(self) -> list:
        return list(self._entries)


def build_head_condition(
    mode: HeadMode,
    buffer: HistoryBuffer | None,
    first_frame_tokens: np.ndarray | None,
    tokens_per_frame: int,
    chunk_frames: int,
) -> HeadCondition:
    """Assemble head tokens + mask for one chunk-denoising pass."""
    if mode is HeadMode.SINGLE_FRAME:
        if first_frame_tokens is None:
            raise ValueError("single-frame mode needs a reference frame")
        head = first_frame_tokens.reshape(-1, first_frame_tokens.shape[-1])
        if head.shape[0] != tokens_per_frame:
            raise ValueError("reference frame has wrong token count")
        head_frames = 1
    elif mode is HeadMode.LAST_CLIP:
        if buffer is None or len(buffer) < 1:
            raise ValueError("last-clip mode needs one buffered chunk")
        head = buffer.newest(1)[0].tokens
        head_frames = chunk_frames
    elif mode is HeadMode.MULTI_CLIP:
        if buffer is None or len(buffer) < MULTI_CLIP_K:
            raise ValueError(f"multi-clip mode needs {MULTI_CLIP_K} buffered chunks")
        head = np.concatenate([e.tokens for e in buffer.newest(MULTI_CLIP_K)], axis=0)
        head_frames = MULTI_CLIP_K * chunk_frames
    else:  # pragma: no cover
        raise ValueError(mode)
    total = (head_frames + chunk_frames) * tokens_per_frame
    mask = np.zeros((1, total), dtype=np.int64)
    mask[0, : head_frames * tokens_per_frame] = 1
    return HeadCondition(mode=mode, head_tokens=head, mask=mask, head_frames=head_frames)


def sample_training_mode(rng: np.random.Generator) -> HeadMode:
    """Categorical draw at the fixed training ratios."""
    r = rng.random()
    if r < MODE_PROBS[HeadMode.LAST_CLIP]:
        return HeadMode.LAST_CLIP
    if r < MODE_PROBS[HeadMode.LAST_CLIP] + MODE_PROBS[HeadMode.MULTI_CLIP]:
        return HeadMode.MULTI_CLIP
    return HeadMode.SINGLE_FRAME


def chunk_plucker_grids(
    poses,
    anchor: CameraPose,
    K: Intrinsics,
    downsample: int,
) -> np.ndarray:
    """Stack of anchor-relative Plücker grids, one per pose."""
    grids = [
        plucker_embedding(relative_pose(p, anchor), K, downsample) for p in poses
    ]
    return np.stack(grids)


def autoregressive_extend(
    model: Denoiser,
    params: dict,
    buffer: HistoryBuffer,
    next_action: Action,
    K: Intrinsics,
    rng: np.random.Generator,
    steps: int = 16,
    guidance: float = 1.5,
    scene_id: int = 0,
    mode: HeadMode | None = None,
    first_frame_tokens: np.ndarray | None = None,
    start_pose: CameraPose | None = None,
    sampler=None,
):
    """Generate the next chunk: integrate the action from the last
    buffered pose, build the head condition, sample the chunk tokens,
    append to the buffer.

    Returns (chunk tokens (chunk_tokens, D), trajectory, SampleStats).
    """
    cfg = model.cfg
    if len(buffer) == 0 and first_frame_tokens is None:
        raise ValueError("need history or a reference frame to extend from")
    if mode is None:
        mode = HeadMode.LAST_CLIP if len(buffer) else HeadMode.SINGLE_FRAME
    if mode is HeadMode.SINGLE_FRAME and len(buffer) == 0 and start_pose is None:
        raise ValueError("first extension needs the reference pose")

    anchor = buffer.last_pose() if len(buffer) else start_pose
    traj = integrate_action(anchor, next_action, cfg.chunk_frames)
    head = build_head_condition(
        mode,
        buffer if len(buffer) else None,
        first_frame_tokens,
        cfg.tokens_per_frame,
        cfg.chunk_frames,
    )

    # conditioning covers head frames and the new chunk, all anchored at
    # the last history pose
    if mode is HeadMode.SINGLE_FRAME:
        head_poses = [anchor]
    else:
        k = 1 if mode is HeadMode.LAST_CLIP else MULTI_CLIP_K
        head_poses = [p for e in buffer.newest(k) for p in e.trajectory.poses]
    grids = chunk_plucker_grids(
        [*head_poses, *traj.poses], anchor, K, cfg.plucker_downsample
    )
    action_tokens, _ = model.encode_actions(params, grids[None])

    do_sample = sampler or sample
    try:
        tokens, stats = do_sample(
            model,
            params,
            action_tokens,
            head.mask,
            head.head_tokens,
            steps,
            guidance,
            np.array([scene_id]),
            rng,
        )
    except RuntimeError as e:
        raise RuntimeError(f"chunk {len(buffer)}: {e}") from e
    chunk_tokens = tokens[0, head.head_frames * cfg.tokens_per_frame :]
    buffer.append(BufferEntry(tokens=chunk_tokens.copy(), trajectory=traj, action=next_action))
    return chunk_tokens, traj, stats
