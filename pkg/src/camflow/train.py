"""Training pipeline: episode dataset, hybrid-mode batch assembly, Adam loop.

Episodes are continuous multi-chunk trajectories with an independent
action per chunk; a training sample picks a target chunk and conditions
on its true history in one of the three head modes.  Temporal-inversion
twins are materialised lazily (frame/pose flips at batch time), and
per-chunk balance weights flatten the start-to-end direction bins.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .actions import Action
from .camera import CameraPose, Intrinsics, Trajectory
from .data import Chunk, DatasetManifest, ManifestEntry, sample_training_episode, write_chunks
from .extension import HeadMode, MULTI_CLIP_K, chunk_plucker_grids, sample_training_mode
from .model import Denoiser, flow_matching_loss_and_grads
from .nn import Adam
from .world import generate_world

__all__ = [
    "EpisodeDataset",
    "TrainConfig",
    "TrainState",
    "generate_training_data",
    "save_training_data",
    "load_training_data",
    "train",
    "moving_average",
]


def action_class_name(vec: np.ndarray) -> str:
    d_trans, d_rot, alpha, beta = vec[:3], vec[3:6], vec[6], vec[7]
    if alpha > 0:
        a = int(np.argmax(np.abs(d_trans)))
        return [["A", "D"], ["Ctrl", "Space"], ["S", "W"]][a][int(d_trans[a] > 0)]
    if beta > 0:
        if abs(d_rot[1]) >= abs(d_rot[0]):
            return "YawLeft" if d_rot[1] > 0 else "YawRight"
        return "PitchUp" if d_rot[0] > 0 else "PitchDown"
    return "Null"


@dataclass
class EpisodeDataset:
    """Compact in-memory episode store (frames quantised to uint8)."""

    frames: np.ndarray  # (E, C, L, H, W, 3) uint8
    poses: np.ndarray  # (E, C, L, 5) float64: x, y, z, yaw, pitch
    actions: np.ndarray  # (E, C, 8) float64: d_trans, d_rot, alpha, beta
    world_seeds: np.ndarray  # (E,)
    scene_ids: np.ndarray  # (E,) 1-based, 0 reserved for null
    fps: float = 25.0

    @property
    def n_episodes(self) -> int:
        return self.frames.shape[0]

    @property
    def chunks_per_episode(self) -> int:
        return self.frames.shape[1]

    @property
    def chunk_len(self) -> int:
        return self.frames.shape[2]

    def total_chunks(self) -> int:
        return self.n_episodes * self.chunks_per_episode

    def pose(self, e: int, c: int, i: int, inverted: bool) -> CameraPose:
        if inverted:
            c = self.chunks_per_episode - 1 - c
            i = self.chunk_len - 1 - i
        r = self.poses[e, c, i]
        return CameraPose(r[:3].copy(), r[3], r[4])

    def chunk_poses(self, e: int, c: int, inverted: bool) -> list:
        return [self.pose(e, c, i, inverted) for i in range(self.chunk_len)]

    def chunk_frames(self, e: int, c: int, inverted: bool) -> np.ndarray:
        if inverted:
            c = self.chunks_per_episode - 1 - c
            f = self.frames[e, c][::-1]
        else:
            f = self.frames[e, c]
        return f.astype(np.float32) / 255.0

    def chunk_action(self, e: int, c: int, inverted: bool) -> Action:
        if inverted:
            c = self.chunks_per_episode - 1 - c
        v = self.actions[e, c]
        sign = -1.0 if inverted else 1.0
        return Action(sign * v[:3], sign * v[3:6], v[6], v[7])

    def displacement_bin(self, e: int, c: int, inverted: bool) -> str:
        first = self.pose(e, c, 0, inverted).position
        last = self.pose(e, c, self.chunk_len - 1, inverted).position
        d = last - first
        if float(np.linalg.norm(d)) < 1e-9:
            return "static"
        a = int(np.argmax(np.abs(d)))
        return ("+" if d[a] >= 0 else "-") + "xyz"[a]


def generate_training_data(
    n_worlds: int = 20,
    episodes_per_world: int = 12,
    chunks_per_episode: int = 3,
    L: int = 8,
    frame_size: int = 64,
    seed: int = 0,
    vocab=("W", "S", "A", "D", "YawLeft", "YawRight"),
    world_size: int = 16,
) -> EpisodeDataset:
    K = Intrinsics.square_fov(frame_size)
    rng = np.random.default_rng(seed)
    frames, poses, acts, seeds, scenes = [], [], [], [], []
    for wi in range(n_worlds):
        world = generate_world(seed * 1000 + wi, size=world_size)
        for ei in range(episodes_per_world):
            eps = sample_training_episode(
                world,
                rng,
                n_chunks=chunks_per_episode,
                vocab=vocab,
                L=L,
                K=K,
                episode_id=f"w{world.seed}e{ei}",
            )
            frames.append(
                np.stack([(c.frames * 255).round().astype(np.uint8) for c in eps])
            )
            poses.append(
                np.stack(
                    [
                        [
                            np.concatenate([p.position, [p.yaw, p.pitch]])
                            for p in c.trajectory.poses
                        ]
                        for c in eps
                    ]
                )
            )
            acts.append(
                np.stack(
                    [
                        np.concatenate(
                            [c.actions[0].d_trans, c.actions[0].d_rot,
                             [c.actions[0].alpha, c.actions[0].beta]]
                        )
                        for c in eps
                    ]
                )
            )
            seeds.append(world.seed)
            scenes.append(wi + 1)
    return EpisodeDataset(
        frames=np.stack(frames),
        poses=np.stack(poses).astype(np.float64),
        actions=np.stack(acts).astype(np.float64),
        world_seeds=np.array(seeds),
        scene_ids=np.array(scenes),
    )


def save_training_data(ds: EpisodeDataset, directory) -> None:
    """GCCH shards (one per world) plus manifest and a fast-reload npz."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    by_seed: dict = {}
    for e in range(ds.n_episodes):
        by_seed.setdefault(int(ds.world_seeds[e]), []).append(e)
    for ws, eps in sorted(by_seed.items()):
        chunks = []
        groups: dict = {}
        for e in eps:
            for c in range(ds.chunks_per_episode):
                act = ds.chunk_action(e, c, False)
                chunk = Chunk(
                    frames=ds.chunk_frames(e, c, False),
                    trajectory=Trajectory(
                        tuple(ds.chunk_poses(e, c, False)), fps=ds.fps
                    ),
                    actions=[act] * ds.chunk_len,
                    world_seed=ws,
                    clip_id=f"w{ws}e{e}c{c}",
                )
                chunks.append(chunk)
                b = ds.displacement_bin(e, c, False)
                name = action_class_name(ds.actions[e, c])
                hist = groups.setdefault(b, {})
                hist[name] = hist.get(name, 0) + 1
        path = os.path.join(directory, f"world_{ws}.gcch")
        write_chunks(chunks, path)
        for b, hist in sorted(groups.items()):
            entries.append(
                ManifestEntry(
                    path=os.path.basename(path),
                    chunk_count=sum(hist.values()),
                    action_histogram=hist,
                    direction_bin=b,
                )
            )
    meta = {
        "episodes": ds.n_episodes,
        "chunks_per_episode": ds.chunks_per_episode,
        "chunk_len": ds.chunk_len,
        "fps": ds.fps,
    }
    with open(os.path.join(directory, "episodes.json"), "w") as f:
        json.dump(meta, f)
    DatasetManifest(entries=entries).save(os.path.join(directory, "manifest.json"))
    np.savez_compressed(
        os.path.join(directory, "episodes.npz"),
        frames=ds.frames,
        poses=ds.poses,
        actions=ds.actions,
        world_seeds=ds.world_seeds,
        scene_ids=ds.scene_ids,
    )


def load_training_data(directory) -> EpisodeDataset:
    with open(os.path.join(directory, "episodes.json")) as f:
        meta = json.load(f)
    z = np.load(os.path.join(directory, "episodes.npz"))
    return EpisodeDataset(
        frames=z["frames"],
        poses=z["poses"],
        actions=z["actions"],
        world_seeds=z["world_seeds"],
        scene_ids=z["scene_ids"],
        fps=meta["fps"],
    )


# ---------------------------------------------------------------------------
# batch assembly


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 2e-3
    lr_final_frac: float = 0.1
    seed: int = 0
    cond_dropout: float = 0.1
    time_sampling: str = "uniform"  # or "logit_normal"
    modes: str = "hybrid"  # or "single_frame" (ablation twin)
    log_every: int = 50


class _Sampler:
    """Pre-weighted (episode, target chunk, orientation) draws; weights
    flatten the direction-bin histogram."""

    def __init__(self, ds: EpisodeDataset):
        self.ds = ds
        items = []
        bins: dict = {}
        for e in range(ds.n_episodes):
            for c in range(1, ds.chunks_per_episode):
                for inv in (False, True):
                    b = ds.displacement_bin(e, c, inv)
                    items.append((e, c, inv))
                    bins[b] = bins.get(b, 0) + 1
        weights = np.array(
            [1.0 / bins[ds.displacement_bin(e, c, inv)] for e, c, inv in items]
        )
        self.items = items
        self.weights = weights / weights.sum()

    def draw(self, rng, need_multi: bool):
        while True:
            i = rng.choice(len(self.items), p=self.weights)
            e, c, inv = self.items[i]
            if need_multi and c < MULTI_CLIP_K:
                continue
            return e, c, inv


def _sample_t(rng, n, scheme):
    if scheme == "logit_normal":
        return 1.0 / (1.0 + np.exp(-rng.standard_normal(n)))
    return rng.uniform(0.0, 1.0, n)


def assemble_batch(
    model: Denoiser,
    ds: EpisodeDataset,
    sampler: _Sampler,
    rng: np.random.Generator,
    cfg: TrainConfig,
    grid_cache: dict,
):
    """One homogeneous-mode training batch (single mode keeps sequence
    lengths equal; the mode ratios hold across batches)."""
    mcfg = model.cfg
    if cfg.modes == "single_frame":
        mode = HeadMode.SINGLE_FRAME
    else:
        mode = sample_training_mode(rng)
    head_chunks = {
        HeadMode.SINGLE_FRAME: 1,
        HeadMode.LAST_CLIP: 1,
        HeadMode.MULTI_CLIP: MULTI_CLIP_K,
    }[mode]
    head_frames = 1 if mode is HeadMode.SINGLE_FRAME else head_chunks * mcfg.chunk_frames
    tpf = mcfg.tokens_per_frame
    total_frames = head_frames + mcfg.chunk_frames
    T = total_frames * tpf
    B = cfg.batch_size
    g = mcfg.frame_size // mcfg.plucker_downsample

    x1 = np.empty((B, T, mcfg.d_model), dtype=mcfg.np_dtype)
    grids = np.empty((B, total_frames, g, g, 6), dtype=mcfg.np_dtype)
    scenes = np.zeros(B, dtype=np.int64)
    mask = np.zeros((B, T), dtype=np.int64)
    mask[:, : head_frames * tpf] = 1

    for b in range(B):
        e, c, inv = sampler.draw(rng, need_multi=mode is HeadMode.MULTI_CLIP)
        hist = list(range(c - head_chunks, c))
        if mode is HeadMode.SINGLE_FRAME:
            head_f = ds.chunk_frames(e, c - 1, inv)[-1:]
            head_poses = [ds.pose(e, c - 1, ds.chunk_len - 1, inv)]
        else:
            head_f = np.concatenate([ds.chunk_frames(e, h, inv) for h in hist])
            head_poses = [p for h in hist for p in ds.chunk_poses(e, h, inv)]
        tgt_f = ds.chunk_frames(e, c, inv)
        tgt_poses = ds.chunk_poses(e, c, inv)
        frames = np.concatenate([head_f, tgt_f])
        x1[b] = model.patchify(frames[None])[0]

        key = (e, c, inv, mode.value)
        if key not in grid_cache:
            grid_cache[key] = chunk_plucker_grids(
                [*head_poses, *tgt_poses],
                head_poses[-1],
                Intrinsics.square_fov(mcfg.frame_size),
                mcfg.plucker_downsample,
            ).astype(mcfg.np_dtype)
        grids[b] = grid_cache[key]
        scenes[b] = ds.scene_ids[e]

    x0 = rng.standard_normal(x1.shape).astype(mcfg.np_dtype)
    t = _sample_t(rng, B, cfg.time_sampling)
    keep = rng.random(B) >= cfg.cond_dropout
    scenes = np.where(keep, scenes, 0)
    return x1, x0, t, mask, grids, scenes, keep


# ---------------------------------------------------------------------------
# optimization loop


@dataclass
class TrainState:
    params: dict
    losses: list = field(default_factory=list)
    log: list = field(default_factory=list)


def train(
    model: Denoiser,
    ds: EpisodeDataset,
    cfg: TrainConfig,
    params: dict | None = None,
    log_path=None,
) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    params = params if params is not None else model.init_params(rng)
    opt = Adam(params, lr=cfg.lr)
    sampler = _Sampler(ds)
    grid_cache: dict = {}
    state = TrainState(params=params)
    log_f = open(log_path, "w") if log_path else None
    t_start = time.time()
    enc_zero = {k: np.zeros_like(v) for k, v in params.items() if k.startswith("act_")}
    try:
        for step in range(cfg.steps):
            x1, x0, t, mask, grids, scenes, keep = assemble_batch(
                model, ds, sampler, rng, cfg, grid_cache
            )
            action_tokens = np.zeros_like(x1)
            kept_idx = np.nonzero(keep)[0]
            enc_cache = None
            if kept_idx.size:
                tok, enc_cache = model.encode_actions(params, grids[kept_idx])
                action_tokens[kept_idx] = tok
            loss, grads, aux = flow_matching_loss_and_grads(
                model, params, x1, x0, t, action_tokens, mask, scenes
            )
            if kept_idx.size:
                grads.update(
                    model.encode_actions_bwd(
                        params, aux["d_action_tokens"][kept_idx], enc_cache
                    )
                )
            else:
                grads.update(enc_zero)

            frac = step / max(cfg.steps - 1, 1)
            lr = cfg.lr * (
                cfg.lr_final_frac
                + (1 - cfg.lr_final_frac) * 0.5 * (1 + np.cos(np.pi * frac))
            )
            opt.step(params, grads, lr=lr)
            state.losses.append(loss)
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                rec = {
                    "step": step,
                    "loss": loss,
                    "lr": float(lr),
                    "wallclock": time.time() - t_start,
                }
                state.log.append(rec)
                if log_f:
                    log_f.write(json.dumps(rec) + "\n")
                    log_f.flush()
    finally:
        if log_f:
            log_f.close()
    return state


def moving_average(xs, window: int = 50) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if len(xs) < window:
        return xs.copy()
    kernel = np.ones(window) / window
    return np.convolve(xs, kernel, mode="valid")
