"""Command line entry points: dataset, train, generate, distill, eval, serve."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def cmd_dataset(args):
    from .train import generate_training_data, save_training_data

    cfg = _load_json(args.config) if args.config else {}
    ds = generate_training_data(
        n_worlds=cfg.get("n_worlds", 20),
        episodes_per_world=cfg.get("episodes_per_world", 34),
        chunks_per_episode=cfg.get("chunks_per_episode", 3),
        L=cfg.get("chunk_len", 8),
        frame_size=cfg.get("frame_size", 32),
        seed=cfg.get("seed", 0),
    )
    save_training_data(ds, args.out)
    print(f"wrote {ds.total_chunks()} chunks ({ds.n_episodes} episodes) to {args.out}")


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .model import Denoiser, ModelConfig
    from .train import TrainConfig, load_training_data, train

    cfg = _load_json(args.config) if args.config else {}
    ds = load_training_data(args.data)
    mc_doc = cfg.get("model", {})
    mc_doc.setdefault("frame_size", int(ds.frames.shape[4]))
    mc_doc.setdefault("chunk_frames", int(ds.chunk_len))
    mc_doc.setdefault("n_scenes", int(ds.scene_ids.max()))
    mcfg = ModelConfig.from_json(mc_doc)
    tcfg = TrainConfig(**cfg.get("train", {}))
    model = Denoiser(mcfg)
    log_path = args.log or (args.out + ".log.jsonl")
    state = train(model, ds, tcfg, log_path=log_path)
    scenes = {
        str(int(ws)): int(sc) for ws, sc in zip(ds.world_seeds, ds.scene_ids)
    }
    save_checkpoint(args.out, mcfg, state.params, extra={"scenes": scenes})
    print(f"trained {tcfg.steps} steps; final loss {state.losses[-1]:.4f}; wrote {args.out}")


def cmd_generate(args):
    from .actions import Action
    from .camera import Trajectory, save_trajectory
    from .data import Chunk, write_chunks
    from .serve import session_config_from_json
    from .session import SessionConfig, SessionManager
    from .world import write_frames_png, write_frames_raw

    manager = SessionManager.from_checkpoint(args.ckpt)
    with open(args.script) as f:
        script = json.load(f)
    cfg = SessionConfig(
        world_seed=args.world_seed,
        seed=args.seed,
        steps=args.steps,
        guidance=args.guidance,
        distilled=args.distilled,
    )
    sid, first = manager.start_session(cfg)
    os.makedirs(args.out, exist_ok=True)
    from .actions import KeyState

    chunks = []
    poses = []
    all_frames = [first[None]]
    ts = 0
    for step in script:
        n_chunks = int(step.get("chunks", 1))
        if "keys" in step:
            manager.push_action(sid, KeyState(pressed=frozenset(step["keys"])), timestamp=ts)
        elif "action" in step:
            a = step["action"]
            act = Action(np.array(a["d_trans"]), np.array(a["d_rot"]), a["alpha"], a["beta"])
            session = manager.get(sid)
            with session._queue_lock:
                session._queue.append((ts, act))
        ts += 1
        for _ in range(n_chunks):
            r = manager.next_chunk(sid)
            session = manager.get(sid)
            chunks.append(
                Chunk(
                    frames=r.frames,
                    trajectory=r.trajectory,
                    actions=[session.current_action] * r.frames.shape[0],
                    world_seed=args.world_seed if args.world_seed is not None else -1,
                    clip_id=f"rollout_c{r.chunk_index}",
                )
            )
            poses.extend(r.trajectory.poses)
            all_frames.append(r.frames)
            print(
                f"chunk {r.chunk_index}: {r.latency_s:.2f}s, "
                f"{r.denoiser_evals} denoiser evals"
            )
    write_chunks(chunks, os.path.join(args.out, "chunks.gcch"))
    save_trajectory(Trajectory(tuple(poses)), os.path.join(args.out, "trajectory.json"))
    frames = np.concatenate(all_frames)
    write_frames_raw(frames, os.path.join(args.out, "frames.gcmv"))
    if args.png:
        write_frames_png(frames, os.path.join(args.out, "png"))
    with open(os.path.join(args.out, "rollout.json"), "w") as f:
        json.dump(
            {
                "world_seed": args.world_seed,
                "seed": args.seed,
                "chunks": len(chunks),
                "steps": args.steps,
                "guidance": args.guidance,
                "distilled": args.distilled,
            },
            f,
            indent=1,
        )
    print(f"wrote rollout ({len(chunks)} chunks) to {args.out}")


def cmd_distill(args):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .distill import DistillConfig, pcm_distill
    from .model import Denoiser
    from .train import TrainConfig, _Sampler, assemble_batch, load_training_data

    cfg_doc = _load_json(args.config) if args.config else {}
    mcfg, teacher, header = load_checkpoint(args.teacher)
    model = Denoiser(mcfg)
    ds = load_training_data(args.data)
    dcfg = DistillConfig(**cfg_doc.get("distill", {}))
    tcfg = TrainConfig(batch_size=dcfg.batch_size, cond_dropout=0.0, seed=dcfg.seed)
    sampler = _Sampler(ds)
    cache: dict = {}

    def batch_fn(rng):
        x1, x0, t, mask, grids, scenes, _ = assemble_batch(model, ds, sampler, rng, tcfg, cache)
        tok, _ = model.encode_actions(teacher, grids)
        return {"x1": x1, "x0": x0, "action_tokens": tok, "mask": mask, "scene_ids": scenes}

    log: list = []
    student = pcm_distill(model, teacher, dcfg, batch_fn, log=log)
    extra = {
        "scenes": header.get("scenes", {}),
        "distilled": {"K": dcfg.phases, "p_w": [dcfg.w_min, dcfg.w_max]},
    }
    save_checkpoint(args.out, mcfg, student, extra=extra)
    print(f"distilled {dcfg.steps} steps (K={dcfg.phases}); wrote {args.out}")


def cmd_eval(args):
    from .alignment import apply_sim3, rpe, umeyama_sim3
    from .camera import Intrinsics, load_trajectory
    from .data import read_chunks
    from .evalkit import (
        EvalReport,
        drift_photometric,
        dynamic_average,
        recover_trajectory,
        temporal_consistency,
    )
    from .world import generate_world

    chunks = read_chunks(os.path.join(args.rollout, "chunks.gcch"))
    gt = load_trajectory(os.path.join(args.rollout, "trajectory.json"))
    world = generate_world(args.world_seed)
    frames = np.concatenate([c.frames for c in chunks])
    H = frames.shape[1]
    K = Intrinsics.square_fov(H)
    times = list(range(1, len(frames) + 1))
    rec = recover_trajectory(
        frames, world, K, init=gt[0], times=times,
        unreliable_threshold=args.unreliable_threshold,
    )
    sim = umeyama_sim3(rec.trajectory, gt)
    aligned = apply_sim3(sim, rec.trajectory)
    r = rpe(aligned, gt)
    drift = drift_photometric(
        [c.frames for c in chunks], rec, world, K, times=times
    )
    report = EvalReport(
        rpe_trans=r.rpe_trans,
        rpe_rot=r.rpe_rot,
        dynamic_average=dynamic_average(frames),
        temporal_consistency=temporal_consistency(frames),
        drift_photometric=drift["series"],
        config={"rollout": args.rollout, "world_seed": args.world_seed,
                "excluded_frames": drift["excluded_frames"]},
        seed=args.world_seed,
    )
    print(report.table())
    if args.out:
        report.save(args.out)
        print(f"wrote {args.out}")


def cmd_serve(args):
    import asyncio

    from .serve import run_server
    from .session import SessionManager

    manager = SessionManager.from_checkpoint(args.ckpt)
    static = os.path.join(os.path.dirname(__file__), "..", "..", "frontend", "dist")
    print(f"model loaded from {args.ckpt}; ws://{args.host}:{args.port}")
    if os.path.isdir(static):
        print(f"static UI bundle at {os.path.abspath(static)} (open index.html)")
    asyncio.run(run_server(manager, host=args.host, port=args.port))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="camflow", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    d = sub.add_parser("dataset", help="generate a training dataset")
    d.add_argument("--out", required=True)
    d.add_argument("--config", help="JSON with dataset sizes")
    d.set_defaults(fn=cmd_dataset)

    t = sub.add_parser("train", help="train the chunk denoiser")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON: {model: {...}, train: {...}}")
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.set_defaults(fn=cmd_train)

    g = sub.add_parser("generate", help="roll out chunks from an action script")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--script", required=True)
    g.add_argument("--world-seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--steps", type=int, default=16)
    g.add_argument("--guidance", type=float, default=1.5)
    g.add_argument("--distilled", action="store_true")
    g.add_argument("--png", action="store_true")
    g.set_defaults(fn=cmd_generate)

    di = sub.add_parser("distill", help="distill guidance into a few-step student")
    di.add_argument("--teacher", required=True)
    di.add_argument("--data", required=True)
    di.add_argument("--config")
    di.add_argument("--out", required=True)
    di.set_defaults(fn=cmd_distill)

    e = sub.add_parser("eval", help="evaluate a rollout against its world")
    e.add_argument("--rollout", required=True)
    e.add_argument("--world-seed", type=int, required=True)
    e.add_argument("--out")
    e.add_argument("--unreliable-threshold", type=float, default=0.05)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("serve", help="interactive WebSocket server")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
