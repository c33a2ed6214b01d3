"""WebSocket wire protocol for live steering.

Client to server:
  {"type": "start", "config": {...}}
  {"type": "keys", "pressed": [...], "mouse": [dx, dy], "scales": {"speed": s, "turn": t}}
  {"type": "close"}
Server to client:
  {"type": "ack", "detail": {...}}
  {"type": "error", "detail": "..."}
  {"type": "frame_chunk", "session": id, "chunk_index": i,
   "encoding": "raw_rgb8", "h": H, "w": W, "n": L, "data": base64,
   "trajectory": [{"position": [x,y,z], "yaw": yaw, "pitch": pitch}, ...]}

Generation runs continuously per connection (one chunk after another in
a worker thread); key messages are ingested immediately and take effect
at the next chunk boundary.
"""

from __future__ import annotations

import asyncio
import base64
import json
import logging

import numpy as np

from .actions import KeyState
from .session import ChunkResult, SessionConfig, SessionManager

__all__ = [
    "frame_chunk_message",
    "parse_keys_message",
    "session_config_from_json",
    "run_server",
]

log = logging.getLogger("camflow.serve")


def frame_chunk_message(session_id: str, result: ChunkResult) -> dict:
    frames = (np.clip(result.frames, 0, 1) * 255).round().astype(np.uint8)
    n, h, w, _ = frames.shape
    return {
        "type": "frame_chunk",
        "session": session_id,
        "chunk_index": result.chunk_index,
        "encoding": "raw_rgb8",
        "h": h,
        "w": w,
        "n": n,
        "data": base64.b64encode(frames.tobytes()).decode(),
        "trajectory": [
            {
                "position": [float(v) for v in p.position],
                "yaw": p.yaw,
                "pitch": p.pitch,
            }
            for p in result.trajectory.poses
        ],
        "latency_s": result.latency_s,
        "denoiser_evals": result.denoiser_evals,
    }


def parse_keys_message(msg: dict) -> KeyState:
    scales = msg.get("scales", {})
    return KeyState(
        pressed=frozenset(msg.get("pressed", [])),
        mouse_delta=tuple(msg.get("mouse", (0.0, 0.0))),
        speed_scale=float(scales.get("speed", 1.0)),
        turn_scale=float(scales.get("turn", 1.0)),
    )


def session_config_from_json(doc: dict) -> SessionConfig:
    return SessionConfig(
        world_seed=doc.get("world_seed"),
        seed=int(doc.get("seed", 0)),
        steps=int(doc.get("steps", 16)),
        guidance=float(doc.get("guidance", 1.5)),
        distilled=bool(doc.get("distilled", False)),
        distill_phases=int(doc.get("distill_phases", 8)),
        queue_capacity=int(doc.get("queue_capacity", 4)),
        buffer_capacity=int(doc.get("buffer_capacity", 4)),
    )


async def _generation_loop(ws, manager: SessionManager, sid: str, stop: asyncio.Event):
    loop = asyncio.get_running_loop()
    while not stop.is_set():
        try:
            result = await loop.run_in_executor(None, manager.next_chunk, sid)
        except Exception as e:
            if not stop.is_set():
                await ws.send(json.dumps({"type": "error", "detail": str(e)}))
            return
        await ws.send(json.dumps(frame_chunk_message(sid, result)))


async def _handle(ws, manager: SessionManager):
    sid = None
    stop = asyncio.Event()
    gen_task = None
    try:
        async for raw in ws:
            try:
                msg = json.loads(raw)
            except json.JSONDecodeError:
                await ws.send(json.dumps({"type": "error", "detail": "malformed JSON"}))
                continue
            kind = msg.get("type")
            if kind == "start":
                if sid is not None:
                    await ws.send(json.dumps({"type": "error", "detail": "session already started"}))
                    continue
                try:
                    cfg = session_config_from_json(msg.get("config", {}))
                    sid, _first = manager.start_session(cfg)
                except Exception as e:
                    await ws.send(json.dumps({"type": "error", "detail": str(e)}))
                    continue
                await ws.send(json.dumps({"type": "ack", "detail": {"session": sid}}))
                gen_task = asyncio.create_task(_generation_loop(ws, manager, sid, stop))
            elif kind == "keys":
                if sid is None:
                    await ws.send(json.dumps({"type": "error", "detail": "no session"}))
                    continue
                try:
                    keys = parse_keys_message(msg)
                    ack = manager.push_action(sid, keys, timestamp=msg.get("timestamp", 0))
                    await ws.send(
                        json.dumps(
                            {
                                "type": "ack",
                                "detail": {
                                    "dropped": ack.dropped,
                                    "queue_len": ack.queue_len,
                                },
                            }
                        )
                    )
                except Exception as e:
                    await ws.send(json.dumps({"type": "error", "detail": str(e)}))
            elif kind == "close":
                break
            else:
                await ws.send(json.dumps({"type": "error", "detail": f"unknown type {kind!r}"}))
    finally:
        stop.set()
        if sid is not None:
            try:
                manager.close(sid)
            except Exception:
                pass
        if gen_task is not None:
            gen_task.cancel()


async def run_server(manager: SessionManager, host: str = "127.0.0.1", port: int = 8765,
                     ready: asyncio.Event | None = None, stop: asyncio.Event | None = None):
    import websockets

    async def handler(ws):
        await _handle(ws, manager)

    async with websockets.serve(handler, host, port, max_size=64 * 1024 * 1024):
        log.info("serving on ws://%s:%d", host, port)
        if ready is not None:
            ready.set()
        if stop is None:
            await asyncio.Future()
        else:
            await stop.wait()
