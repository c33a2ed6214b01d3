"""Versioned binary checkpoints: config JSON header + named tensor table + CRC."""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .model import ModelConfig

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

MAGIC = b"GCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, cfg: ModelConfig, params: dict, extra: dict | None = None) -> None:
    """``extra`` merges into the header (e.g. a "distilled" block)."""
    header = {"schema": VERSION, "config": cfg.to_json()}
    if extra:
        header.update(extra)
    hj = json.dumps(header).encode()

    body = bytearray()
    body += struct.pack("<HI", VERSION, len(hj))
    body += hj
    body += struct.pack("<I", len(params))
    for name in sorted(params):
        arr = np.asarray(params[name])
        nb = name.encode()
        ds = str(arr.dtype).encode()
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<B", len(ds)) + ds
        body += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            body += struct.pack("<I", d)
        body += np.ascontiguousarray(arr).tobytes()
    crc = zlib.crc32(bytes(body))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(body)
        f.write(struct.pack("<I", crc))


def load_checkpoint(path):
    """Returns (config, params, header_dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r}")
    body, (crc,) = blob[4:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    version, hlen = struct.unpack_from("<HI", body, 0)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 6
    header = json.loads(body[off : off + hlen].decode())
    off += hlen
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off : off + nlen].decode()
        off += nlen
        (dlen,) = struct.unpack_from("<B", body, off)
        off += 1
        dtype = np.dtype(body[off : off + dlen].decode())
        off += dlen
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off) if ndim else ()
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        nbytes = size * dtype.itemsize
        arr = np.frombuffer(body, dtype=dtype, count=size, offset=off).reshape(shape).copy()
        off += nbytes
        params[name] = arr if ndim else arr.reshape(())
    cfg = ModelConfig.from_json(header["config"])
    return cfg, params, header
