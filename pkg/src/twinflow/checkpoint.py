"""Binary checkpoints: model header + parameters, then optional extension blocks.

Layout (all integers little-endian)::

    u32 format_version
    u32 data_dim, u32 hidden, u32 depth, u32 n_classes, u64 seed
    u32 n_freqs, f64 max_freq
    u32 n_params
    n_params x { u32 name_len, name (utf-8), u32 rank, u32 dims[rank], f64 data[prod(dims)] }
    repeated until EOF:
    { u32 tag_len, tag (utf-8), u64 payload_len, payload }

Extension blocks written by the trainer: ``ema``, ``adam_m``, ``adam_v``
(each a parameter block: u32 count followed by parameter records) and
``state`` (UTF-8 JSON with step counter, RNG state and resolved config).
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .model import NetConfig, ParamSnapshot

FORMAT_VERSION = 1
_HEADER = struct.Struct("<IIIIIQIdI")


class CheckpointError(ValueError):
    pass


def _write_params(buf: io.BytesIO, params: ParamSnapshot) -> None:
    for name, arr in params.items():
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(buf: io.BytesIO, n: int) -> bytes:
    out = buf.read(n)
    if len(out) != n:
        raise CheckpointError("truncated checkpoint")
    return out


def _read_params(buf: io.BytesIO, count: int) -> ParamSnapshot:
    params: ParamSnapshot = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(buf, 4))
        name = _read_exact(buf, name_len).decode()
        (rank,) = struct.unpack("<I", _read_exact(buf, 4))
        shape = struct.unpack(f"<{rank}I", _read_exact(buf, 4 * rank))
        size = int(np.prod(shape))
        data = np.frombuffer(_read_exact(buf, 8 * size), dtype="<f8").astype(np.float64)
        if name in params:
            raise CheckpointError(f"duplicate parameter {name!r}")
        params[name] = data.reshape(shape)
    return params


def param_block(params: ParamSnapshot) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(params)))
    _write_params(buf, params)
    return buf.getvalue()


def read_param_block(payload: bytes) -> ParamSnapshot:
    buf = io.BytesIO(payload)
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    return _read_params(buf, count)


def dumps(cfg: NetConfig, params: ParamSnapshot, extensions: dict[str, bytes] | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(FORMAT_VERSION, cfg.data_dim, cfg.hidden, cfg.depth, cfg.n_classes,
                           cfg.seed, cfg.n_freqs, cfg.max_freq, len(params)))
    _write_params(buf, params)
    for tag, payload in (extensions or {}).items():
        raw = tag.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    return buf.getvalue()


def loads(blob: bytes) -> tuple[NetConfig, ParamSnapshot, dict[str, bytes]]:
    buf = io.BytesIO(blob)
    head = _read_exact(buf, _HEADER.size)
    version, d, h, depth, ncls, seed, nf, mf, count = _HEADER.unpack(head)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg = NetConfig(data_dim=d, hidden=h, depth=depth, n_classes=ncls, n_freqs=nf,
                    max_freq=mf, seed=seed)
    params = _read_params(buf, count)
    ext: dict[str, bytes] = {}
    while True:
        peek = buf.read(4)
        if not peek:
            break
        if len(peek) != 4:
            raise CheckpointError("truncated extension header")
        (tag_len,) = struct.unpack("<I", peek)
        tag = _read_exact(buf, tag_len).decode()
        (size,) = struct.unpack("<Q", _read_exact(buf, 8))
        ext[tag] = _read_exact(buf, size)
    return cfg, params, ext


def save(path, cfg: NetConfig, params: ParamSnapshot, extensions: dict[str, bytes] | None = None):
    Path(path).write_bytes(dumps(cfg, params, extensions))


def load(path) -> tuple[NetConfig, ParamSnapshot, dict[str, bytes]]:
    return loads(Path(path).read_bytes())


def json_block(obj) -> bytes:
    return json.dumps(obj, sort_keys=True).encode()


def read_json_block(payload: bytes):
    return json.loads(payload.decode())
