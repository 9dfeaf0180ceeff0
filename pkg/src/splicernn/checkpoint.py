"""Binary checkpoint files.

Layout (all integers little-endian)::

    magic      4 bytes   b"SPRN"
    version    u16
    reserved   u16       zero
    length     u64       payload byte count
    payload    sections, each: tag (4 ASCII bytes), u64 length, body
    checksum   32 bytes  SHA-256 of everything before it

Sections are ``CONF`` (model config as JSON), ``PARM`` (tensors) and an
optional ``OPTM`` (optimizer metadata as JSON followed by its tensors).
A tensor is ``u16 name length, name, u8 ndim, u32 dims..., float64 data``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .cells import CELL_KINDS
from .model import ModelConfig, SpliceModel
from .optim import Optimizer, from_state_dict

MAGIC = b"SPRN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHQ")
_DIGEST = 32


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode()
    arr = np.asarray(arr, dtype="<f8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def _tensors(items: dict[str, np.ndarray]) -> bytes:
    return struct.pack("<I", len(items)) + b"".join(_tensor(k, v) for k, v in items.items())


def _section(tag: bytes, body: bytes) -> bytes:
    return tag + struct.pack("<Q", len(body)) + body


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def dumps(model: SpliceModel, optimizer: Optimizer | None = None, version: int = FORMAT_VERSION) -> bytes:
    payload = _section(b"CONF", _json(model.config.to_dict()))
    payload += _section(b"PARM", _tensors(model.parameters()))
    if optimizer is not None:
        state = optimizer.state_dict()
        meta = _json({"kind": state["kind"], "hyper": state["hyper"], "t": state["t"]})
        payload += _section(b"OPTM", struct.pack("<I", len(meta)) + meta + _tensors(state["buffers"]))
    head = _HEADER.pack(MAGIC, version, 0, len(payload))
    return head + payload + hashlib.sha256(head + payload).digest()


def save_checkpoint(path, model: SpliceModel, optimizer: Optimizer | None = None):
    Path(path).write_bytes(dumps(model, optimizer))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError("section overruns its declared length")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def tensors(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (n,) = self.unpack("<H")
            name = self.take(n).decode()
            (ndim,) = self.unpack("<B")
            shape = self.unpack(f"<{ndim}I")
            size = int(np.prod(shape, dtype=np.int64))
            out[name] = np.frombuffer(self.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        return out


def loads(data: bytes) -> tuple[SpliceModel, Optimizer | None]:
    if len(data) < _HEADER.size:
        raise CheckpointTruncatedError(f"file is {len(data)} bytes, shorter than the header")
    magic, version, _, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
    expected = _HEADER.size + length + _DIGEST
    if len(data) < expected:
        raise CheckpointTruncatedError(f"file is {len(data)} bytes, header declares {expected}")
    if len(data) > expected:
        raise CheckpointChecksumError(f"{len(data) - expected} unexpected trailing bytes")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointChecksumError("checksum mismatch: file is corrupt")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")

    sections = {}
    reader = _Reader(body[_HEADER.size:])
    while reader.pos < len(reader.buf):
        tag = reader.take(4)
        (n,) = reader.unpack("<Q")
        sections[tag] = reader.take(n)
    if b"CONF" not in sections or b"PARM" not in sections:
        raise CheckpointFormatError("missing config or parameter section")
    config = ModelConfig.from_dict(json.loads(sections[b"CONF"]))
    params = _Reader(sections[b"PARM"]).tensors()
    model = _build(config, params)
    optimizer = None
    if b"OPTM" in sections:
        r = _Reader(sections[b"OPTM"])
        (n,) = r.unpack("<I")
        meta = json.loads(r.take(n))
        meta["buffers"] = r.tensors()
        optimizer = from_state_dict(meta)
    return model, optimizer


def load_checkpoint(path) -> tuple[SpliceModel, Optimizer | None]:
    return loads(Path(path).read_bytes())


def _build(config: ModelConfig, params: dict[str, np.ndarray]) -> SpliceModel:
    dtype = config.dtype
    kind = CELL_KINDS[config.cell_kind]
    try:
        layers = []
        for i in range(len(config.layer_sizes)):
            arrays = {name: params.pop(f"layer{i}.{name}").astype(dtype) for name in kind.params.names}
            layers.append(kind.params(**arrays))
        model = SpliceModel(config, params.pop("embedding").astype(dtype), layers,
                            params.pop("output.W").astype(dtype), params.pop("output.b").astype(dtype))
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"parameters do not match the stored config: {exc}") from None
    if params:
        raise CheckpointFormatError(f"unexpected parameters {sorted(params)}")
    return model


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
