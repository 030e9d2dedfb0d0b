"""
Binary frame codec.

Frame layout (little-endian):

    magic    4 bytes  b"FNAS"
    version  u16      1
    kind     u8       MessageKind
    length   u64      payload byte count
    payload  length bytes
    crc32    u32      CRC32 of header bytes followed by payload

Tensors are a u32 count, then per tensor: ndim u8, dims u32 each, raw
float64 little-endian data. Strings are u32 length + UTF-8.
"""

import logging
import struct
import zlib
from typing import List, Sequence, Tuple

import numpy as np

from src.comm.messages import (
    MESSAGE_TYPES,
    GlobalModelEval,
    GlobalUpdate,
    Init,
    LocalResult,
    MessageKind,
    Register,
    RoundMessage,
    Shutdown,
)
from src.utils.errors import ProtocolError

logger = logging.getLogger(__name__)

MAGIC = b"FNAS"
VERSION = 1
HEADER = struct.Struct("<4sHBQ")
TRAILER = struct.Struct("<I")
HEADER_SIZE = HEADER.size
FRAME_OVERHEAD = HEADER.size + TRAILER.size


class FrameError(ProtocolError):
    pass


class BadMagicError(FrameError):
    pass


class VersionMismatchError(FrameError):
    pass


class ChecksumError(FrameError):
    pass


class TruncatedFrameError(FrameError):
    pass


class UnknownKindError(FrameError):
    pass


# ===== payload primitives =====

class PayloadReader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise FrameError(f"payload ends early: need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return bytes(self.take(n)).decode("utf-8")

    def tensors(self) -> List[np.ndarray]:
        (count,) = self.unpack("<I")
        out = []
        for _ in range(count):
            (ndim,) = self.unpack("<B")
            shape = self.unpack(f"<{ndim}I") if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            raw = self.take(8 * size)
            out.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
        return out

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FrameError(f"{len(self.data) - self.pos} unread payload bytes")


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode_tensors(tensors: Sequence[np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for t in tensors:
        t = np.asarray(t)
        parts.append(struct.pack(f"<B{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return b"".join(parts)


def tensor_block_size(shapes: Sequence[Tuple[int, ...]]) -> int:
    """Encoded byte size of a tensor block with the given shapes."""
    return 4 + sum(1 + 4 * len(s) + 8 * int(np.prod(s)) for s in shapes)


def _optional_tensors(tensors: Sequence[np.ndarray] | None) -> bytes:
    if tensors is None:
        return struct.pack("<B", 0)
    return struct.pack("<B", 1) + encode_tensors(tensors)


# ===== messages =====

def _encode_payload(msg: RoundMessage) -> bytes:
    if isinstance(msg, Register):
        return struct.pack("<I", msg.client_id) + _string(msg.config_hash)
    if isinstance(msg, Init):
        return _string(msg.config_hash) + _string(msg.spec)
    if isinstance(msg, GlobalUpdate):
        return struct.pack("<I", msg.round) + encode_tensors(msg.weights) + _optional_tensors(msg.alpha)
    if isinstance(msg, LocalResult):
        return (struct.pack("<IIQ", msg.round, msg.client_id, msg.num_samples)
                + encode_tensors(msg.weights) + _optional_tensors(msg.alpha))
    if isinstance(msg, GlobalModelEval):
        return struct.pack("<Idd", msg.round, msg.loss, msg.acc)
    if isinstance(msg, Shutdown):
        return _string(msg.reason)
    raise UnknownKindError(f"cannot encode {type(msg).__name__}")


def _decode_payload(kind: MessageKind, payload: bytes) -> RoundMessage:
    r = PayloadReader(payload)
    if kind == MessageKind.REGISTER:
        (client_id,) = r.unpack("<I")
        msg = Register(client_id, r.string())
    elif kind == MessageKind.INIT:
        msg = Init(r.string(), r.string())
    elif kind == MessageKind.GLOBAL_UPDATE:
        (t,) = r.unpack("<I")
        weights = r.tensors()
        (has_alpha,) = r.unpack("<B")
        msg = GlobalUpdate(t, weights, r.tensors() if has_alpha else None)
    elif kind == MessageKind.LOCAL_RESULT:
        t, client_id, num_samples = r.unpack("<IIQ")
        weights = r.tensors()
        (has_alpha,) = r.unpack("<B")
        msg = LocalResult(t, client_id, num_samples, weights, r.tensors() if has_alpha else None)
    elif kind == MessageKind.GLOBAL_MODEL_EVAL:
        msg = GlobalModelEval(*r.unpack("<Idd"))
    else:
        msg = Shutdown(r.string())
    r.done()
    return msg


def encode(msg: RoundMessage) -> bytes:
    payload = _encode_payload(msg)
    header = HEADER.pack(MAGIC, VERSION, int(msg.kind), len(payload))
    crc = zlib.crc32(payload, zlib.crc32(header))
    return header + payload + TRAILER.pack(crc)


def parse_header(header: bytes) -> Tuple[int, int]:
    """Validate a frame header; returns (kind byte, payload length)."""
    if len(header) < HEADER_SIZE:
        raise TruncatedFrameError(f"header needs {HEADER_SIZE} bytes, got {len(header)}")
    magic, version, kind, length = HEADER.unpack(header[:HEADER_SIZE])
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"frame version {version}, expected {VERSION}")
    return kind, length


def decode(frame: bytes) -> RoundMessage:
    kind, length = parse_header(frame)
    expected = FRAME_OVERHEAD + length
    if len(frame) < expected:
        raise TruncatedFrameError(f"frame needs {expected} bytes, got {len(frame)}")
    if len(frame) > expected:
        raise FrameError(f"{len(frame) - expected} trailing bytes after frame")
    header = frame[:HEADER_SIZE]
    payload = frame[HEADER_SIZE:HEADER_SIZE + length]
    (crc,) = TRAILER.unpack(frame[HEADER_SIZE + length:])
    if zlib.crc32(payload, zlib.crc32(header)) != crc:
        raise ChecksumError(f"checksum mismatch on {length}-byte payload")
    if kind not in MESSAGE_TYPES:
        raise UnknownKindError(f"unknown message kind {kind}")
    return _decode_payload(MessageKind(kind), payload)
