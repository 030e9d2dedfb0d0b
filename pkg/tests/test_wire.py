import struct
import zlib

import numpy as np
import pytest

from src.comm import wire
from src.comm.messages import GlobalModelEval, GlobalUpdate, Init, LocalResult, MessageKind, Register, Shutdown
from src.comm.wire import (
    FRAME_OVERHEAD,
    HEADER,
    BadMagicError,
    ChecksumError,
    FrameError,
    PayloadReader,
    TruncatedFrameError,
    UnknownKindError,
    VersionMismatchError,
    decode,
    encode,
    encode_tensors,
    tensor_block_size,
)
from src.utils.errors import ProtocolError


def _tensors(rng):
    return [rng.normal(size=(2, 3)), rng.normal(size=(4,)), np.array(2.5), np.zeros((1, 0, 2))]


def _assert_tensors_equal(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.shape == y.shape and x.dtype == np.float64
        np.testing.assert_array_equal(x, y)


def test_register_and_init():
    msg = decode(encode(Register(3, "ab" * 32)))
    assert isinstance(msg, Register) and msg.client_id == 3 and msg.config_hash == "ab" * 32
    msg = decode(encode(Init("cafe", '{"mode":"search","note":"é"}')))
    assert isinstance(msg, Init) and msg.spec.endswith('"é"}')


def test_global_update(rng):
    weights = _tensors(rng)
    alpha = [rng.normal(size=(14, 8)), rng.normal(size=(14, 8))]
    msg = decode(encode(GlobalUpdate(7, weights, alpha)))
    assert msg.round == 7
    _assert_tensors_equal(msg.weights, weights)
    _assert_tensors_equal(msg.alpha, alpha)
    assert decode(encode(GlobalUpdate(0, weights))).alpha is None


def test_local_result(rng):
    weights = _tensors(rng)
    msg = decode(encode(LocalResult(2, 5, 3125, weights)))
    assert (msg.round, msg.client_id, msg.num_samples, msg.alpha) == (2, 5, 3125, None)
    _assert_tensors_equal(msg.weights, weights)


def test_eval_and_shutdown():
    msg = decode(encode(GlobalModelEval(4, 1.25, 0.5)))
    assert (msg.round, msg.loss, msg.acc) == (4, 1.25, 0.5)
    assert decode(encode(Shutdown("aborted: x"))).reason == "aborted: x"
    assert decode(encode(Shutdown())).reason == "done"


def test_tensor_bits_survive():
    special = np.array([-0.0, 5e-324, np.finfo(np.float64).max, np.nextafter(1.0, 2.0)])
    (back,) = PayloadReader(encode_tensors([special])).tensors()
    assert back.tobytes() == special.tobytes()
    assert np.signbit(back[0])


def test_tensor_block_size(rng):
    tensors = _tensors(rng)
    assert len(encode_tensors(tensors)) == tensor_block_size([t.shape for t in tensors])


def test_header_layout():
    frame = encode(Shutdown("done"))
    magic, version, kind, length = HEADER.unpack(frame[:HEADER.size])
    assert (magic, version, kind) == (b"FNAS", 1, MessageKind.SHUTDOWN)
    assert len(frame) == FRAME_OVERHEAD + length
    assert struct.unpack("<I", frame[-4:])[0] == zlib.crc32(frame[:-4])


def test_every_single_byte_corruption_is_rejected(rng):
    frame = encode(LocalResult(1, 2, 10, [rng.normal(size=(5, 5))], [rng.normal(size=(14, 8))] * 2))
    positions = rng.choice(len(frame), size=1000, replace=len(frame) < 1000)
    for pos in positions:
        corrupted = bytearray(frame)
        corrupted[pos] ^= int(rng.integers(1, 256))
        with pytest.raises(FrameError):
            decode(bytes(corrupted))


@pytest.mark.parametrize("offset,error", [(0, BadMagicError), (4, VersionMismatchError)])
def test_header_errors(offset, error):
    frame = bytearray(encode(Shutdown()))
    frame[offset] ^= 0xFF
    with pytest.raises(error):
        decode(bytes(frame))


def test_truncation_and_trailing_bytes():
    frame = encode(Register(1, "hash"))
    for cut in (3, HEADER.size, len(frame) - 1):
        with pytest.raises(TruncatedFrameError):
            decode(frame[:cut])
    with pytest.raises(FrameError):
        decode(frame + b"\x00")


def test_checksum_error():
    frame = bytearray(encode(Register(1, "hash")))
    frame[HEADER.size] ^= 0x01
    with pytest.raises(ChecksumError):
        decode(bytes(frame))


def test_unknown_kind():
    header = HEADER.pack(b"FNAS", 1, 42, 0)
    frame = header + struct.pack("<I", zlib.crc32(header))
    with pytest.raises(UnknownKindError):
        decode(frame)


def test_payload_length_must_match_contents():
    # a valid checksum over a payload with one stray byte
    payload = wire._encode_payload(Shutdown("x")) + b"\x00"
    header = HEADER.pack(b"FNAS", 1, int(MessageKind.SHUTDOWN), len(payload))
    frame = header + payload + struct.pack("<I", zlib.crc32(payload, zlib.crc32(header)))
    with pytest.raises(FrameError):
        decode(frame)


def test_frame_errors_are_protocol_errors():
    assert issubclass(FrameError, ProtocolError)
