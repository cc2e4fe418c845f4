"""Binary framing for the recommendation protocol.

Frame layout:
    [1 byte  - magic 0x50]
    [1 byte  - version 0x01]
    [1 byte  - message type]
    [4 bytes - payload length (big-endian)]
    [N bytes - payload]

Payload fields: counts and user ids are 4-byte big-endian, big integers are a
4-byte length plus big-endian magnitude, tokens are 16 raw bytes.
"""

from __future__ import annotations

import enum
import struct
from typing import Callable, Sequence

from ppsr.errors import DataError, FramingError
from ppsr.paillier import PublicKey, decode_bigint, encode_bigint

MAGIC = 0x50
VERSION = 0x01
TOKEN_SIZE = 16

HEADER = struct.Struct("!BBBI")
# set by the 4-byte length field
MAX_PAYLOAD_SIZE = 2**32 - 1


class MessageType(enum.IntEnum):
    SCORES = 0x01
    MASKED_DEGREES = 0x02
    TOKEN_ORDER = 0x03


def frame(msg_type: MessageType, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD_SIZE:
        raise FramingError(f"payload too large: {len(payload)}")
    return HEADER.pack(MAGIC, VERSION, int(msg_type), len(payload)) + payload


def parse_header(header: bytes) -> tuple[MessageType, int]:
    if len(header) < HEADER.size:
        raise FramingError("header too short")
    magic, version, msg_type, length = HEADER.unpack(header[: HEADER.size])
    if magic != MAGIC:
        raise FramingError(f"bad magic byte 0x{magic:02x}")
    if version != VERSION:
        raise FramingError(f"unsupported version {version}")
    try:
        kind = MessageType(msg_type)
    except ValueError:
        raise FramingError(f"unknown message type 0x{msg_type:02x}") from None
    return kind, length


def parse_frame(data: bytes) -> tuple[MessageType, bytes]:
    """Split one complete frame; trailing or missing bytes are errors."""
    kind, length = parse_header(data)
    payload = data[HEADER.size :]
    if len(payload) != length:
        raise FramingError(f"declared {length} payload bytes, got {len(payload)}")
    return kind, payload


def read_frame(recv_exact: Callable[[int], bytes]) -> bytes:
    """Read one whole frame from a stream given an exact-read function."""
    header = recv_exact(HEADER.size)
    _, length = parse_header(header)
    return header + (recv_exact(length) if length else b"")


class _Reader:
    def __init__(self, payload: bytes):
        self.buf = payload
        self.pos = 0

    def u32(self) -> int:
        if len(self.buf) < self.pos + 4:
            raise FramingError("truncated 4-byte field")
        value = int.from_bytes(self.buf[self.pos : self.pos + 4], "big")
        self.pos += 4
        return value

    def bigint(self) -> int:
        try:
            value, self.pos = decode_bigint(self.buf, self.pos)
        except DataError as e:
            raise FramingError(str(e)) from None
        return value

    def token(self) -> bytes:
        if len(self.buf) < self.pos + TOKEN_SIZE:
            raise FramingError("truncated token")
        tok = self.buf[self.pos : self.pos + TOKEN_SIZE]
        self.pos += TOKEN_SIZE
        return tok

    def public_key(self) -> PublicKey:
        try:
            key, self.pos = PublicKey.from_bytes(self.buf, self.pos)
        except DataError as e:
            raise FramingError(str(e)) from None
        return key

    def count(self, min_entry_size: int) -> int:
        n = self.u32()
        if n * min_entry_size > len(self.buf) - self.pos:
            raise FramingError(f"count {n} exceeds the payload")
        return n

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise FramingError(f"{len(self.buf) - self.pos} trailing payload bytes")


def _u32(value: int) -> bytes:
    if not 0 <= value < 2**32:
        raise FramingError(f"{value} does not fit in 4 bytes")
    return value.to_bytes(4, "big")


def _check_token(tok: bytes) -> bytes:
    if len(tok) != TOKEN_SIZE:
        raise FramingError(f"token must be {TOKEN_SIZE} bytes")
    return tok


def pack_scores(public: PublicKey, target: int, entries: Sequence[tuple[int, int]]) -> bytes:
    """Message 1: public key, target user id, (user id, ciphertext) pairs."""
    parts = [public.to_bytes(), _u32(target), _u32(len(entries))]
    for user_id, value in entries:
        parts.append(_u32(user_id))
        parts.append(encode_bigint(value))
    return b"".join(parts)


def unpack_scores(payload: bytes) -> tuple[PublicKey, int, list[tuple[int, int]]]:
    r = _Reader(payload)
    public = r.public_key()
    target = r.u32()
    entries = [(r.u32(), r.bigint()) for _ in range(r.count(8))]
    r.finish()
    return public, target, entries


def pack_degrees(entries: Sequence[tuple[bytes, int]]) -> bytes:
    """Message 2: (token, masked-degree ciphertext) pairs."""
    parts = [_u32(len(entries))]
    for tok, value in entries:
        parts.append(_check_token(tok))
        parts.append(encode_bigint(value))
    return b"".join(parts)


def unpack_degrees(payload: bytes) -> list[tuple[bytes, int]]:
    r = _Reader(payload)
    entries = [(r.token(), r.bigint()) for _ in range(r.count(TOKEN_SIZE + 4))]
    r.finish()
    return entries


def pack_tokens(tokens: Sequence[bytes]) -> bytes:
    """Message 3: ordered token list."""
    return _u32(len(tokens)) + b"".join(_check_token(t) for t in tokens)


def unpack_tokens(payload: bytes) -> list[bytes]:
    r = _Reader(payload)
    tokens = [r.token() for _ in range(r.count(TOKEN_SIZE))]
    r.finish()
    return tokens
