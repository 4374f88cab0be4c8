"""Length-prefixed binary framing between verifier and entity.

Frame: u32 BE payload-plus-type length, u8 type, payload.  Responses travel as
u32 BE bit count followed by the packed bytes (LSB-first).
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from enum import IntEnum

from ..hamming import HammingVariant
from ..puf_model import Response

MAGIC = b"PUFA"
PROTOCOL_VERSION = 1
MAX_FRAME = 1 << 20
NO_VARIANT = 0xFF


class FrameType(IntEnum):
    HELLO = 0x01
    ENROLL_REQ = 0x02
    ENROLL_RESP = 0x03
    AUTH_CHALLENGE = 0x04
    AUTH_RESPONSE = 0x05
    AUTH_RESULT = 0x06
    ERROR = 0x7F


class ErrorCode(IntEnum):
    MALFORMED = 1
    UNKNOWN_DEVICE = 2
    STALE_NONCE = 3
    DUPLICATE_ENROLLMENT = 4
    LENGTH_MISMATCH = 5
    INTERNAL = 6


class Intent(IntEnum):
    ENROLL = 1
    AUTH = 2


class ProtocolError(Exception):
    """A peer violated the wire contract or the verifier refused the session."""

    def __init__(self, code: ErrorCode | int, message: str = ""):
        super().__init__(f"[{int(code)}] {message}")
        self.code = int(code)
        self.message = message


class TransportError(Exception):
    pass


class MalformedFrame(ProtocolError):
    def __init__(self, message: str):
        super().__init__(ErrorCode.MALFORMED, message)


# -- framing ---------------------------------------------------------------------

_LEN = struct.Struct(">I")


def encode_frame(ftype: FrameType, payload: bytes = b"") -> bytes:
    return _LEN.pack(len(payload) + 1) + bytes([ftype]) + payload


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    while count:
        try:
            chunk = sock.recv(count)
        except OSError as exc:
            raise TransportError(str(exc)) from exc
        if not chunk:
            raise TransportError("connection closed by peer")
        chunks.append(chunk)
        count -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> tuple[int, bytes]:
    (length,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    if length < 1 or length > MAX_FRAME:
        raise MalformedFrame(f"bad frame length {length}")
    body = _recv_exact(sock, length)
    return body[0], body[1:]


def send_frame(sock: socket.socket, ftype: FrameType, payload: bytes = b"") -> None:
    try:
        sock.sendall(encode_frame(ftype, payload))
    except OSError as exc:
        raise TransportError(str(exc)) from exc


# -- payload codecs --------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise MalformedFrame("payload truncated")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str) -> tuple:
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))

    def end(self) -> None:
        if self.pos != len(self.data):
            raise MalformedFrame("trailing bytes in payload")


def pack_response(r: Response) -> bytes:
    return _LEN.pack(len(r)) + r.pack()


def _read_response(rd: _Reader) -> Response:
    (n_bits,) = rd.unpack(">I")
    try:
        return Response.unpack(rd.take((n_bits + 7) // 8), n_bits)
    except ValueError as exc:
        raise MalformedFrame(str(exc)) from exc


def variant_to_tag(variant: HammingVariant | None) -> int:
    return NO_VARIANT if variant is None else variant.tag


def tag_to_variant(tag: int) -> HammingVariant | None:
    if tag == NO_VARIANT:
        return None
    try:
        return HammingVariant.from_tag(tag)
    except ValueError as exc:
        raise MalformedFrame(str(exc)) from exc


@dataclass(frozen=True)
class Hello:
    device_id: str
    intent: Intent
    overwrite: bool = False

    def encode(self) -> bytes:
        did = self.device_id.encode()
        return MAGIC + struct.pack(">BBBH", PROTOCOL_VERSION, self.intent, int(self.overwrite), len(did)) + did

    @classmethod
    def decode(cls, payload: bytes) -> "Hello":
        rd = _Reader(payload)
        if rd.take(4) != MAGIC:
            raise MalformedFrame("bad magic")
        version, intent, flags, dlen = rd.unpack(">BBBH")
        if version != PROTOCOL_VERSION:
            raise MalformedFrame(f"unsupported protocol version {version}")
        try:
            did = rd.take(dlen).decode()
            intent = Intent(intent)
        except (UnicodeDecodeError, ValueError) as exc:
            raise MalformedFrame(str(exc)) from exc
        rd.end()
        return cls(did, intent, bool(flags & 1))


@dataclass(frozen=True)
class Challenge:
    """Carried by ENROLL_REQ and AUTH_CHALLENGE."""

    offset: int
    length: int
    nonce: bytes
    variant: HammingVariant | None
    votes: int
    entity_ec: bool = True

    _FMT = ">II8sBBB"

    def encode(self) -> bytes:
        return struct.pack(
            self._FMT, self.offset, self.length, self.nonce,
            variant_to_tag(self.variant), self.votes, int(self.entity_ec),
        )

    @classmethod
    def decode(cls, payload: bytes) -> "Challenge":
        rd = _Reader(payload)
        offset, length, nonce, tag, votes, flags = rd.unpack(cls._FMT)
        rd.end()
        return cls(offset, length, nonce, tag_to_variant(tag), votes, bool(flags & 1))


@dataclass(frozen=True)
class ResponseMessage:
    """Carried by ENROLL_RESP and AUTH_RESPONSE."""

    nonce: bytes
    response: Response

    def encode(self) -> bytes:
        return self.nonce + pack_response(self.response)

    @classmethod
    def decode(cls, payload: bytes) -> "ResponseMessage":
        rd = _Reader(payload)
        nonce = rd.take(8)
        resp = _read_response(rd)
        rd.end()
        return cls(nonce, resp)


@dataclass(frozen=True)
class Result:
    accepted: bool
    hd_bits: int
    n: int
    tau_bits: int

    _FMT = ">BIII"

    @property
    def measured_ber(self) -> float:
        return self.hd_bits / self.n if self.n else 0.0

    def encode(self) -> bytes:
        return struct.pack(self._FMT, int(self.accepted), self.hd_bits, self.n, self.tau_bits)

    @classmethod
    def decode(cls, payload: bytes) -> "Result":
        rd = _Reader(payload)
        accepted, hd, n, tau_bits = rd.unpack(cls._FMT)
        rd.end()
        return cls(bool(accepted), hd, n, tau_bits)


def encode_error(code: ErrorCode | int, message: str = "") -> bytes:
    return bytes([int(code)]) + message.encode()[:512]


def decode_error(payload: bytes) -> ProtocolError:
    if not payload:
        return ProtocolError(ErrorCode.MALFORMED, "empty error frame")
    return ProtocolError(payload[0], payload[1:].decode(errors="replace"))


def expect(sock: socket.socket, wanted: FrameType) -> bytes:
    """Receive one frame, raising the peer's ProtocolError on ERROR frames."""
    ftype, payload = recv_frame(sock)
    if ftype == FrameType.ERROR:
        raise decode_error(payload)
    if ftype != wanted:
        raise MalformedFrame(f"expected frame 0x{wanted:02x}, got 0x{ftype:02x}")
    return payload
