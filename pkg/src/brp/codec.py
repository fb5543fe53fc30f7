"""Byte-exact wire format for the seven BRP frame kinds.

Layout (all integers big-endian, every frame ends in CRC16-CCITT, poly
0x1021, init 0xFFFF, computed over all preceding bytes)::

    RLY_ANNC     01 | relay_id:2 | config_id:1 | n:1 | bitmap:ceil(n/8) | crc:2
    ND_SYN       02 | node_id:2 | crc:2
    RLY_ACK      03 | a:1 | acked:2*a | m:1 | (owner:2, stream_kind:1)*m
                    | d:1 | dest:2*d | crc:2
    ND_REQ       04 | node_id:2 | r:1 | (dest:2, req_kind:1)*r | crc:2
    ND_DATA_TX   05 | src:2 | dest:2 | len:1 | payload | crc:2
    ND_VOICE_TX  06 | len:1 | payload | crc:2
    RLY_TX       07 | offset:1 | s:1 | (len:1, body)*s | crc:2

Bitmap bits are MSB-first, bit i set = control slot i free; pad bits are 0.
``stream_kind`` is ``kind << 6 | dest_index`` (kind 0 = idle slot, with
owner 0), indexing the RLY_ACK destination table, which lists destinations
in order of first use. ``req_kind`` is ``voice_flag << 7 | slots``. RLY_TX
segments follow the assigned slots of the cycle's map starting at
``offset``; a zero-length segment is a placeholder for a slot the relay did
not hear.
"""

import binascii
import struct
from dataclasses import dataclass

from brp.tables import Kind, Slot, StreamRequest, TrafficMap

MAX_FRAME = 255
CRC_LEN = 2

RLY_ANNC, ND_SYN, RLY_ACK, ND_REQ, ND_DATA_TX, ND_VOICE_TX, RLY_TX = range(1, 8)


class FrameError(ValueError):
    pass


class OversizeFrame(FrameError):
    pass


class BadChecksum(FrameError):
    pass


class UnknownKind(FrameError):
    pass


class Truncated(FrameError):
    pass


class MalformedFrame(FrameError):
    """Structurally decodable bytes that no valid frame encodes to."""


def crc16(data: bytes) -> int:
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class RlyAnnc:
    relay_id: int
    config_id: int
    ts_tbl: tuple

    kind = RLY_ANNC


@dataclass(frozen=True)
class NdSyn:
    node_id: int

    kind = ND_SYN


@dataclass(frozen=True)
class RlyAck:
    acked_nodes: tuple
    trfc_map: TrafficMap

    kind = RLY_ACK


@dataclass(frozen=True)
class NdReq:
    node_id: int
    requests: tuple

    kind = ND_REQ


@dataclass(frozen=True)
class NdDataTx:
    src: int
    dest: int
    payload: bytes

    kind = ND_DATA_TX


@dataclass(frozen=True)
class NdVoiceTx:
    payload: bytes

    kind = ND_VOICE_TX


@dataclass(frozen=True)
class RlyTx:
    segments: tuple
    offset: int = 0

    kind = RLY_TX


KIND_NAMES = {
    RLY_ANNC: "RLY_ANNC",
    ND_SYN: "ND_SYN",
    RLY_ACK: "RLY_ACK",
    ND_REQ: "ND_REQ",
    ND_DATA_TX: "ND_DATA_TX",
    ND_VOICE_TX: "ND_VOICE_TX",
    RLY_TX: "RLY_TX",
}


def _u16(v, what):
    if not 0 <= v <= 0xFFFF:
        raise FrameError(f"{what} out of 16-bit range: {v}")
    return struct.pack(">H", v)


def _nonzero(v, what):
    if v == 0:
        raise FrameError(f"{what} must be non-zero")
    return _u16(v, what)


def _count(n, what):
    if n > 255:
        raise OversizeFrame(f"too many {what}: {n}")
    return bytes([n])


def _payload(p, what):
    if not 1 <= len(p) <= 255:
        raise FrameError(f"{what} length must be 1..255")
    return bytes([len(p)]) + bytes(p)


def _bitmap(bits):
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i // 8] |= 0x80 >> (i % 8)
    return bytes(out)


def _encode_map(tmap: TrafficMap):
    dests = []
    body = bytearray(_count(len(tmap.slots), "map slots"))
    for s in tmap.slots:
        if s is None:
            body += b"\x00\x00\x00"
            continue
        if s.dest not in dests:
            dests.append(s.dest)
        idx = dests.index(s.dest)
        if idx > 0x3F:
            raise FrameError("destination table overflow")
        body += _nonzero(s.owner, "slot owner") + bytes([int(s.kind) << 6 | idx])
    body += _count(len(dests), "destinations")
    for d in dests:
        body += _nonzero(d, "slot destination")
    return bytes(body)


def _encode_body(frame) -> bytes:
    if isinstance(frame, RlyAnnc):
        if not 0 <= frame.config_id <= 255:
            raise FrameError("config_id is 8-bit")
        return (
            _u16(frame.relay_id, "relay_id")
            + bytes([frame.config_id])
            + _count(len(frame.ts_tbl), "control slots")
            + _bitmap(frame.ts_tbl)
        )
    if isinstance(frame, NdSyn):
        return _nonzero(frame.node_id, "node_id")
    if isinstance(frame, RlyAck):
        if len(set(frame.acked_nodes)) != len(frame.acked_nodes):
            raise FrameError("duplicate acked node")
        body = _count(len(frame.acked_nodes), "acked nodes")
        for n in frame.acked_nodes:
            body += _nonzero(n, "acked node")
        return body + _encode_map(frame.trfc_map)
    if isinstance(frame, NdReq):
        body = _nonzero(frame.node_id, "node_id") + _count(len(frame.requests), "requests")
        for r in frame.requests:
            flag = 0x80 if r.kind == Kind.VOICE else 0
            body += _nonzero(r.dest, "request dest") + bytes([flag | r.slots])
        return body
    if isinstance(frame, NdDataTx):
        return (
            _nonzero(frame.src, "src")
            + _nonzero(frame.dest, "dest")
            + _payload(frame.payload, "payload")
        )
    if isinstance(frame, NdVoiceTx):
        return _payload(frame.payload, "payload")
    if isinstance(frame, RlyTx):
        if not 0 <= frame.offset <= 255:
            raise FrameError("offset is 8-bit")
        body = bytes([frame.offset]) + _count(len(frame.segments), "segments")
        for seg in frame.segments:
            if len(seg) > 255:
                raise FrameError("segment too long")
            body += bytes([len(seg)]) + bytes(seg)
        return body
    raise FrameError(f"not a frame: {frame!r}")


def encode_frame(frame) -> bytes:
    head = bytes([frame.kind]) + _encode_body(frame)
    if len(head) + CRC_LEN > MAX_FRAME:
        raise OversizeFrame(f"{KIND_NAMES[frame.kind]} is {len(head) + CRC_LEN} bytes")
    return head + struct.pack(">H", crc16(head))


def encoded_len(frame) -> int:
    return len(encode_frame(frame))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise Truncated(f"need {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack(">H", self.take(2))[0]

    def done(self):
        if self.pos != len(self.data):
            raise MalformedFrame("trailing bytes")


def _decode_map(r: _Reader):
    raw = []
    for _ in range(r.u8()):
        owner = r.u16()
        sk = r.u8()
        raw.append((owner, sk >> 6, sk & 0x3F))
    dests = [r.u16() for _ in range(r.u8())]
    slots = []
    for owner, kind, idx in raw:
        if owner == 0 and kind == 0 and idx == 0:
            slots.append(None)
            continue
        if kind not in (Kind.DATA, Kind.VOICE) or idx >= len(dests):
            raise MalformedFrame("bad map entry")
        slots.append(Slot(owner, Kind(kind), dests[idx]))
    return TrafficMap(tuple(slots))


def _decode_body(kind, r: _Reader):
    if kind == RLY_ANNC:
        relay_id = r.u16()
        config_id = r.u8()
        n = r.u8()
        raw = r.take((n + 7) // 8)
        bits = tuple(bool(raw[i // 8] & (0x80 >> (i % 8))) for i in range(n))
        return RlyAnnc(relay_id, config_id, bits)
    if kind == ND_SYN:
        return NdSyn(r.u16())
    if kind == RLY_ACK:
        acked = tuple(r.u16() for _ in range(r.u8()))
        return RlyAck(acked, _decode_map(r))
    if kind == ND_REQ:
        node = r.u16()
        reqs = []
        for _ in range(r.u8()):
            dest = r.u16()
            rk = r.u8()
            try:
                reqs.append(StreamRequest(dest, Kind.VOICE if rk & 0x80 else Kind.DATA, rk & 0x7F))
            except ValueError as e:
                raise MalformedFrame(str(e)) from None
        return NdReq(node, tuple(reqs))
    if kind == ND_DATA_TX:
        src = r.u16()
        dest = r.u16()
        return NdDataTx(src, dest, bytes(r.take(r.u8())))
    if kind == ND_VOICE_TX:
        return NdVoiceTx(bytes(r.take(r.u8())))
    if kind == RLY_TX:
        offset = r.u8()
        segs = tuple(bytes(r.take(r.u8())) for _ in range(r.u8()))
        return RlyTx(segs, offset)
    raise UnknownKind(kind)


def decode_frame(data: bytes):
    """Parse one frame. Raises a :class:`FrameError` subclass on any bad input."""
    data = bytes(data)
    if not data:
        raise Truncated("empty frame")
    if data[0] not in KIND_NAMES:
        raise UnknownKind(data[0])
    if len(data) < 1 + CRC_LEN:
        raise Truncated("shorter than kind + crc")
    if len(data) > MAX_FRAME:
        raise OversizeFrame(f"{len(data)} bytes")
    head, (crc,) = data[:-CRC_LEN], struct.unpack(">H", data[-CRC_LEN:])
    if crc16(head) != crc:
        raise BadChecksum(f"crc {crc:#06x} != {crc16(head):#06x}")
    r = _Reader(head)
    kind = r.u8()
    frame = _decode_body(kind, r)
    r.done()
    # Rejects non-canonical inputs (pad bits, zero addresses, empty payloads...).
    try:
        canonical = encode_frame(frame)
    except FrameError as e:
        raise MalformedFrame(str(e)) from None
    if canonical != data:
        raise MalformedFrame("non-canonical encoding")
    return frame
