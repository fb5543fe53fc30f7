"""Application load generators and latency accounting.

Every payload starts with a 32-bit sequence number, unique within a run,
which is how deliveries are matched back to submissions.
"""

import struct
from dataclasses import dataclass

from brp.tables import Kind

SEQ_LEN = 4


@dataclass(frozen=True)
class VoiceStream:
    """Constant-rate voice towards a group: ``pairs`` slot pairs per cycle."""

    group: int
    pairs: int = 1
    payload: int = 40


@dataclass(frozen=True)
class DataFlow:
    """``per_cycle`` payloads per cycle. ``reserve`` slots are requested every
    cycle even with an empty queue, so fresh data can use a standing grant."""

    dest: int = 0
    per_cycle: int = 1
    payload: int = 40
    reserve: int = 0


@dataclass(frozen=True)
class TrafficSpec:
    voice: tuple = ()
    data: tuple = ()
    # data flows with dest 0 go back to the sender; voice groups are
    # subscribed by the sender
    bounce_back: bool = False

    def validate(self, capacity: int):
        for v in self.voice:
            if v.pairs < 1:
                raise ValueError("a voice stream needs at least one pair")
            if not SEQ_LEN <= v.payload <= capacity:
                raise ValueError(f"voice payload must be {SEQ_LEN}..{capacity} bytes")
        for d in self.data:
            if d.per_cycle < 0 or d.reserve < 0:
                raise ValueError("per_cycle and reserve must be non-negative")
            if not SEQ_LEN <= d.payload <= capacity:
                raise ValueError(f"data payload must be {SEQ_LEN}..{capacity} bytes")
            if d.dest == 0 and not self.bounce_back:
                raise ValueError("a data flow needs a dest unless bounce_back is set")


@dataclass(frozen=True)
class Submission:
    time: float
    node: int
    dest: int
    kind: Kind
    payload: bytes


def make_payload(seq: int, size: int) -> bytes:
    fill = bytes((seq + i) & 0xFF for i in range(size - SEQ_LEN))
    return struct.pack(">I", seq & 0xFFFFFFFF) + fill


def seq_of(payload: bytes) -> int:
    return struct.unpack(">I", payload[:SEQ_LEN])[0]


def flows(spec: TrafficSpec, node: int):
    """``(dest, kind, payloads per cycle, size, reserved slots)`` per flow."""
    out = []
    for v in spec.voice:
        out.append((v.group, Kind.VOICE, 2 * v.pairs, v.payload, 2 * v.pairs))
    for d in spec.data:
        dest = d.dest or node
        out.append((dest, Kind.DATA, d.per_cycle, d.payload, d.reserve))
    return out


def generate(spec: TrafficSpec, node: int, cycle_starts, cycle_len: float, rng, seq_start: int = 0) -> list:
    """Submissions at uniform random times within each cycle, sorted by time."""
    subs = []
    seq = seq_start
    for start in cycle_starts:
        for dest, kind, count, size, _ in flows(spec, node):
            for _ in range(count):
                t = start + rng.random() * cycle_len
                subs.append(Submission(t, node, dest, kind, make_payload(seq, size)))
                seq += 1
    subs.sort(key=lambda s: (s.time, seq_of(s.payload)))
    return subs


@dataclass
class PayloadRecord:
    seq: int
    node: int
    dest: int
    kind: str
    size: int
    submitted: float
    delivered: float = None

    @property
    def latency(self):
        return None if self.delivered is None else self.delivered - self.submitted


def account(records) -> dict:
    """Match APP_DELIVER to APP_SUBMIT by sequence number.

    ``records`` are trace records; a payload delivered to several receivers
    counts its first delivery. Returns ``{seq: PayloadRecord}``.
    """
    out = {}
    for r in records:
        if r["event"] == "APP_SUBMIT":
            out[r["seq"]] = PayloadRecord(r["seq"], r["entity"], r["dest"], r["kind"], r["len"], r["t"])
        elif r["event"] == "APP_DELIVER":
            p = out.get(r["seq"])
            if p is not None and p.delivered is None:
                p.delivered = r["t"]
    return out


def latencies(acct: dict) -> list:
    return [p.latency for p in sorted(acct.values(), key=lambda p: p.seq) if p.delivered is not None]


def delivered_fraction(acct: dict) -> float:
    if not acct:
        return 1.0
    return sum(p.delivered is not None for p in acct.values()) / len(acct)
