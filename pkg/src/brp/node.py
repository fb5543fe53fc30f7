"""Node-side protocol state machine.

The node is driven by its host: every method takes ``now`` in the node's
local clock, at the moment the host saw the event. The node anchors each
cycle on the RLY_ANNC it hears and derives every slot time from the layout.
"""

import enum
import random
from collections import deque
from dataclasses import dataclass

from brp import codec
from brp.config import ProtocolConfig
from brp.tables import ControlTable, Kind, StreamRequest, TrafficMap, slots_for
from brp.timing import CycleLayout, PhyConfig, frame_airtime


class Phase(enum.Enum):
    SEARCHING = "SEARCHING"
    CONNECTED = "CONNECTED"


class PayloadTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Transmit:
    """Start a transmission at local time ``at`` inside ``window``.

    ``frame`` is None for a data slot: the payload is bound when the slot
    fires, via :meth:`Node.frame_for_slot`.
    """

    at: float
    window: str
    frame: object = None
    slot: int = -1


@dataclass(frozen=True)
class Delivery:
    src: int
    dest: int
    kind: Kind
    payload: bytes


class Node:
    def __init__(
        self,
        node_id: int,
        cfg: ProtocolConfig,
        layout: CycleLayout,
        phy: PhyConfig = PhyConfig(),
        rng: random.Random = None,
        subscriptions=(),
    ):
        if not 0 < node_id <= 0xFFFF:
            raise ValueError("node_id must be a non-zero 16-bit value")
        self.node_id = node_id
        self.cfg = cfg
        self.layout = layout
        self.phy = phy
        self.rng = rng or random.Random(node_id)
        self.subscriptions = set(subscriptions)

        self.phase = Phase.SEARCHING
        self.relay = None
        self.ctrl = ControlTable(cfg.ttl)
        self.cycle_anchor = None
        self.cycle_start = None
        self.queues = {}
        self.streams = {}
        self.granted = []
        self.syn_slot = None
        self.candidate = None
        # cycle start -> traffic map of that cycle, for late RLY_TX
        self.maps = {}
        self.last_request = None

        self.errors = []
        self.events = []

    # application side

    def submit_app_data(self, payload: bytes, dest: int, kind: Kind, now: float = 0.0):
        if len(payload) > self.cfg.payload_capacity:
            raise PayloadTooLarge(f"{len(payload)} > {self.cfg.payload_capacity}")
        if not payload:
            raise ValueError("empty payload")
        self.queues.setdefault((dest, Kind(kind)), deque()).append((bytes(payload), now))

    def open_stream(self, dest: int, kind: Kind, slots: int):
        """Keep requesting ``slots`` per cycle for this flow, queued or not."""
        self.streams[(dest, Kind(kind))] = slots

    def queue_depth(self, dest=None, kind=None) -> int:
        return sum(len(q) for (d, k), q in self.queues.items() if dest in (None, d) and kind in (None, k))

    def pending_requests(self) -> tuple:
        # A data backlog is requested on top of the standing reservation so it
        # can drain; voice asks for its fixed rate and rides out a backlog.
        wants = {}
        for key in set(self.queues) | set(self.streams):
            q = len(self.queues.get(key, ()))
            r = self.streams.get(key, 0)
            wants[key] = max(r, q) if key[1] == Kind.VOICE else r + q
        reqs = []
        for (dest, kind), n in wants.items():
            n = min(n, self.cfg.data_slots)
            if kind == Kind.VOICE:
                n += n % 2
                n = min(n, self.cfg.data_slots - self.cfg.data_slots % 2)
            if n > 0:
                reqs.append(StreamRequest(dest, kind, n))
        reqs.sort(key=lambda r: (r.kind != Kind.VOICE, -r.slots, r.dest))
        return tuple(reqs[: self.cfg.max_requests])

    # protocol side

    def _window_time(self, name, now, frame_len=None):
        """Start time for a transmission in ``name`` or None if it cannot fit."""
        w = self.layout[name]
        at = self.cycle_start + w.start
        a = w.airtime if frame_len is None else frame_airtime(frame_len, self.phy)
        if now > at:
            at = now
        if at + a > self.cycle_start + w.end:
            return None
        return at

    def _set_phase(self, phase, why):
        if phase != self.phase:
            self.phase = phase
            self.events.append(f"{phase.value}:{why}")
        if phase == Phase.SEARCHING:
            self.relay = None
            self.granted = []
            self.ctrl = ControlTable(self.cfg.ttl)

    def on_rly_annc(self, frame: codec.RlyAnnc, now: float, rng: random.Random = None) -> list:
        rng = rng or self.rng
        if self.phase == Phase.CONNECTED and frame.relay_id != self.relay:
            return []
        start = now - frame_airtime(codec.encoded_len(frame), self.phy)
        self.cycle_anchor = now
        self.cycle_start = start
        self.granted = []
        self.syn_slot = None
        self.maps = {k: v for k, v in self.maps.items() if k >= start - 2 * self.layout.total}

        if self.phase == Phase.CONNECTED:
            self.ctrl.tick({self.relay})
            own = self.ctrl.slot_of(self.relay)
            if own is None or own >= len(frame.ts_tbl) or frame.ts_tbl[own]:
                # the relay advertises our slot as free: it has dropped us
                self._set_phase(Phase.SEARCHING, "evicted")
            else:
                reqs = self.pending_requests()
                self.last_request = reqs
                if not reqs:
                    return []
                req = codec.NdReq(self.node_id, reqs)
                at = self._window_time(f"CTRL_{own}", now, codec.encoded_len(req))
                if at is None:
                    self.errors.append("late ND_REQ")
                    return []
                return [Transmit(at, f"CTRL_{own}", req)]

        free = [i for i, b in enumerate(frame.ts_tbl) if b and i < self.cfg.control_slots]
        if not free:
            self.events.append("NoFreeSlot")
            return []
        slot = free[rng.randrange(len(free))]
        syn = codec.NdSyn(self.node_id)
        at = self._window_time(f"CTRL_{slot}", now, codec.encoded_len(syn))
        if at is None:
            self.errors.append("late ND_SYN")
            return []
        self.syn_slot = slot
        self.candidate = frame.relay_id
        return [Transmit(at, f"CTRL_{slot}", syn)]

    def on_rly_ack(self, frame: codec.RlyAck, now: float) -> list:
        if self.cycle_start is None:
            return []
        start = now - frame_airtime(codec.encoded_len(frame), self.phy)
        if start < self.cycle_start:
            self.errors.append("stale RLY_ACK")
            return []
        if self.phase == Phase.SEARCHING:
            if self.syn_slot is None or self.node_id not in frame.acked_nodes:
                # not acknowledged: back off, retry on the next announce
                self.syn_slot = None
                return []
            self.relay = self.candidate
            self.ctrl.connect(self.relay, self.syn_slot)
            self._set_phase(Phase.CONNECTED, f"slot {self.syn_slot}")
            self.syn_slot = None

        self.maps[self.cycle_start] = frame.trfc_map
        self.granted = slots_for(frame.trfc_map, self.node_id)
        actions = []
        for slot in self.granted:
            at = self._window_time(f"DATA_{slot}", now)
            if at is None:
                self.errors.append(f"missed DATA_{slot}")
                continue
            actions.append(Transmit(at, f"DATA_{slot}", None, slot))
        return actions

    def frame_for_slot(self, slot: int, cycle=None):
        """Bind the oldest queued payload of the slot's flow; None leaves it idle.

        ``cycle`` is the cycle start the slot was granted in, defaulting to
        the current one.
        """
        tmap = self.maps.get(self.cycle_start if cycle is None else cycle)
        if tmap is None or slot >= len(tmap.slots):
            return None
        s = tmap.slots[slot]
        if s is None or s.owner != self.node_id:
            return None
        q = self.queues.get((s.dest, s.kind))
        if not q:
            return None
        payload, _ = q.popleft()
        if s.kind == Kind.VOICE:
            return codec.NdVoiceTx(payload)
        return codec.NdDataTx(self.node_id, s.dest, payload)

    def _map_for(self, start):
        best = None
        for k in self.maps:
            if k <= start and (best is None or k > best):
                best = k
        return None if best is None else self.maps[best]

    def on_rly_tx(self, frame: codec.RlyTx, now: float, tmap: TrafficMap = None) -> list:
        if tmap is None:
            start = now - frame_airtime(codec.encoded_len(frame), self.phy)
            tmap = self._map_for(start)
        if tmap is None:
            return []
        assigned = tmap.assigned()
        if frame.offset + len(frame.segments) > len(assigned):
            self.errors.append("SegmentCountMismatch")
            return []
        out = []
        for i, seg in enumerate(frame.segments):
            if not seg:
                continue
            s = tmap.slots[assigned[frame.offset + i]]
            if s.dest == self.node_id or s.dest in self.subscriptions:
                out.append(Delivery(s.owner, s.dest, s.kind, seg))
        return out

    def on_cycle_timeout(self, now: float):
        if self.phase != Phase.CONNECTED:
            return
        if self.ctrl.tick(set()):
            self._set_phase(Phase.SEARCHING, "ttl expired")

    def timeout_after(self) -> float:
        return self.cfg.timeout_factor * self.layout.total
