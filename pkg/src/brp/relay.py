"""Relay-side protocol state machine.

The relay owns the cycle clock. The simulator calls ``begin_cycle`` at each
cycle start, feeds control and data frames together with the window they
were heard in, and calls ``close_negotiation`` and ``close_cycle`` when the
RLY_ACK and RLY_TX windows open.
"""

import math
import random
from collections import Counter

from brp import codec
from brp.config import ProtocolConfig
from brp.scheduler import ScheduleInput, schedule
from brp.tables import ControlTable, Kind, SlotTaken, TrafficMap
from brp.timing import PhyConfig, rly_tx_capacity


class Relay:
    def __init__(self, relay_id: int, cfg: ProtocolConfig = ProtocolConfig(), phy: PhyConfig = PhyConfig(), rng=None):
        self.relay_id = relay_id
        self.cfg = cfg
        self.rng = rng or random.Random(relay_id)
        self.ctrl = ControlTable(cfg.ttl)
        self.heard_this_cycle = set()
        self.requests = {}
        self.acked = []
        self.previous_map = TrafficMap.empty(cfg.data_slots)
        self.current_map = TrafficMap.empty(cfg.data_slots)
        self.rx_segments = {}
        self.dest_registry = {}
        # fixed at configuration time, not per cycle
        self.segments_per_tx = rly_tx_capacity(cfg, phy)
        self.errors = Counter()
        # errors not yet collected by the host, oldest first
        self.error_log = []
        self.evicted = []

    def _error(self, what):
        self.errors[what] += 1
        self.error_log.append(what)

    def begin_cycle(self, now: float = 0.0) -> codec.RlyAnnc:
        self.evicted = self.ctrl.tick(self.heard_this_cycle)
        self.heard_this_cycle = set()
        self.requests = {}
        self.acked = []
        self.rx_segments = {}
        return codec.RlyAnnc(self.relay_id, self.cfg.config_id, self.ctrl.available_slots(self.cfg.control_slots))

    def on_control_frame(self, frame, slot: int):
        owner = self.ctrl.owner_of(slot)
        if isinstance(frame, codec.NdSyn):
            node = frame.node_id
            if owner is not None and owner != node:
                self._error("ND_SYN on owned slot")
                return
            if node in self.ctrl:
                # the node lost its connection state and is joining again
                self.ctrl.drop(node)
            try:
                self.ctrl.connect(node, slot)
            except SlotTaken:
                self._error("ND_SYN on owned slot")
                return
            self.heard_this_cycle.add(node)
            if node not in self.acked:
                self.acked.append(node)
        elif isinstance(frame, codec.NdReq):
            if owner != frame.node_id:
                self._error("ND_REQ from non-owner")
                return
            self.heard_this_cycle.add(frame.node_id)
            self.requests[frame.node_id] = tuple(frame.requests[: self.cfg.max_requests])
        else:
            self._error("data frame in control slot")

    def close_negotiation(self, rng: random.Random = None) -> codec.RlyAck:
        inp = ScheduleInput(
            requests={n: r for n, r in self.requests.items() if n in self.ctrl},
            previous=self.previous_map,
            sticky_limit=self.cfg.sticky_limit,
            data_slots=self.cfg.data_slots,
            rng=rng or self.rng,
            per_flow=self.cfg.per_flow_sticky,
        )
        tmap = schedule(inp)
        self.dest_registry = {i: (s.owner, s.dest, s.kind) for i, s in enumerate(tmap.slots) if s is not None}
        self.previous_map = tmap
        self.current_map = tmap
        self.rx_segments = {}
        return codec.RlyAck(tuple(self.acked), tmap)

    def on_data_frame(self, frame, slot: int):
        if slot not in self.dest_registry:
            self._error("UnscheduledSlot")
            return
        src, dest, kind = self.dest_registry[slot]
        if isinstance(frame, codec.NdVoiceTx):
            ok = kind == Kind.VOICE
        elif isinstance(frame, codec.NdDataTx):
            ok = kind == Kind.DATA and frame.src == src and frame.dest == dest
        else:
            ok = False
        if not ok:
            self._error("frame does not match slot")
            return
        self.rx_segments[slot] = frame.payload

    def segments(self) -> list:
        """Received bodies in slot order, empty for slots not heard, trailing gaps trimmed."""
        segs = [self.rx_segments.get(i, b"") for i in self.current_map.assigned()]
        while segs and not segs[-1]:
            segs.pop()
        return segs

    def close_cycle(self) -> list:
        segs = self.segments()
        cap = self.segments_per_tx
        parts = max(1, math.ceil(len(segs) / cap))
        return [codec.RlyTx(tuple(segs[p * cap : (p + 1) * cap]), p * cap) for p in range(parts)]
