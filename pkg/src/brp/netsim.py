"""Discrete-event simulation of one relay and its nodes on a shared channel.

Every transmission occupies the channel for its airtime. Overlapping
transmissions destroy each other. A frame that survives is handed to each
receiver's state machine after a host processing delay, which stands in for
the radio-to-host hop of a phone-attached radio.

Trace records are plain dicts, exported one JSON object per line:

    t       simulation time in seconds
    entity  "relay" or the node ID
    event   TX_START | TX_END | RX | COLLISION | DROP | APP_SUBMIT |
            APP_DELIVER | STATE_CHANGE | PROTO_ERROR

TX/RX/COLLISION/DROP records carry ``tx`` (transmission number), ``frame``
(kind name), ``len`` and ``window`` (the relay's window at TX start).
APP records carry ``seq``, ``dest``, ``kind``, ``len`` and the payload in hex.
"""

import heapq
import json
import math
import random
from dataclasses import dataclass, field, replace

from brp import codec
from brp.config import ProtocolConfig
from brp.node import Node
from brp.relay import Relay
from brp.tables import Kind
from brp.timing import InfeasibleLayout, PhyConfig, build_layout, frame_airtime
from brp.traffic import TrafficSpec, flows, generate, seq_of

MAX_DRIFT_PPM = 1000.0
# frames are filed by estimated start time; absorbs float rounding at window edges
TIME_EPS = 1e-6
RELAY = "relay"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DelayModel:
    """Host processing delay, sampled afresh for every frame delivery.

    ``SHIFTED_EXP`` takes ``a`` = minimum and ``b`` = mean.
    """

    kind: str = "NONE"
    a: float = 0.0
    b: float = 0.0

    @classmethod
    def none(cls):
        return cls("NONE")

    @classmethod
    def uniform(cls, lo, hi):
        return cls("UNIFORM", lo, hi)

    @classmethod
    def shifted_exp(cls, minimum, mean):
        return cls("SHIFTED_EXP", minimum, mean)

    def validate(self):
        if self.kind == "NONE":
            return
        if self.kind not in ("UNIFORM", "SHIFTED_EXP"):
            raise ConfigError(f"unknown delay kind {self.kind!r}")
        if self.a < 0 or self.b < self.a:
            raise ConfigError("delay parameters must satisfy 0 <= a <= b")

    @property
    def mean(self) -> float:
        if self.kind == "NONE":
            return 0.0
        if self.kind == "UNIFORM":
            return (self.a + self.b) / 2
        return self.b

    def sample(self, rng: random.Random) -> float:
        if self.kind == "NONE":
            return 0.0
        if self.kind == "UNIFORM":
            return rng.uniform(self.a, self.b)
        if self.b == self.a:
            return self.a
        return self.a + rng.expovariate(1.0 / (self.b - self.a))


# Calibration knob: with the default layout the breakdown search lands near
# a scaling factor of 4.75 with this distribution.
DEFAULT_DELAY = DelayModel.shifted_exp(0.015, 0.019)


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    traffic: TrafficSpec = TrafficSpec()
    subscriptions: tuple = ()
    drift_ppm: float = 0.0


@dataclass(frozen=True)
class Scenario:
    nodes: tuple
    cfg: ProtocolConfig = ProtocolConfig()
    phy: PhyConfig = PhyConfig()
    scaling: float = 1.0
    delay: DelayModel = DelayModel()
    cycles: int = 100
    seed: int = 0
    relay_id: int = 1
    relay_drift_ppm: float = 0.0
    # {(src, dst): loss probability}; "*" matches any entity
    loss: dict = field(default_factory=dict)

    def link_loss(self, src, dst) -> float:
        for key in ((src, dst), (src, "*"), ("*", dst), ("*", "*")):
            if key in self.loss:
                return self.loss[key]
        return 0.0

    def validate(self):
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if not self.nodes:
            raise ConfigError("a scenario needs at least one node")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate node id")
        if self.relay_id in ids:
            raise ConfigError("exactly one relay: relay_id clashes with a node")
        for i in ids + [self.relay_id]:
            if not 0 < i <= 0xFFFF:
                raise ConfigError(f"entity id {i} is not a non-zero 16-bit value")
        for key, p in self.loss.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"loss probability {p} for {key} out of [0, 1]")
        for ppm in [n.drift_ppm for n in self.nodes] + [self.relay_drift_ppm]:
            if abs(ppm) > MAX_DRIFT_PPM:
                raise ConfigError(f"clock drift {ppm} ppm exceeds {MAX_DRIFT_PPM}")
        if self.scaling < 1:
            raise ConfigError("scaling must be >= 1")
        self.delay.validate()
        try:
            build_layout(self.cfg, self.phy, self.scaling)
        except InfeasibleLayout as e:
            raise ConfigError(str(e)) from None
        for n in self.nodes:
            try:
                n.traffic.validate(self.cfg.payload_capacity)
            except ValueError as e:
                raise ConfigError(f"node {n.node_id}: {e}") from None


def inject_clock_skew(scenario: Scenario, drifts: dict) -> Scenario:
    """Copy of ``scenario`` with per-entity drift in ppm; key ``"relay"`` for the relay."""
    for ent, ppm in drifts.items():
        if abs(ppm) > MAX_DRIFT_PPM:
            raise ConfigError(f"clock drift {ppm} ppm exceeds {MAX_DRIFT_PPM}")
    nodes = tuple(replace(n, drift_ppm=drifts.get(n.node_id, n.drift_ppm)) for n in scenario.nodes)
    return replace(scenario, nodes=nodes, relay_drift_ppm=drifts.get(RELAY, scenario.relay_drift_ppm))


class Trace:
    def __init__(self, records=None, layout=None):
        self.records = records if records is not None else []
        self.layout = layout

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def of(self, *events, entity=None):
        return [r for r in self.records if r["event"] in events and (entity is None or r["entity"] == entity)]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_jsonl())

    @classmethod
    def read(cls, path):
        with open(path) as f:
            return cls([json.loads(line) for line in f if line.strip()])

    def violations(self) -> list:
        """PROTO_ERROR records plus collisions that are not join attempts in control slots."""
        out = []
        for r in self.records:
            if r["event"] == "PROTO_ERROR":
                out.append(r)
            elif r["event"] == "COLLISION" and not join_collision(r):
                out.append(r)
        return out


def join_collision(r) -> bool:
    return r["window"].startswith("CTRL_") and "ND_SYN" in [r["frame"]] + r["with"]


@dataclass
class _Tx:
    num: int
    sender: object
    data: bytes
    start: float
    end: float
    window: str
    collided: list = field(default_factory=list)

    @property
    def name(self):
        return codec.KIND_NAMES[self.data[0]]


class _Sim:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.layout = build_layout(sc.cfg, sc.phy, sc.scaling)
        self.T = self.layout.total
        self.trace = []
        self.queue = []
        self.seq = 0
        self.now = 0.0
        self.txnum = 0
        self.active = []

        def stream(name):
            return random.Random(f"{sc.seed}:{name}")

        self.loss_rng = stream("loss")
        self.delay_rng = {RELAY: stream("delay:relay")}
        self.ppm = {RELAY: sc.relay_drift_ppm}
        self.relay = Relay(sc.relay_id, sc.cfg, sc.phy, rng=stream("relay"))
        self.nodes = {}
        self.timer_gen = {}
        for spec in sc.nodes:
            subs = set(spec.subscriptions)
            if spec.traffic.bounce_back:
                subs |= {v.group for v in spec.traffic.voice}
            node = Node(spec.node_id, sc.cfg, self.layout, sc.phy, rng=stream(f"node:{spec.node_id}"), subscriptions=subs)
            for dest, kind, _, _, reserve in flows(spec.traffic, spec.node_id):
                if reserve:
                    node.open_stream(dest, kind, reserve)
            self.nodes[spec.node_id] = node
            self.delay_rng[spec.node_id] = stream(f"delay:{spec.node_id}")
            self.ppm[spec.node_id] = spec.drift_ppm
            self.timer_gen[spec.node_id] = 0

        self.relay_cycle = -1
        self.ack_built = False
        self.tx_built = False
        self.end = self.true_time(RELAY, sc.cycles * self.T)

    # clocks

    def local(self, ent, t):
        return t * (1 + self.ppm[ent] * 1e-6)

    def true_time(self, ent, local):
        return local / (1 + self.ppm[ent] * 1e-6)

    # plumbing

    def at(self, t, fn, *args):
        self.seq += 1
        heapq.heappush(self.queue, (t, self.seq, fn, args))

    def log(self, entity, event, **kw):
        rec = {"t": self.now, "entity": entity, "event": event}
        rec.update(kw)
        self.trace.append(rec)

    def relay_window(self, t):
        local = self.local(RELAY, t)
        off = local + TIME_EPS - math.floor((local + TIME_EPS) / self.T) * self.T
        w = self.layout.locate(off)
        return w.name if w else "NONE"

    def run(self):
        sc = self.sc
        for k in range(sc.cycles):
            base = k * self.T
            self.at(self.true_time(RELAY, base), self.relay_annc, k)
            self.at(self.true_time(RELAY, base + self.layout["RLY_ACK"].start), self.relay_ack, k)
            for p in range(self.layout.rly_tx_parts):
                self.at(self.true_time(RELAY, base + self.layout[f"RLY_TX_{p}"].start), self.relay_tx, k, p)
        starts = [self.true_time(RELAY, k * self.T) for k in range(sc.cycles)]
        seq = 0
        for spec in sc.nodes:
            subs = generate(spec.traffic, spec.node_id, starts, self.T, random.Random(f"{sc.seed}:traffic:{spec.node_id}"), seq)
            seq += len(subs)
            for s in subs:
                self.at(s.time, self.submit, s)

        # a final cycle's worth of slack lets the last RLY_TX be delivered
        stop = self.end + self.T
        while self.queue:
            t, _, fn, args = heapq.heappop(self.queue)
            if t > stop:
                break
            self.now = t
            fn(*args)
        return Trace(self.trace, self.layout)

    # channel

    def transmit(self, sender, frame, window):
        data = codec.encode_frame(frame)
        self.txnum += 1
        tx = _Tx(self.txnum, sender, data, self.now, self.now + frame_airtime(len(data), self.sc.phy), self.relay_window(self.now))
        self.log(sender, "TX_START", tx=tx.num, frame=tx.name, len=len(data), window=tx.window, slot=window)
        self.active = [a for a in self.active if a.end > self.now]
        for other in self.active:
            other.collided.append(tx.name)
            tx.collided.append(other.name)
        self.active.append(tx)
        self.at(tx.end, self.tx_end, tx)

    def tx_end(self, tx):
        self.log(tx.sender, "TX_END", tx=tx.num, frame=tx.name, len=len(tx.data), window=tx.window)
        if tx.collided:
            self.log(tx.sender, "COLLISION", tx=tx.num, frame=tx.name, len=len(tx.data), window=tx.window, **{"with": tx.collided})
            return
        receivers = list(self.nodes) if tx.sender == RELAY else [RELAY]
        for r in receivers:
            p = self.sc.link_loss(tx.sender, r)
            if p and self.loss_rng.random() < p:
                self.log(r, "DROP", tx=tx.num, frame=tx.name, len=len(tx.data), window=tx.window)
                continue
            d = self.sc.delay.sample(self.delay_rng[r])
            self.at(self.now + d, self.deliver, r, tx)

    def deliver(self, ent, tx):
        self.log(ent, "RX", tx=tx.num, frame=tx.name, len=len(tx.data), window=tx.window)
        frame = codec.decode_frame(tx.data)
        if ent == RELAY:
            self.relay_rx(frame)
        else:
            self.node_rx(self.nodes[ent], frame)

    # relay side

    def relay_errors(self):
        for e in self.relay.error_log:
            self.log(RELAY, "PROTO_ERROR", error=e)
        self.relay.error_log.clear()

    def relay_annc(self, k):
        self.relay_cycle = k
        self.ack_built = False
        self.tx_built = False
        before = set(self.relay.ctrl.entries)
        annc = self.relay.begin_cycle(self.local(RELAY, self.now))
        for node in sorted(before - set(self.relay.ctrl.entries)):
            self.log(RELAY, "STATE_CHANGE", node=node, state="EVICTED")
        self.transmit(RELAY, annc, "RLY_ANNC")

    def relay_ack(self, k):
        self.ack_built = True
        ack = self.relay.close_negotiation()
        for node in ack.acked_nodes:
            self.log(RELAY, "STATE_CHANGE", node=node, state="CONNECTED", slot=self.relay.ctrl.slot_of(node))
        self.transmit(RELAY, ack, "RLY_ACK")

    def relay_tx(self, k, p):
        if p == 0:
            self.tx_built = True
            self.rly_parts = self.relay.close_cycle()
        if p < len(self.rly_parts):
            self.transmit(RELAY, self.rly_parts[p], f"RLY_TX_{p}")

    def relay_rx(self, frame):
        local = self.local(RELAY, self.now)
        start = local - frame_airtime(codec.encoded_len(frame), self.sc.phy)
        off = start - self.relay_cycle * self.T + TIME_EPS
        w = self.layout.locate(off)
        name = w.name if w else "NONE"
        if isinstance(frame, (codec.NdSyn, codec.NdReq)):
            if off < 0 or self.ack_built:
                self.relay._error(f"late {codec.KIND_NAMES[frame.kind]}")
            elif not name.startswith("CTRL_"):
                self.relay._error(f"{codec.KIND_NAMES[frame.kind]} outside control windows")
            else:
                self.relay.on_control_frame(frame, int(name[5:]))
        elif isinstance(frame, (codec.NdDataTx, codec.NdVoiceTx)):
            if off < 0 or self.tx_built:
                self.relay._error(f"late {codec.KIND_NAMES[frame.kind]}")
            elif not name.startswith("DATA_"):
                self.relay._error(f"{codec.KIND_NAMES[frame.kind]} outside data windows")
            else:
                self.relay.on_data_frame(frame, int(name[5:]))
        self.relay_errors()

    # node side

    def node_rx(self, node, frame):
        ent = node.node_id
        local = self.local(ent, self.now)
        if isinstance(frame, codec.RlyAnnc):
            actions = node.on_rly_annc(frame, local)
            self.timer_gen[ent] += 1
            self.at(self.true_time(ent, local + node.timeout_after()), self.node_timeout, node, self.timer_gen[ent])
            self.schedule(node, actions)
        elif isinstance(frame, codec.RlyAck):
            self.schedule(node, node.on_rly_ack(frame, local))
        elif isinstance(frame, codec.RlyTx):
            for d in node.on_rly_tx(frame, local):
                self.log(ent, "APP_DELIVER", seq=seq_of(d.payload), src=d.src, dest=d.dest, kind=d.kind.name, len=len(d.payload), payload=d.payload.hex())
        self.node_events(node)

    def node_events(self, node):
        for e in node.events:
            self.log(node.node_id, "STATE_CHANGE", state=e)
        for e in node.errors:
            self.log(node.node_id, "PROTO_ERROR", error=e)
        node.events.clear()
        node.errors.clear()

    def schedule(self, node, actions):
        for a in actions:
            t = max(self.now, self.true_time(node.node_id, a.at))
            self.at(t, self.node_tx, node, a, node.cycle_start)

    def node_tx(self, node, action, cycle):
        frame = action.frame
        if frame is None:
            frame = node.frame_for_slot(action.slot, cycle)
            if frame is None:
                return
        self.transmit(node.node_id, frame, action.window)

    def node_timeout(self, node, gen):
        if gen != self.timer_gen[node.node_id]:
            return
        node.on_cycle_timeout(self.local(node.node_id, self.now))
        self.node_events(node)
        self.at(self.now + self.T, self.node_timeout, node, gen)

    def submit(self, s):
        node = self.nodes[s.node]
        node.submit_app_data(s.payload, s.dest, s.kind, self.local(s.node, self.now))
        self.log(s.node, "APP_SUBMIT", seq=seq_of(s.payload), dest=s.dest, kind=Kind(s.kind).name, len=len(s.payload), payload=s.payload.hex())


def run(scenario: Scenario) -> Trace:
    scenario.validate()
    return _Sim(scenario).run()
