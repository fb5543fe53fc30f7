"""Connection bookkeeping (CTRL_TBL), control-slot availability (TS_TBL) and the traffic map."""

import enum
from dataclasses import dataclass


class Kind(enum.IntEnum):
    DATA = 1
    VOICE = 2


class SlotTaken(Exception):
    pass


class UnassignedSlot(LookupError):
    pass


@dataclass(frozen=True)
class StreamRequest:
    """One entry of an ND_REQ: ``slots`` data timeslots towards ``dest``.

    VOICE requests always ask for whole pairs, so ``slots`` is even.
    """

    dest: int
    kind: Kind
    slots: int = 1

    def __post_init__(self):
        if not 1 <= self.slots <= 63:
            raise ValueError("slots must be in 1..63")
        if self.kind == Kind.VOICE and self.slots % 2:
            raise ValueError("voice requests are made in pairs of slots")
        if not 0 < self.dest <= 0xFFFF:
            raise ValueError("dest must be a non-zero 16-bit address")


@dataclass(frozen=True)
class Slot:
    owner: int
    kind: Kind
    dest: int

    @property
    def flow(self):
        return (self.owner, self.dest, self.kind)


@dataclass(frozen=True)
class TrafficMap:
    """Per-cycle assignment of data timeslots; ``None`` marks an idle slot."""

    slots: tuple

    @classmethod
    def empty(cls, n: int) -> "TrafficMap":
        return cls((None,) * n)

    @classmethod
    def from_owners(cls, owners, kinds, dests) -> "TrafficMap":
        slots = []
        for o, k, d in zip(owners, kinds, dests):
            slots.append(None if not o else Slot(o, Kind(k), d))
        return cls(tuple(slots))

    def __len__(self):
        return len(self.slots)

    def owners(self):
        return [s.owner if s else 0 for s in self.slots]

    def assigned(self):
        return [i for i, s in enumerate(self.slots) if s is not None]

    def voice_pairs_ok(self) -> bool:
        """Every voice allocation is a run of whole, same-flow pairs."""
        i = 0
        n = len(self.slots)
        while i < n:
            s = self.slots[i]
            if s is not None and s.kind == Kind.VOICE:
                if i + 1 >= n or self.slots[i + 1] != s:
                    return False
                i += 2
            else:
                i += 1
        return True


def slots_for(tmap: TrafficMap, node: int) -> list:
    return [i for i, s in enumerate(tmap.slots) if s is not None and s.owner == node]


def resolve_slot(tmap: TrafficMap, slot: int, dest_registry=None):
    """Map a data timeslot back to ``(src, dest, kind)``.

    ``dest_registry`` is the relay's record of granted requests; when absent
    the destination carried in the map itself is used.
    """
    if not 0 <= slot < len(tmap.slots) or tmap.slots[slot] is None:
        raise UnassignedSlot(slot)
    s = tmap.slots[slot]
    if dest_registry is not None and slot in dest_registry:
        return dest_registry[slot]
    return (s.owner, s.dest, s.kind)


@dataclass
class CtrlEntry:
    ttl: int
    slot: int


class ControlTable:
    """Peer connections, each holding one control slot and a TTL in cycles."""

    def __init__(self, ttl: int = 10):
        self.max_ttl = ttl
        self.entries: dict = {}

    def __contains__(self, node):
        return node in self.entries

    def __len__(self):
        return len(self.entries)

    def copy(self) -> "ControlTable":
        t = ControlTable(self.max_ttl)
        t.entries = {k: CtrlEntry(e.ttl, e.slot) for k, e in self.entries.items()}
        return t

    def owner_of(self, slot: int):
        for node, e in self.entries.items():
            if e.slot == slot:
                return node
        return None

    def slot_of(self, node: int):
        e = self.entries.get(node)
        return None if e is None else e.slot

    def connect(self, node: int, slot: int) -> "ControlTable":
        owner = self.owner_of(slot)
        if owner is not None and owner != node:
            raise SlotTaken(f"slot {slot} owned by {owner}")
        self.entries[node] = CtrlEntry(self.max_ttl, slot)
        return self

    def drop(self, node: int):
        self.entries.pop(node, None)

    def tick(self, heard) -> list:
        """Advance one cycle boundary; returns the evicted node IDs."""
        evicted = []
        for node in list(self.entries):
            e = self.entries[node]
            if node in heard:
                e.ttl = self.max_ttl
            else:
                e.ttl -= 1
                if e.ttl <= 0:
                    del self.entries[node]
                    evicted.append(node)
        return evicted

    def available_slots(self, total: int) -> tuple:
        owned = {e.slot for e in self.entries.values()}
        return tuple(i not in owned for i in range(total))
