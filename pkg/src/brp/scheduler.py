"""The relay's sticky scheduler.

Continuing flows keep up to ``sticky_limit`` slots, then the remaining
slots go to voice pairs and finally to data, round-robin in a random order
drawn from the supplied RNG.
"""

import random
from dataclasses import dataclass, field

from brp.tables import Kind, Slot, TrafficMap


@dataclass
class ScheduleInput:
    requests: dict
    previous: TrafficMap
    sticky_limit: int = 4
    data_slots: int = 6
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    per_flow: bool = True

    def __post_init__(self):
        if self.sticky_limit > self.data_slots:
            raise ValueError("sticky_limit exceeds data_slots")


def demand(requests: dict, data_slots: int) -> dict:
    """Merge requests into ``{(src, dest, kind): slots wanted}``."""
    flows = {}
    for node in sorted(requests):
        for r in requests[node]:
            key = (node, r.dest, r.kind)
            flows[key] = flows.get(key, 0) + r.slots
    for key, n in flows.items():
        n = min(n, data_slots)
        if key[2] == Kind.VOICE:
            n -= n % 2
        flows[key] = n
    return {k: n for k, n in flows.items() if n > 0}


def previous_counts(previous: TrafficMap) -> dict:
    counts = {}
    for s in previous.slots:
        if s is not None:
            counts[s.flow] = counts.get(s.flow, 0) + 1
    return counts


def sticky_targets(wanted: dict, previous: TrafficMap, sticky_limit: int, per_flow: bool = True) -> dict:
    """Slots each continuing flow is entitled to keep."""
    prev = previous_counts(previous)
    targets = {}
    if per_flow:
        for f, n in wanted.items():
            keep = min(prev.get(f, 0), sticky_limit, n)
            if f[2] == Kind.VOICE:
                keep -= keep % 2
            if keep:
                targets[f] = keep
        return targets
    budget = {}
    for f, n in prev.items():
        budget[f[0]] = budget.get(f[0], 0) + n
    for node in budget:
        budget[node] = min(budget[node], sticky_limit)
    # voice first so a pair is not starved by a node's own data
    for f in sorted(wanted, key=lambda f: (f[2] != Kind.VOICE, f)):
        b = budget.get(f[0], 0)
        keep = min(b, wanted[f])
        if f[2] == Kind.VOICE:
            keep -= keep % 2
        if keep:
            targets[f] = keep
            budget[f[0]] = b - keep
    return targets


def schedule(inp: ScheduleInput) -> TrafficMap:
    n = inp.data_slots
    wanted = demand(inp.requests, n)
    targets = sticky_targets(wanted, inp.previous, inp.sticky_limit, inp.per_flow)
    granted = {f: 0 for f in wanted}
    free = n

    # Sticky phase; a random order only matters when sticky demand overflows.
    sticky = sorted(targets)
    inp.rng.shuffle(sticky)
    for f in sticky:
        take = min(targets[f], free)
        if f[2] == Kind.VOICE:
            take -= take % 2
        granted[f] += take
        free -= take

    voice = sorted(f for f in wanted if f[2] == Kind.VOICE)
    data = sorted(f for f in wanted if f[2] == Kind.DATA)
    inp.rng.shuffle(voice)
    inp.rng.shuffle(data)

    progress = True
    while free >= 2 and progress:
        progress = False
        for f in voice:
            if free >= 2 and granted[f] < wanted[f]:
                granted[f] += 2
                free -= 2
                progress = True
    progress = True
    while free >= 1 and progress:
        progress = False
        for f in data:
            if free >= 1 and granted[f] < wanted[f]:
                granted[f] += 1
                free -= 1
                progress = True

    return place(granted, inp.previous, order=sticky + voice + data, n=n)


def place(granted: dict, previous: TrafficMap, order: list, n: int) -> TrafficMap:
    """Lay allocations out as data block then voice block.

    Within a block, continuing flows keep their previous relative order and
    new flows follow in grant order.
    """
    first_prev = {}
    for i, s in enumerate(previous.slots):
        if s is not None and s.flow not in first_prev:
            first_prev[s.flow] = i
    rank = {}
    for f in order:
        rank.setdefault(f, len(rank))

    def key(f):
        return (f[2] == Kind.VOICE, f not in first_prev, first_prev.get(f, 0), rank[f])

    slots = []
    for f in sorted((f for f, k in granted.items() if k), key=key):
        slots += [Slot(f[0], f[2], f[1])] * granted[f]
    slots += [None] * (n - len(slots))
    return TrafficMap(tuple(slots))
