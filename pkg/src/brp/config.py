from dataclasses import dataclass, field

# Groups share the 16-bit address space with nodes; the top bit marks a group.
GROUP_FLAG = 0x8000


def group_id(n: int) -> int:
    return GROUP_FLAG | n


def is_group(addr: int) -> bool:
    return bool(addr & GROUP_FLAG)


@dataclass(frozen=True)
class ProtocolConfig:
    """Link-layer parameters shared by the relay, the nodes and the layout builder.

    The layout defaults (two control slots, two requests per ND_REQ, 0.1 ms
    guard) are what it takes for the unscaled cycle to land near 0.5 s with
    the default PHY settings and six 40-byte data slots. Larger networks raise
    ``control_slots``; every window is recomputed from frame airtime.
    """

    control_slots: int = 2
    data_slots: int = 6
    max_requests: int = 2
    payload_capacity: int = 40
    sticky_limit: int = 4
    per_flow_sticky: bool = True
    ttl: int = 10
    guard: float = 0.0001
    timeout_factor: float = 1.5
    config_id: int = 0
    voice_groups: tuple = field(default=(group_id(1), group_id(2)))
    data_groups: tuple = field(default=(group_id(3), group_id(4)))

    def __post_init__(self):
        if not 1 <= self.control_slots <= 255:
            raise ValueError("control_slots must be in 1..255")
        if not 1 <= self.data_slots <= 63:
            raise ValueError("data_slots must be in 1..63")
        if not 1 <= self.max_requests <= 255:
            raise ValueError("max_requests must be in 1..255")
        if not 1 <= self.payload_capacity <= 240:
            raise ValueError("payload_capacity must be in 1..240")
        if not 0 <= self.sticky_limit <= self.data_slots:
            raise ValueError("sticky_limit must not exceed data_slots")
        if self.ttl < 1:
            raise ValueError("ttl must be positive")
        if self.guard < 0:
            raise ValueError("guard must be non-negative")
        if not 0 <= self.config_id <= 255:
            raise ValueError("config_id is an 8-bit value")
