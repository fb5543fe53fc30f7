"""LoRa time-on-air model and the per-cycle window layout."""

import math
from dataclasses import dataclass

from brp.config import ProtocolConfig

FCC_MAX_AIRTIME = 0.400


class InfeasibleLayout(ValueError):
    pass


@dataclass(frozen=True)
class PhyConfig:
    spreading_factor: int = 7
    bandwidth: float = 250_000.0
    # denominator of the 4/x coding rate
    coding_rate: int = 5
    crc: bool = True
    preamble_symbols: int = 8
    explicit_header: bool = False
    # None: on when a symbol lasts longer than 16 ms, as the radio requires
    low_data_rate: bool = None
    tx_power_dbm: float = 30.0

    def __post_init__(self):
        if not 6 <= self.spreading_factor <= 12:
            raise ValueError("spreading factor must be 6..12")
        if not 5 <= self.coding_rate <= 8:
            raise ValueError("coding rate must be 4/5..4/8")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.preamble_symbols < 0:
            raise ValueError("preamble_symbols must be non-negative")


def symbol_time(phy: PhyConfig) -> float:
    return 2**phy.spreading_factor / phy.bandwidth


def low_data_rate(phy: PhyConfig) -> bool:
    if phy.low_data_rate is None:
        return symbol_time(phy) > 0.016
    return phy.low_data_rate


def payload_symbols(payload_len: int, phy: PhyConfig) -> int:
    sf = phy.spreading_factor
    de = low_data_rate(phy)
    num = 8 * payload_len - 4 * sf + 28 + 16 * phy.crc - 20 * (not phy.explicit_header)
    return 8 + max(math.ceil(num / (4 * (sf - 2 * de))) * phy.coding_rate, 0)


def airtime(payload_len: int, phy: PhyConfig = PhyConfig()) -> float:
    """Seconds on air for a LoRa packet carrying ``payload_len`` PHY payload bytes."""
    if not 0 <= payload_len <= 255:
        raise ValueError("LoRa payload is at most 255 bytes")
    n = phy.preamble_symbols + 4.25 + payload_symbols(payload_len, phy)
    return n * symbol_time(phy)


def frame_airtime(frame_len: int, phy: PhyConfig = PhyConfig()) -> float:
    """Airtime of an encoded BRP frame.

    With CRC on, the frame's trailing CRC16 is the one the radio appends, so
    it is accounted for by the CRC term rather than as payload.
    """
    return airtime(frame_len - 2 if phy.crc else frame_len, phy)


def raw_bitrate(phy: PhyConfig = PhyConfig()) -> float:
    sf = phy.spreading_factor
    return sf * phy.bandwidth / 2**sf * 4 / phy.coding_rate


# Worst-case frame sizes per window, from the codec layout.
def annc_size(cfg: ProtocolConfig) -> int:
    return 1 + 2 + 1 + 1 + (cfg.control_slots + 7) // 8 + 2


def control_size(cfg: ProtocolConfig) -> int:
    return max(5, 1 + 2 + 1 + 3 * cfg.max_requests + 2)


def ack_size(cfg: ProtocolConfig) -> int:
    n = cfg.data_slots
    return 1 + 1 + 2 * cfg.control_slots + 1 + 3 * n + 1 + 2 * n + 2


def data_size(cfg: ProtocolConfig) -> int:
    p = cfg.payload_capacity
    return max(1 + 2 + 2 + 1 + p + 2, 1 + 1 + p + 2)


def rly_tx_size(n_segments: int, seg_len: int) -> int:
    return 1 + 1 + 1 + n_segments * (1 + seg_len) + 2


def rly_tx_capacity(cfg: ProtocolConfig, phy: PhyConfig) -> int:
    """Most full segments one RLY_TX can carry within 255 bytes and 400 ms."""
    n = 0
    while n < cfg.data_slots:
        size = rly_tx_size(n + 1, cfg.payload_capacity)
        if size > 255 or frame_airtime(size, phy) > FCC_MAX_AIRTIME:
            break
        n += 1
    return n


@dataclass(frozen=True)
class Window:
    name: str
    start: float
    duration: float
    # worst-case frame airtime the window was sized for (unscaled)
    airtime: float

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class CycleLayout:
    windows: tuple
    scaling: float
    base_total: float

    @property
    def total(self) -> float:
        return self.windows[-1].end

    def __getitem__(self, name) -> Window:
        for w in self.windows:
            if w.name == name:
                return w
        raise KeyError(name)

    def names(self, prefix: str):
        return [w.name for w in self.windows if w.name.startswith(prefix)]

    @property
    def rly_tx_parts(self) -> int:
        return len(self.names("RLY_TX"))

    def locate(self, offset: float):
        """Window containing a cycle-relative offset, or None."""
        for w in self.windows:
            if w.start <= offset < w.end:
                return w
        return None

    def table(self) -> str:
        rows = [f"{'window':<10} {'start_ms':>10} {'dur_ms':>10} {'airtime_ms':>11}"]
        for w in self.windows:
            rows.append(
                f"{w.name:<10} {w.start * 1e3:>10.3f} {w.duration * 1e3:>10.3f} {w.airtime * 1e3:>11.3f}"
            )
        rows.append(f"total {self.total * 1e3:.3f} ms (unscaled {self.base_total * 1e3:.3f} ms, scaling {self.scaling:g})")
        return "\n".join(rows)


def build_layout(cfg: ProtocolConfig = ProtocolConfig(), phy: PhyConfig = PhyConfig(), scaling: float = 1.0) -> CycleLayout:
    if scaling < 1:
        raise ValueError("scaling must be >= 1")
    cap = rly_tx_capacity(cfg, phy)
    if cap == 0:
        raise InfeasibleLayout("a single RLY_TX segment does not fit the airtime cap")
    parts = math.ceil(cfg.data_slots / cap)
    spec = [("RLY_ANNC", annc_size(cfg))]
    spec += [(f"CTRL_{i}", control_size(cfg)) for i in range(cfg.control_slots)]
    spec.append(("RLY_ACK", ack_size(cfg)))
    spec += [(f"DATA_{i}", data_size(cfg)) for i in range(cfg.data_slots)]
    left = cfg.data_slots
    for p in range(parts):
        n = min(cap, left)
        left -= n
        spec.append((f"RLY_TX_{p}", rly_tx_size(n, cfg.payload_capacity)))

    windows = []
    t = 0.0
    base = 0.0
    for name, size in spec:
        if size > 255:
            raise InfeasibleLayout(f"{name} needs a {size}-byte frame")
        a = frame_airtime(size, phy)
        if a > FCC_MAX_AIRTIME:
            raise InfeasibleLayout(f"{name} airtime {a * 1e3:.1f} ms exceeds 400 ms")
        d = (a + cfg.guard) * scaling
        windows.append(Window(name, t, d, a))
        t += d
        base += a + cfg.guard
    return CycleLayout(tuple(windows), scaling, base)

