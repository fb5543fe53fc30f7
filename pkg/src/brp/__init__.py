"""BRP relay link layer over LoRa: codec, relay/node state machines and a desk-scale simulator."""

from brp.config import ProtocolConfig
from brp.timing import PhyConfig, airtime, build_layout, raw_bitrate

__all__ = ["ProtocolConfig", "PhyConfig", "airtime", "build_layout", "raw_bitrate"]
