import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brp import codec
from brp.codec import (
    BadChecksum,
    FrameError,
    MalformedFrame,
    NdDataTx,
    NdReq,
    NdSyn,
    NdVoiceTx,
    OversizeFrame,
    RlyAck,
    RlyAnnc,
    RlyTx,
    Truncated,
    UnknownKind,
    decode_frame,
    encode_frame,
)
from brp.tables import Kind, Slot, StreamRequest, TrafficMap

from oracles import crc16_ccitt_bitwise

node_ids = st.integers(1, 0xFFFF)
payloads = st.binary(min_size=1, max_size=40)


def slots():
    return st.one_of(st.none(), st.builds(Slot, node_ids, st.sampled_from(list(Kind)), node_ids))


def requests():
    return st.one_of(
        st.builds(StreamRequest, node_ids, st.just(Kind.DATA), st.integers(1, 63)),
        st.builds(StreamRequest, node_ids, st.just(Kind.VOICE), st.integers(1, 31).map(lambda n: 2 * n)),
    )


def frames():
    return st.one_of(
        st.builds(RlyAnnc, node_ids, st.integers(0, 255), st.lists(st.booleans(), max_size=64).map(tuple)),
        st.builds(NdSyn, node_ids),
        st.builds(
            RlyAck,
            st.lists(node_ids, max_size=8, unique=True).map(tuple),
            st.lists(slots(), max_size=12).map(lambda s: TrafficMap(tuple(s))),
        ),
        st.builds(NdReq, node_ids, st.lists(requests(), max_size=8).map(tuple)),
        st.builds(NdDataTx, node_ids, node_ids, payloads),
        st.builds(NdVoiceTx, payloads),
        st.builds(RlyTx, st.lists(st.binary(max_size=40), max_size=5).map(tuple), st.integers(0, 255)),
    )


class TestCrc:
    def test_check_value(self):
        # the standard CCITT-FALSE check string
        assert codec.crc16(b"123456789") == 0x29B1
        assert crc16_ccitt_bitwise(b"123456789") == 0x29B1

    @given(st.binary(max_size=300))
    def test_matches_bitwise_oracle(self, data):
        assert codec.crc16(data) == crc16_ccitt_bitwise(data)


class TestEncode:
    def test_nd_syn_bytes(self):
        raw = encode_frame(NdSyn(23))
        head = bytes([0x02, 0x00, 0x17])
        assert raw == head + struct.pack(">H", crc16_ccitt_bitwise(head))
        assert len(raw) == 5

    def test_annc_roundtrip_all_free(self):
        f = RlyAnnc(1, 0, (True,) * 16)
        raw = encode_frame(f)
        assert raw[:5] == bytes([0x01, 0x00, 0x01, 0x00, 16])
        assert raw[5:7] == b"\xff\xff"
        assert decode_frame(raw) == f

    def test_annc_bitmap_is_msb_first(self):
        raw = encode_frame(RlyAnnc(1, 0, (False, False, False, True, False)))
        assert raw[5] == 0b00010000

    def test_rly_tx_six_full_segments(self):
        f = RlyTx(tuple(bytes([i]) * 40 for i in range(6)))
        # kind, offset, count, 6 x (len + 40), crc
        assert len(encode_frame(f)) == 3 + 6 * 41 + 2 == 251

    def test_ack_layout(self):
        tmap = TrafficMap.from_owners([23, 45, 45, 45, 67, 67], [1, 1, 1, 1, 2, 2], [0x8003] * 4 + [0x8001] * 2)
        raw = encode_frame(RlyAck((23,), tmap))
        assert raw[0] == 0x03 and raw[1] == 1 and raw[2:4] == b"\x00\x17"
        assert raw[4] == 6
        # first slot: owner 23, DATA, destination index 0
        assert raw[5:8] == bytes([0, 23, 1 << 6 | 0])
        # voice slots use destination index 1
        assert raw[17:20] == bytes([0, 67, 2 << 6 | 1])
        assert raw[23] == 2 and raw[24:28] == b"\x80\x03\x80\x01"

    def test_request_kind_byte(self):
        raw = encode_frame(NdReq(45, (StreamRequest(0x8001, Kind.VOICE, 2), StreamRequest(9, Kind.DATA, 3))))
        assert raw[4:7] == b"\x80\x01\x82"
        assert raw[7:10] == b"\x00\x09\x03"

    def test_oversize(self):
        with pytest.raises(OversizeFrame):
            encode_frame(RlyTx(tuple(b"x" * 40 for _ in range(7))))

    @pytest.mark.parametrize(
        "frame",
        [NdSyn(0), NdDataTx(1, 0, b"x"), NdVoiceTx(b""), NdDataTx(1, 2, b"x" * 256), RlyAnnc(0x10000, 0, ())],
    )
    def test_invalid_fields(self, frame):
        with pytest.raises(FrameError):
            encode_frame(frame)


class TestDecode:
    def test_empty(self):
        with pytest.raises(Truncated):
            decode_frame(b"")

    def test_flipped_crc(self):
        raw = bytearray(encode_frame(NdSyn(23)))
        raw[-1] ^= 0xFF
        with pytest.raises(BadChecksum):
            decode_frame(bytes(raw))

    def test_unknown_kind(self):
        with pytest.raises(UnknownKind):
            decode_frame(b"\x09\x00\x00")

    def test_truncated_body(self):
        head = b"\x05\x00\x01\x00\x02\x05ab"
        with pytest.raises(Truncated):
            decode_frame(head + struct.pack(">H", crc16_ccitt_bitwise(head)))

    def test_trailing_bytes(self):
        head = b"\x02\x00\x17\x00"
        with pytest.raises(MalformedFrame):
            decode_frame(head + struct.pack(">H", crc16_ccitt_bitwise(head)))

    def test_nonzero_pad_bits_rejected(self):
        head = b"\x01\x00\x01\x00\x03\xff"
        with pytest.raises(MalformedFrame):
            decode_frame(head + struct.pack(">H", crc16_ccitt_bitwise(head)))

    def test_oversize_input(self):
        with pytest.raises(OversizeFrame):
            decode_frame(b"\x06" + b"\x00" * 300)


class TestProperties:
    @settings(max_examples=500)
    @given(frames())
    def test_roundtrip(self, f):
        assert decode_frame(encode_frame(f)) == f

    @settings(max_examples=300)
    @given(frames(), frames())
    def test_encode_injective(self, a, b):
        if a != b:
            assert encode_frame(a) != encode_frame(b)

    @settings(max_examples=300)
    @given(st.lists(st.binary(max_size=40), max_size=6).map(tuple))
    def test_segment_order_preserved(self, segs):
        assert decode_frame(encode_frame(RlyTx(segs))).segments == segs

    @settings(max_examples=1000)
    @given(st.binary(max_size=300))
    def test_decode_total(self, data):
        try:
            decode_frame(data)
        except FrameError:
            pass

    @settings(max_examples=300)
    @given(frames(), st.data())
    def test_single_byte_corruption_detected(self, f, data):
        raw = bytearray(encode_frame(f))
        i = data.draw(st.integers(0, len(raw) - 1))
        raw[i] ^= data.draw(st.integers(1, 255))
        with pytest.raises(FrameError):
            decode_frame(bytes(raw))
