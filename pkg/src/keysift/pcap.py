"""Classic-pcap reader: Ethernet/IPv4/TCP frames down to per-direction TLS streams.

TCP handling is deliberately minimal, matching loopback-clean lab captures:
in-order segments are accepted, exact duplicates and overlaps are trimmed by
sequence number, and anything out of order is rejected rather than buffered.
"""

from __future__ import annotations

import struct

from .errors import AmbiguousStream, MalformedRecord

_MAGIC_TO_BYTEORDER = {
    0xA1B2C3D4: ">",
    0xA1B23C4D: ">",
    0xD4C3B2A1: "<",
    0x4D3CB2A1: "<",
}

_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_VLAN = 0x8100
_IPPROTO_TCP = 6

Endpoint = tuple[str, int]
FlowKey = tuple[Endpoint, Endpoint]


class _Flow:
    __slots__ = ("data", "next_seq", "first_index")

    def __init__(self, first_index: int):
        self.data = bytearray()
        self.next_seq: int | None = None
        self.first_index = first_index

    def add(self, seq: int, payload: bytes) -> None:
        if self.next_seq is None:
            self.next_seq = seq
        if seq == self.next_seq:
            self.data += payload
            self.next_seq = (self.next_seq + len(payload)) & 0xFFFFFFFF
        elif (seq + len(payload) - self.next_seq) & 0xFFFFFFFF > 0x7FFFFFFF:
            pass  # entirely behind the reassembly point: retransmission, drop
        elif (self.next_seq - seq) & 0xFFFFFFFF <= len(payload):
            skip = (self.next_seq - seq) & 0xFFFFFFFF
            self.data += payload[skip:]
            self.next_seq = (self.next_seq + len(payload) - skip) & 0xFFFFFFFF
        else:
            raise MalformedRecord("out-of-order TCP segment; capture is not reassembly-clean")


def _iter_packets(data: bytes):
    if len(data) < 24:
        raise MalformedRecord("pcap shorter than its global header")
    magic = struct.unpack(">I", data[:4])[0]
    if magic not in _MAGIC_TO_BYTEORDER:
        raise MalformedRecord(f"not a classic pcap file (magic 0x{magic:08X})")
    order = _MAGIC_TO_BYTEORDER[magic]
    linktype = struct.unpack(order + "I", data[20:24])[0]
    if linktype != 1:
        raise MalformedRecord(f"unsupported pcap link type {linktype}; Ethernet required")
    off = 24
    while off < len(data):
        if len(data) - off < 16:
            raise MalformedRecord("truncated pcap packet header")
        _, _, incl_len, _ = struct.unpack(order + "IIII", data[off : off + 16])
        off += 16
        if len(data) - off < incl_len:
            raise MalformedRecord("truncated pcap packet data")
        yield data[off : off + incl_len]
        off += incl_len


def _tcp_payload(frame: bytes):
    """(src, sport, dst, dport, seq, payload) for an IPv4/TCP frame, else None."""
    if len(frame) < 14:
        return None
    ethertype = struct.unpack_from(">H", frame, 12)[0]
    l3_off = 14
    if ethertype == _ETHERTYPE_VLAN:
        if len(frame) < 18:
            return None
        ethertype = struct.unpack_from(">H", frame, 16)[0]
        l3_off = 18
    if ethertype != _ETHERTYPE_IPV4:
        return None
    if len(frame) < l3_off + 20:
        return None
    ver_ihl = frame[l3_off]
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    total_len = struct.unpack_from(">H", frame, l3_off + 2)[0]
    flags_frag = struct.unpack_from(">H", frame, l3_off + 6)[0]
    if flags_frag & 0x3FFF:  # fragment offset or MF set
        raise MalformedRecord("fragmented IPv4 packets are not supported")
    proto = frame[l3_off + 9]
    if proto != _IPPROTO_TCP:
        return None
    src = ".".join(str(b) for b in frame[l3_off + 12 : l3_off + 16])
    dst = ".".join(str(b) for b in frame[l3_off + 16 : l3_off + 20])
    l4_off = l3_off + ihl
    if len(frame) < l4_off + 20:
        return None
    sport, dport = struct.unpack_from(">HH", frame, l4_off)
    seq = struct.unpack_from(">I", frame, l4_off + 4)[0]
    doff = (frame[l4_off + 12] >> 4) * 4
    payload_start = l4_off + doff
    payload_end = l3_off + total_len  # ignore Ethernet padding
    if payload_end < payload_start or payload_end > len(frame):
        payload_end = len(frame)
    payload = frame[payload_start:payload_end]
    if not payload:
        return None
    return (src, sport), (dst, dport), seq, payload


def _looks_like_tls(data: bytes) -> bool:
    return len(data) >= 3 and 20 <= data[0] <= 23 and data[1] == 3 and data[2] <= 4


def _is_client_hello(data: bytes) -> bool:
    return len(data) >= 6 and data[0] == 22 and data[5] == 1


def tls_streams_from_pcap(
    data: bytes, session_filter: tuple | None = None
) -> tuple[bytes, bytes]:
    """Reassemble the (client, server) TLS byte streams from a pcap.

    ``session_filter`` is an ``(ip, port, ip, port)`` tuple naming one flow in
    either orientation; it is required when the capture holds more than one
    TLS-over-TCP stream.
    """
    flows: dict[FlowKey, _Flow] = {}
    index = 0
    for frame in _iter_packets(data):
        parsed = _tcp_payload(frame)
        if parsed is None:
            continue
        src, dst, seq, payload = parsed
        key = (src, dst)
        flow = flows.get(key)
        if flow is None:
            flow = flows[key] = _Flow(index)
        flow.add(seq, payload)
        index += 1

    streams: dict[frozenset, dict[FlowKey, _Flow]] = {}
    for key, flow in flows.items():
        if _looks_like_tls(bytes(flow.data[:3])):
            streams.setdefault(frozenset(key), {})[key] = flow
    # pull in the reverse flow of every TLS-looking flow
    for pair in streams.values():
        some_key = next(iter(pair))
        reverse = (some_key[1], some_key[0])
        if reverse not in pair and reverse in flows:
            pair[reverse] = flows[reverse]

    if not streams:
        raise MalformedRecord("no TLS-over-TCP stream in capture")

    if session_filter is not None:
        a = (session_filter[0], int(session_filter[1]))
        b = (session_filter[2], int(session_filter[3]))
        wanted = frozenset((a, b))
        if wanted not in streams:
            raise MalformedRecord(f"no TLS stream matches filter {session_filter}")
        selected = streams[wanted]
    elif len(streams) > 1:
        raise AmbiguousStream(f"{len(streams)} TLS streams in capture; a session filter is required")
    else:
        selected = next(iter(streams.values()))

    pair = sorted(selected.items(), key=lambda kv: kv[1].first_index)
    client_key = None
    for key, flow in pair:
        if _is_client_hello(bytes(flow.data[:6])):
            client_key = key
            break
    if client_key is None:
        client_key = pair[0][0]  # earliest talker

    client = selected[client_key]
    reverse = (client_key[1], client_key[0])
    server = selected.get(reverse)
    server_data = bytes(server.data) if server is not None else b""
    return bytes(client.data), server_data
