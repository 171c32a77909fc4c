"""Tunnel-router duties inside the TCE: encapsulation toward non-NetInf sites.

Encapsulation is the inner router's (ILCTR) job, decapsulation the outer
router's (OLCTR). Wire header, 36 bytes, big-endian::

    0   4  magic  b"NIEH"
    4   1  version (1)
    5   1  flags   (bit 0: inner destination is outside NetInf)
    6   2  payload length
    8  16  inner source NodeId
    24 12  truncated BLAKE2b digest of the rendered outer locator

No fragmentation: a packet that does not fit the path MTU is refused.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Union

from netinf_mn.errors import MalformedPacketError, MtuExceededError
from netinf_mn.ids import GlobalLocator, NodeId

MAGIC = b"NIEH"
VERSION = 1
HEADER_BYTES = 36
FLAG_EXTERNAL = 0x01
MAX_PAYLOAD = 0xFFFF

_HEADER = struct.Struct(">4sBBH16s12s")
assert _HEADER.size == HEADER_BYTES


def locator_digest(loc: GlobalLocator) -> bytes:
    return hashlib.blake2b(str(loc).encode(), digest_size=12).digest()


@dataclass(frozen=True)
class EncapsulatedPacket:
    outer: GlobalLocator
    inner_dst: Union[NodeId, str]
    wire: bytes

    @property
    def total_size(self) -> int:
        return len(self.wire)

    @property
    def header_bytes(self) -> int:
        return HEADER_BYTES


@dataclass(frozen=True)
class Decapsulated:
    inner_src: NodeId
    inner_dst: Union[NodeId, str]
    payload: bytes


def encapsulate(
    payload: bytes,
    outer: GlobalLocator,
    mtu: int,
    inner_src: NodeId,
    inner_dst: Union[NodeId, str],
) -> EncapsulatedPacket:
    if mtu < HEADER_BYTES + 1:
        raise ValueError(f"mtu must be at least {HEADER_BYTES + 1}, got {mtu}")
    needed = HEADER_BYTES + len(payload)
    if needed > mtu:
        raise MtuExceededError(needed, mtu)
    if len(payload) > MAX_PAYLOAD:
        raise ValueError("payload length does not fit the 16-bit length field")
    flags = FLAG_EXTERNAL if isinstance(inner_dst, str) else 0
    header = _HEADER.pack(MAGIC, VERSION, flags, len(payload), inner_src.value, locator_digest(outer))
    return EncapsulatedPacket(outer, inner_dst, header + bytes(payload))


def decapsulate(pkt: EncapsulatedPacket) -> Decapsulated:
    wire = pkt.wire
    if len(wire) < HEADER_BYTES:
        raise MalformedPacketError(f"truncated header: {len(wire)} of {HEADER_BYTES} bytes")
    magic, version, flags, length, src, digest = _HEADER.unpack_from(wire)
    if magic != MAGIC:
        raise MalformedPacketError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedPacketError(f"unsupported version {version}")
    if len(wire) - HEADER_BYTES != length:
        raise MalformedPacketError(f"length field {length} but {len(wire) - HEADER_BYTES} payload bytes")
    if digest != locator_digest(pkt.outer):
        raise MalformedPacketError("outer locator digest mismatch")
    if bool(flags & FLAG_EXTERNAL) != isinstance(pkt.inner_dst, str):
        raise MalformedPacketError("destination flag disagrees with inner destination")
    return Decapsulated(NodeId(src), pkt.inner_dst, wire[HEADER_BYTES:])


def _segments(address: str) -> list[str]:
    scheme, sep, rest = address.partition(":")
    if not sep:
        return [address]
    return [scheme + ":"] + [s for s in rest.split("/") if s]


@dataclass
class SiteRegistry:
    """Longest-prefix map from destination prefixes to NetInf capability.

    Prefixes match on whole path segments, so ``ext:/legacy`` covers
    ``ext:/legacy/a`` but not ``ext:/legacyx``.
    """

    prefixes: dict[str, bool] = field(default_factory=dict)

    def mark(self, prefix: str, netinf: bool) -> None:
        self.prefixes[prefix] = netinf

    def is_netinf_site(self, dst: Union[str, NodeId]) -> bool:
        if isinstance(dst, NodeId):
            return True
        target = _segments(dst)
        best_len = -1
        best = True
        for prefix, netinf in self.prefixes.items():
            segs = _segments(prefix)
            if len(segs) > best_len and target[: len(segs)] == segs:
                best_len, best = len(segs), netinf
        return best


def is_netinf_site(reg: SiteRegistry, dst) -> bool:
    return reg.is_netinf_site(dst)
