"""Protocol data units and the endpoints they travel between.

Bodies are immutable. A body class with ``BOUND = True`` is routed to a node
through the identity bindings held by the destination edge network's local
server; every other body addressed to a node is delivered link-locally, i.e.
only if the node is physically present in that edge network.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Optional, Union

from netinf_mn.ids import GlobalLocator, LocalAddress, NodeId

Where = Union[GlobalLocator, LocalAddress]


# -- endpoints ---------------------------------------------------------------

@dataclass(frozen=True)
class NodeEp:
    node: NodeId
    en: Optional[str]

    def __str__(self) -> str:
        return f"mn:{self.node.id8}@{self.en or '-'}"


@dataclass(frozen=True)
class LsEp:
    en: str

    def __str__(self) -> str:
        return f"ls:{self.en}"


@dataclass(frozen=True)
class LcsEp:
    def __str__(self) -> str:
        return "lcs"


@dataclass(frozen=True)
class ExtEp:
    address: str

    def __str__(self) -> str:
        return self.address


LCS = LcsEp()
Endpoint = Union[NodeEp, LsEp, LcsEp, ExtEp]


# -- outbound items produced by state machines ---------------------------------

@dataclass(frozen=True)
class Send:
    dst: Endpoint
    body: "Body"
    as_node: Optional[NodeId] = None  # identity to claim, when not the sender's own


@dataclass(frozen=True)
class Timer:
    at: int
    tag: tuple


class Body:
    BOUND: ClassVar[bool] = False

    @property
    def kind(self) -> str:
        return type(self).__name__

    def describe(self) -> str:
        return ""


# -- node <-> local server ------------------------------------------------------

@dataclass(frozen=True)
class AddressRequest(Body):
    node: NodeId


@dataclass(frozen=True)
class AddressGrant(Body):
    node: NodeId
    addr: LocalAddress

    def describe(self) -> str:
        return f"addr={self.addr}"


@dataclass(frozen=True)
class Register(Body):
    node: NodeId
    addr: LocalAddress

    def describe(self) -> str:
        return f"addr={self.addr}"


@dataclass(frozen=True)
class RegisterAck(Body):
    node: NodeId
    addr: LocalAddress


@dataclass(frozen=True)
class Deregister(Body):
    node: NodeId


@dataclass(frozen=True)
class CacheQuery(Body):
    requester: NodeId
    target: NodeId

    def describe(self) -> str:
        return f"target={self.target.id8}"


@dataclass(frozen=True)
class CacheResponse(Body):
    target: NodeId
    where: Optional[Where]
    age: int = 0

    @property
    def hit(self) -> bool:
        return self.where is not None

    def describe(self) -> str:
        return f"target={self.target.id8} " + (f"hit={self.where}" if self.hit else "miss")


@dataclass(frozen=True)
class CacheStore(Body):
    target: NodeId
    where: Where

    def describe(self) -> str:
        return f"target={self.target.id8} where={self.where}"


@dataclass(frozen=True)
class LookupRequest(Body):
    requester: NodeId
    target: NodeId
    ttl: int

    def describe(self) -> str:
        return f"target={self.target.id8} ttl={self.ttl}"


@dataclass(frozen=True)
class LookupResponse(Body):
    requester: NodeId
    target: NodeId
    addr: LocalAddress

    def describe(self) -> str:
        return f"target={self.target.id8} addr={self.addr}"


@dataclass(frozen=True)
class LookupExpired(Body):
    requester: NodeId
    target: NodeId
    deadline: int

    def describe(self) -> str:
        return f"target={self.target.id8} deadline={self.deadline}"


@dataclass(frozen=True)
class BindProxy(Body):
    principal: NodeId
    holder: NodeId
    until: Optional[int] = None  # the binding lapses at this tick

    def describe(self) -> str:
        lease = f" until={self.until}" if self.until is not None else ""
        return f"principal={self.principal.id8} holder={self.holder.id8}{lease}"


@dataclass(frozen=True)
class Unbind(Body):
    principal: NodeId
    holder: NodeId

    def describe(self) -> str:
        return f"principal={self.principal.id8} holder={self.holder.id8}"


# -- node <-> core ---------------------------------------------------------------

@dataclass(frozen=True)
class AttachUpdate(Body):
    node: NodeId
    en: str
    correspondents: tuple[NodeId, ...] = ()

    def describe(self) -> str:
        return f"node={self.node.id8} en={self.en}"


@dataclass(frozen=True)
class MapRequest(Body):
    requester: NodeId
    target: NodeId
    sent_at: int

    def describe(self) -> str:
        return f"target={self.target.id8}"


@dataclass(frozen=True)
class MapReply(Body):
    target: NodeId
    locator: Optional[GlobalLocator]

    def describe(self) -> str:
        return f"target={self.target.id8} locator={self.locator or 'NotFound'}"


@dataclass(frozen=True)
class LocatorPush(Body):
    """Eager-policy correspondent update pushed by the core."""

    node: NodeId
    locator: GlobalLocator

    def describe(self) -> str:
        return f"node={self.node.id8} locator={self.locator}"


# -- node <-> node -----------------------------------------------------------------

@dataclass(frozen=True)
class Resume(Body):
    BOUND: ClassVar[bool] = True
    sid: str
    node: NodeId
    next_seq_in: int
    addr: Optional[LocalAddress]

    def describe(self) -> str:
        return f"sid={self.sid} next_in={self.next_seq_in}"


@dataclass(frozen=True)
class ResumeAck(Body):
    BOUND: ClassVar[bool] = True
    sid: str
    node: NodeId
    next_seq_in: int
    addr: Optional[LocalAddress]

    def describe(self) -> str:
        return f"sid={self.sid} next_in={self.next_seq_in}"


@dataclass(frozen=True)
class Data(Body):
    BOUND: ClassVar[bool] = True
    sid: str
    seq: int
    payload: bytes
    src_node: NodeId

    def describe(self) -> str:
        return f"sid={self.sid} seq={self.seq} len={len(self.payload)}"


@dataclass(frozen=True)
class DataAck(Body):
    BOUND: ClassVar[bool] = True
    sid: str
    ack: int  # cumulative: every seq below this has been received in order
    src_node: NodeId

    def describe(self) -> str:
        return f"sid={self.sid} ack={self.ack}"


@dataclass(frozen=True)
class Reject(Body):
    BOUND: ClassVar[bool] = True
    sid: str
    reason: str

    def describe(self) -> str:
        return f"sid={self.sid} reason={self.reason}"


@dataclass(frozen=True)
class SessionSnapshot:
    sid: str
    peer: NodeId
    next_seq_out: int
    next_seq_in: int


@dataclass(frozen=True)
class DelegateRequest(Body):
    principal: NodeId
    origin_en: str
    dest_en: str
    sessions: tuple[SessionSnapshot, ...]
    lease_end: Optional[int] = None

    def describe(self) -> str:
        lease = f" lease={self.lease_end}" if self.lease_end is not None else ""
        return f"principal={self.principal.id8} dest={self.dest_en} sessions={len(self.sessions)}{lease}"


@dataclass(frozen=True)
class DelegateAck(Body):
    principal: NodeId
    delegate: NodeId


@dataclass(frozen=True)
class DelegateReject(Body):
    principal: NodeId
    delegate: NodeId
    reason: str

    def describe(self) -> str:
        return f"reason={self.reason}"


@dataclass(frozen=True)
class SyncRequest(Body):
    BOUND: ClassVar[bool] = True
    principal: NodeId


@dataclass(frozen=True)
class BufferedData:
    sid: str
    seq: int
    payload: bytes


@dataclass(frozen=True)
class SyncReply(Body):
    principal: NodeId
    delegate: NodeId
    sessions: tuple[SessionSnapshot, ...]
    buffer: tuple[BufferedData, ...] = field(default=())

    def describe(self) -> str:
        return f"principal={self.principal.id8} buffered={len(self.buffer)}"


# -- tunnel traffic toward non-NetInf sites -----------------------------------------

@dataclass(frozen=True)
class TunnelPacket(Body):
    wire: bytes
    outer: GlobalLocator
    inner_dst: str

    def describe(self) -> str:
        return f"dst={self.inner_dst} bytes={len(self.wire)}"


@dataclass(frozen=True)
class NativePacket(Body):
    payload: bytes
    inner_dst: str
    src_node: NodeId

    def describe(self) -> str:
        return f"dst={self.inner_dst} bytes={len(self.payload)}"


# -- engine-level envelope ---------------------------------------------------------

@dataclass(frozen=True)
class Message:
    msg_id: int
    src: Endpoint
    dst: Endpoint
    body: Body
    sent_at: int
    origin: str  # physical location the message left from: an edge network or "core"
    cls: str  # core | edge | data

    def __str__(self) -> str:
        return f"#{self.msg_id} {self.body.kind} {self.src}->{self.dst}"
