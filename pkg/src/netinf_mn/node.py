"""The mobile node: sessions, attach/roam procedure, rendezvous, TCE dispatch.

Every public step takes the current tick and returns the outbound items it
produced: ``Send`` for messages and ``Timer`` for wake-ups. Timers are never
cancelled; a node ignores a firing whose deadline it no longer holds.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from netinf_mn import vnl
from netinf_mn.errors import (
    BadTtlError,
    InvalidStateError,
    InvalidTransitionError,
    MtuExceededError,
    NotAttachedError,
    ProtocolError,
    SendQueueFullError,
)
from netinf_mn.ids import ArId, GlobalLocator, LocalAddress, NodeId, where_en
from netinf_mn.messages import (
    LCS,
    AddressGrant,
    AddressRequest,
    AttachUpdate,
    CacheQuery,
    CacheResponse,
    CacheStore,
    Data,
    DataAck,
    DelegateAck,
    DelegateReject,
    DelegateRequest,
    Deregister,
    ExtEp,
    LcsEp,
    LocatorPush,
    LookupExpired,
    LookupRequest,
    LookupResponse,
    LsEp,
    MapReply,
    MapRequest,
    Message,
    NativePacket,
    NodeEp,
    RegisterAck,
    Register,
    Reject,
    Resume,
    ResumeAck,
    Send,
    SessionSnapshot,
    SyncReply,
    SyncRequest,
    Timer,
    TunnelPacket,
)
from netinf_mn import tunnel

Where = Union[GlobalLocator, LocalAddress]


class SessionState(str, enum.Enum):
    ACTIVE = "Active"
    INTERRUPTED = "Interrupted"
    DELEGATED = "Delegated"
    REESTABLISHING = "Reestablishing"
    CLOSED = "Closed"

    def __str__(self) -> str:
        return self.value


S = SessionState
TRANSITIONS: dict[SessionState, frozenset] = {
    S.ACTIVE: frozenset({S.INTERRUPTED, S.DELEGATED, S.CLOSED}),
    S.INTERRUPTED: frozenset({S.REESTABLISHING}),
    S.REESTABLISHING: frozenset({S.ACTIVE, S.INTERRUPTED}),
    S.DELEGATED: frozenset({S.ACTIVE, S.INTERRUPTED}),
    S.CLOSED: frozenset(),
}


@dataclass
class NodeParams:
    resume_timeout: int = 30
    lookup_ttl: int = 50
    rtx_interval: int = 20
    rtx_max: int = 5
    policy: str = "lazy"
    mtu: int = 1500
    handshake_timeout: int = 5
    max_resume_attempts: int = 8
    send_queue_limit: int = 1024
    reorder_limit: int = 256
    history_limit: int = 4096
    delegate_buffer_limit: int = vnl.DELEGATE_BUFFER_LIMIT


# -- attachment and role variants ------------------------------------------------

@dataclass(frozen=True)
class Detached:
    pass


@dataclass(frozen=True)
class Attached:
    en: str
    addr: Optional[LocalAddress] = None


@dataclass(frozen=True)
class InTransit:
    dest_en: str
    arrive_at: int


@dataclass(frozen=True)
class Plain:
    pass


@dataclass
class DelegateFor:
    principal: NodeId
    state: vnl.DelegationState


@dataclass(frozen=True)
class Delegating:
    delegate: NodeId
    delegate_en: str
    lease_end: Optional[int] = None


@dataclass
class Departure:
    delegate: NodeId
    dest_en: str
    arrive_at: int
    deadline: int
    snapshots: tuple[SessionSnapshot, ...]
    lease_end: Optional[int] = None


# -- sessions -------------------------------------------------------------------------

@dataclass
class Rtx:
    tries: int
    deadline: int


@dataclass
class Session:
    sid: str
    peer: NodeId
    next_seq_out: int = 0
    next_seq_in: int = 0
    state: SessionState = S.ACTIVE
    peer_hint: Optional[Where] = None
    # sent payloads kept for retransmission and for rewinding on Resume
    sent: dict[int, bytes] = field(default_factory=dict)
    acked_upto: int = 0
    rtx: dict[int, Rtx] = field(default_factory=dict)
    sendq: deque = field(default_factory=deque)
    reorder: dict[int, bytes] = field(default_factory=dict)
    resume_attempts: int = 0
    on_transition: Optional[Callable] = field(default=None, repr=False, compare=False)

    def transition(self, new: SessionState, t: int) -> None:
        if new not in TRANSITIONS[self.state]:
            raise InvalidTransitionError(f"session {self.sid}: {self.state} -> {new} is not allowed")
        old, self.state = self.state, new
        if self.on_transition is not None:
            self.on_transition(self, old, new, t)

    def snapshot(self) -> SessionSnapshot:
        return SessionSnapshot(self.sid, self.peer, self.next_seq_out, self.next_seq_in)


@dataclass
class TceState:
    pending_lookups: dict[NodeId, int] = field(default_factory=dict)
    resume_timers: dict[str, int] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=lambda: {"edge": 0, "core": 0, "data": 0})
    awaiting_map: dict[NodeId, int] = field(default_factory=dict)  # peer -> reply deadline
    map_retries: dict[NodeId, int] = field(default_factory=dict)
    resync: set = field(default_factory=set)  # Active sessions whose Resume went unanswered
    sync_deadline: Optional[int] = None


def message_class(dst) -> str:
    if isinstance(dst, LcsEp):
        return "core"
    if isinstance(dst, LsEp):
        return "edge"
    return "data"


TraceFn = Callable[..., None]


def _null_trace(t, *fields):
    pass


class MobileNode:
    """One NetInf mobile node with its TCE and virtual node layer."""

    def __init__(
        self,
        node_id: NodeId,
        label: str = "",
        vnl_capable: bool = True,
        host_ar: Optional[ArId] = None,
        params: Optional[NodeParams] = None,
        trace: TraceFn = _null_trace,
        sites: Optional[tunnel.SiteRegistry] = None,
    ):
        self.id = node_id
        self.label = label or node_id.id8
        self.vnl_capable = vnl_capable
        self.host_ar = host_ar or ArId("host", self.label)
        self.params = params or NodeParams()
        self.sites = sites or tunnel.SiteRegistry()
        self._trace = trace
        self.attachment: Union[Detached, Attached, InTransit] = Detached()
        self.sessions: dict[str, Session] = {}
        self.role: Union[Plain, DelegateFor, Delegating] = Plain()
        self.tce = TceState()
        self.departure: Optional[Departure] = None
        self.expect_peer = False
        self.delivered: dict[str, list[bytes]] = {}
        self.transitions: list[tuple[int, str, SessionState, SessionState]] = []
        self.stats = {
            "delegations": 0,
            "delegate_losses": 0,
            "buffer_overflows": 0,
            "send_queue_full": 0,
            "reorder_overflows": 0,
            "mtu_exceeded": 0,
            "rendezvous_hits": 0,
            "rendezvous_timeouts": 0,
            "resume_giveups": 0,
        }

    # -- tracing ------------------------------------------------------------------------

    def log(self, t: int, event: str, *fields) -> None:
        self._trace(t, f"mn:{self.id.id8}", event, *fields)

    def vnl_trace(self, t: int, event: str, principal: NodeId, delegate: NodeId, *fields) -> None:
        self._trace(t, "vnl", event, f"principal={principal.id8}", f"delegate={delegate.id8}", *fields)

    def _on_transition(self, sess: Session, old, new, t: int) -> None:
        self.transitions.append((t, sess.sid, old, new))
        self.log(t, "state", f"sid={sess.sid}", f"{old}->{new}")

    # -- helpers ----------------------------------------------------------------------------

    @property
    def departing(self) -> bool:
        return self.departure is not None

    @property
    def en(self) -> Optional[str]:
        return self.attachment.en if isinstance(self.attachment, Attached) else None

    @property
    def addr(self) -> Optional[LocalAddress]:
        return self.attachment.addr if isinstance(self.attachment, Attached) else None

    def sorted_sessions(self) -> list[Session]:
        return [self.sessions[sid] for sid in sorted(self.sessions)]

    def _emit(self, dst, body, as_node: Optional[NodeId] = None) -> Send:
        self.tce.counters[message_class(dst)] += 1
        return Send(dst, body, as_node)

    def count_outbound(self, items: list) -> list:
        """Tally sends built outside this class (the virtual node layer)."""
        for item in items:
            if isinstance(item, Send):
                self.tce.counters[message_class(item.dst)] += 1
        return items

    def _ls(self, body) -> Send:
        return self._emit(LsEp(self.en), body)

    def _core(self, body) -> Send:
        return self._emit(LCS, body)

    def _peer_ep(self, sess: Session) -> NodeEp:
        return NodeEp(sess.peer, where_en(sess.peer_hint))

    def _can_send(self, sess: Session) -> bool:
        return (
            sess.state is S.ACTIVE
            and self.addr is not None
            and not self.departing
            and sess.peer_hint is not None
        )

    def _needs_resume(self, sess: Session) -> bool:
        return sess.state in (S.INTERRUPTED, S.REESTABLISHING)

    # -- session bootstrap ------------------------------------------------------------------

    def open_session(self, sid: str, peer: NodeId, hint: Optional[Where], t: int) -> Session:
        if sid in self.sessions:
            raise ProtocolError(f"session {sid} already exists on {self.label}")
        sess = Session(sid, peer, peer_hint=hint, on_transition=self._on_transition)
        self.sessions[sid] = sess
        self.delivered[sid] = []
        self.log(t, "open", f"sid={sid}", f"peer={peer.id8}")
        return sess

    def close_session(self, sid: str, t: int) -> None:
        sess = self.sessions.get(sid)
        if sess is None:
            raise InvalidStateError(f"no session {sid}")
        sess.transition(S.CLOSED, t)
        sess.sendq.clear()
        sess.rtx.clear()

    # -- attach / announce -----------------------------------------------------------------------

    def attach(self, en: str, t: int) -> list:
        out: list = []
        if self.departing:
            out += self._leave(t, self.departure.dest_en, self.departure.arrive_at, delegate=None)
        att = self.attachment
        if isinstance(att, Attached):
            raise ProtocolError(f"{self.label} attaching to {en} while attached to {att.en}")
        if isinstance(att, InTransit) and t < att.arrive_at:
            raise ProtocolError(f"{self.label} attaching at t={t} before arrival at {att.arrive_at}")
        self.attachment = Attached(en)
        self.log(t, "attach", f"en={en}")
        out.append(self._ls(AddressRequest(self.id)))
        return out

    def bootstrap_attach(self, addr: LocalAddress, t: int) -> None:
        """Home attachment set up before the run starts; sends nothing."""
        self.attachment = Attached(addr.en, addr)

    def announce(self, t: int, queries: bool = True) -> list:
        """Register locally, update the core, then look for every peer to resume."""
        out = [self._ls(Register(self.id, self.addr))]
        correspondents: tuple = ()
        if self.params.policy == "eager":
            correspondents = tuple(sorted({s.peer for s in self.sessions.values() if s.state is not S.CLOSED}))
        out.append(self._core(AttachUpdate(self.id, self.en, correspondents)))
        if not queries:
            return out
        peers = sorted({s.peer for s in self.sessions.values() if self._needs_resume(s)})
        for peer in peers:
            if self.expect_peer:
                out += self.rendezvous_lookup(peer, self.params.lookup_ttl, t)
                out.append(self._watchdog(peer, t + self.params.lookup_ttl + self.params.resume_timeout))
            else:
                out.append(self._ls(CacheQuery(self.id, peer)))
                out.append(self._watchdog(peer, t + self.params.resume_timeout))
        return out

    # -- resumption paths --------------------------------------------------------------------------

    def resume_session(self, sid: str, where: Optional[Where], t: int) -> list:
        sess = self.sessions.get(sid)
        if sess is None:
            raise InvalidStateError(f"no session {sid}")
        if sess.state in (S.CLOSED, S.DELEGATED):
            raise InvalidStateError(f"cannot resume session {sid} in state {sess.state}")
        if sess.state is S.INTERRUPTED:
            sess.transition(S.REESTABLISHING, t)
        if where is not None:
            sess.peer_hint = where
        sess.resume_attempts += 1
        deadline = t + self.params.resume_timeout
        self.tce.resume_timers[sid] = deadline
        body = Resume(sid, self.id, sess.next_seq_in, self.addr)
        return [self._emit(self._peer_ep(sess), body), Timer(deadline, ("resume", sid))]

    def rendezvous_lookup(self, peer: NodeId, ttl: int, t: int) -> list:
        if not isinstance(self.attachment, Attached):
            raise NotAttachedError(f"{self.label} is not attached")
        if ttl <= 0:
            raise BadTtlError(f"lookup ttl must be positive, got {ttl}")
        self.tce.pending_lookups[peer] = t + ttl
        return [self._ls(LookupRequest(self.id, peer, ttl))]

    def _core_lookup(self, peer: NodeId, t: int) -> list:
        if peer in self.tce.awaiting_map:
            return []
        deadline = t + self.params.resume_timeout
        self.tce.awaiting_map[peer] = deadline
        return [self._core(MapRequest(self.id, peer, t)), Timer(deadline, ("map-timeout", peer))]

    def _watchdog(self, peer: NodeId, at: int) -> Timer:
        """Fallback to the core if the local query for ``peer`` never gets answered."""
        return Timer(at, ("query", peer))

    def _resume_peer(self, peer: NodeId, where: Where, t: int, resync_active: bool = False) -> list:
        out: list = []
        for sess in self.sorted_sessions():
            if sess.peer != peer:
                continue
            if self._needs_resume(sess) or (resync_active and sess.sid in self.tce.resync):
                self.tce.resync.discard(sess.sid)
                out += self.resume_session(sess.sid, where, t)
            elif sess.state is S.ACTIVE and sess.peer_hint is None:
                sess.peer_hint = where
                out += self.flush(sess, t)
        return out

    # -- detach / delegation handshake ------------------------------------------------------------------

    def detach(
        self,
        t: int,
        delegate: bool,
        dest_en: str,
        arrive_at: int,
        candidates: list[tuple[NodeId, bool]] = (),
        expect_peer: bool = False,
    ) -> list:
        if not isinstance(self.attachment, Attached) or self.departing:
            raise ProtocolError(f"{self.label} cannot detach from state {self.attachment}")
        out: list = []
        if isinstance(self.role, DelegateFor):
            out += self.count_outbound(vnl.drop_delegation(self, t, reason="delegate-departed"))
        self.expect_peer = expect_peer
        chosen = None
        if delegate:
            chosen = vnl.select_delegate((n, ok) for n, ok in candidates if n != self.id)
            if chosen is None:
                self.log(t, "warning", "no-delegate-available")
        if chosen is None:
            return out + self._leave(t, dest_en, arrive_at, delegate=None)
        snaps = tuple(s.snapshot() for s in self.sorted_sessions() if s.state is S.ACTIVE)
        deadline = t + self.params.handshake_timeout
        # the delegate's binding must lapse before a lost sync lets us register elsewhere
        lease_end = arrive_at + 2 * self.params.resume_timeout
        self.departure = Departure(chosen, dest_en, arrive_at, deadline, snaps, lease_end)
        req = DelegateRequest(self.id, self.en, dest_en, snaps, lease_end)
        out.append(self._emit(NodeEp(chosen, self.en), req))
        out.append(Timer(deadline, ("depart",)))
        return out

    def _leave(self, t: int, dest_en: str, arrive_at: int, delegate: Optional[NodeId]) -> list:
        delegated = set()
        if delegate is not None and self.departure is not None:
            delegated = {s.sid for s in self.departure.snapshots}
        for sess in self.sorted_sessions():
            if sess.sid in delegated and sess.state is S.ACTIVE:
                sess.transition(S.DELEGATED, t)
            elif sess.state in (S.ACTIVE, S.REESTABLISHING):
                sess.transition(S.INTERRUPTED, t)
            sess.rtx.clear()
        self.tce.resume_timers.clear()
        self.tce.pending_lookups.clear()
        self.tce.awaiting_map.clear()
        self.tce.map_retries.clear()
        self.tce.resync.clear()
        out = [self._ls(Deregister(self.id))]
        if delegate is not None:
            self.role = Delegating(delegate, self.en, self.departure.lease_end if self.departure else None)
        self.departure = None
        self.log(t, "detach", f"from={self.en}", f"to={dest_en}", f"arrive={arrive_at}",
                 f"delegate={delegate.id8 if delegate else '-'}")
        self.attachment = InTransit(dest_en, arrive_at)
        return out

    # -- application traffic ------------------------------------------------------------------------------

    def send_data(self, sid: str, payload: bytes, t: int) -> list:
        sess = self.sessions.get(sid)
        if sess is None or sess.state is S.CLOSED:
            raise InvalidStateError(f"cannot send on session {sid}")
        if self._can_send(sess) and not sess.sendq:
            return self._transmit(sess, payload, t)
        if len(sess.sendq) >= self.params.send_queue_limit:
            self.stats["send_queue_full"] += 1
            raise SendQueueFullError(f"session {sid} send queue holds {len(sess.sendq)} payloads")
        sess.sendq.append(payload)
        out: list = []
        if sess.state is S.ACTIVE and sess.peer_hint is None and self.addr is not None:
            out += self._core_lookup(sess.peer, t)
        return out

    def _transmit(self, sess: Session, payload: bytes, t: int) -> list:
        seq = sess.next_seq_out
        sess.next_seq_out += 1
        sess.sent[seq] = payload
        return self._send_seq(sess, seq, t)

    def _send_seq(self, sess: Session, seq: int, t: int, tries: int = 1) -> list:
        deadline = t + self.params.rtx_interval
        sess.rtx[seq] = Rtx(tries, deadline)
        body = Data(sess.sid, seq, sess.sent[seq], self.id)
        return [self._emit(self._peer_ep(sess), body), Timer(deadline, ("rtx", sess.sid, seq))]

    def flush(self, sess: Session, t: int) -> list:
        out: list = []
        while sess.sendq and self._can_send(sess):
            out += self._transmit(sess, sess.sendq.popleft(), t)
        return out

    def _rewind(self, sess: Session, next_in: int, t: int) -> list:
        """Peer reports it holds everything below ``next_in``; resend the rest."""
        next_in = max(0, min(next_in, sess.next_seq_out))
        if sess.sent and next_in < min(sess.sent):
            self.log(t, "history-gap", f"sid={sess.sid}", f"need={next_in}", f"have={min(sess.sent)}")
        sess.acked_upto = next_in
        for seq in [s for s in sess.sent if s < next_in]:
            del sess.sent[seq]
        sess.rtx.clear()
        out: list = []
        if self._can_send(sess):
            for seq in sorted(sess.sent):
                out += self._send_seq(sess, seq, t)
        return out + self.flush(sess, t)

    def accept_in_order(self, sess: Session, seq: int, payload: bytes, t: int) -> None:
        self.delivered[sess.sid].append(payload)
        sess.next_seq_in = seq + 1
        self.log(t, "deliver", f"sid={sess.sid}", f"seq={seq}")
        while sess.next_seq_in in sess.reorder:
            nxt = sess.next_seq_in
            self.delivered[sess.sid].append(sess.reorder.pop(nxt))
            sess.next_seq_in = nxt + 1
            self.log(t, "deliver", f"sid={sess.sid}", f"seq={nxt}")

    # -- non-NetInf egress ------------------------------------------------------------------------------------

    def own_locator(self) -> GlobalLocator:
        return GlobalLocator((ArId("edge", self.en), self.host_ar))

    def egress(self, dst: str, payload: bytes, t: int) -> list:
        if self.addr is None or self.departing:
            raise NotAttachedError(f"{self.label} cannot reach {dst} while detached")
        if self.sites.is_netinf_site(dst):
            return [self._emit(ExtEp(dst), NativePacket(payload, dst, self.id))]
        try:
            pkt = tunnel.encapsulate(payload, self.own_locator(), self.params.mtu, self.id, dst)
        except MtuExceededError as exc:
            self.stats["mtu_exceeded"] += 1
            self.log(t, "error", "MtuExceeded", f"needed={exc.needed}", f"mtu={exc.mtu}", f"dst={dst}")
            return []
        self.log(t, "encapsulate", f"dst={dst}", f"bytes={pkt.total_size}")
        return [self._emit(ExtEp(dst), TunnelPacket(pkt.wire, pkt.outer, dst))]

    # -- dispatch -----------------------------------------------------------------------------------------------

    def handle_message(self, msg: Message, t: int) -> list:
        body = msg.body
        if isinstance(msg.dst, NodeEp) and msg.dst.node != self.id:
            return self.count_outbound(vnl.proxy_handle(self, msg, t))
        if isinstance(self.attachment, InTransit):
            raise ProtocolError(f"{self.label} received {body.kind} while in transit")
        if self.departing and not isinstance(body, (DelegateAck, DelegateReject)):
            self.log(t, "ignored-departing", body.kind)
            return []
        handler = self._HANDLERS.get(type(body))
        if handler is None:
            raise ProtocolError(f"{self.label} cannot handle {body.kind}")
        return handler(self, msg, t)

    def _on_address_grant(self, msg: Message, t: int) -> list:
        body: AddressGrant = msg.body
        att = self.attachment
        if not isinstance(att, Attached) or att.addr is not None:
            self.log(t, "grant-ignored", f"addr={body.addr}")
            return []
        self.attachment = Attached(att.en, body.addr)
        if isinstance(self.role, Delegating):
            return self.count_outbound(vnl.sync(self, t))
        return self.announce(t)

    def _on_register_ack(self, msg: Message, t: int) -> list:
        return []

    def _on_cache_response(self, msg: Message, t: int) -> list:
        body: CacheResponse = msg.body
        if body.hit:
            self.log(t, "cache-hit", f"target={body.target.id8}", f"where={body.where}", f"age={body.age}")
            return self._resume_peer(body.target, body.where, t)
        self.log(t, "cache-miss", f"target={body.target.id8}")
        return self._core_lookup(body.target, t)

    def _on_lookup_response(self, msg: Message, t: int) -> list:
        body: LookupResponse = msg.body
        if self.tce.pending_lookups.pop(body.target, None) is not None:
            self.stats["rendezvous_hits"] += 1
        self.log(t, "rendezvous-hit", f"target={body.target.id8}", f"addr={body.addr}")
        return self._resume_peer(body.target, body.addr, t)

    def _on_lookup_expired(self, msg: Message, t: int) -> list:
        body: LookupExpired = msg.body
        self.tce.pending_lookups.pop(body.target, None)
        self.stats["rendezvous_timeouts"] += 1
        self.log(t, "rendezvous-timeout", f"target={body.target.id8}")
        if not any(s.peer == body.target and self._needs_resume(s) for s in self.sessions.values()):
            return []
        return self._core_lookup(body.target, t)

    def _on_map_reply(self, msg: Message, t: int) -> list:
        body: MapReply = msg.body
        self.tce.awaiting_map.pop(body.target, None)
        if body.locator is None:
            tries = self.tce.map_retries.get(body.target, 0) + 1
            self.tce.map_retries[body.target] = tries
            self.log(t, "map-notfound", f"target={body.target.id8}", f"try={tries}")
            if tries >= self.params.max_resume_attempts:
                return []
            return [Timer(t + self.params.resume_timeout, ("map-retry", body.target))]
        self.tce.map_retries.pop(body.target, None)
        out: list = []
        if self.addr is not None:
            out.append(self._ls(CacheStore(body.target, body.locator)))
        return out + self._resume_peer(body.target, body.locator, t, resync_active=True)

    def _on_locator_push(self, msg: Message, t: int) -> list:
        body: LocatorPush = msg.body
        out: list = []
        for sess in self.sorted_sessions():
            if sess.peer == body.node and sess.state is not S.CLOSED:
                sess.peer_hint = body.locator
                self.log(t, "locator-push", f"sid={sess.sid}", f"locator={body.locator}")
        return out

    def _session_for(self, msg: Message, sid: str, peer: NodeId):
        sess = self.sessions.get(sid)
        if sess is None or sess.peer != peer or sess.state is S.CLOSED:
            return None
        return sess

    def _reject(self, msg: Message, sid: str, peer: NodeId, reason: str, t: int) -> list:
        self.log(t, "reject", f"sid={sid}", f"reason={reason}")
        return [self._emit(NodeEp(peer, msg.origin), Reject(sid, reason))]

    def _on_resume(self, msg: Message, t: int) -> list:
        body: Resume = msg.body
        sess = self._session_for(msg, body.sid, body.node)
        if sess is None:
            return self._reject(msg, body.sid, body.node, "unknown-session", t)
        if sess.state is S.DELEGATED:
            raise ProtocolError(f"delegated session {sess.sid} reached its principal")
        if body.addr is not None:
            sess.peer_hint = body.addr
        if sess.state is S.INTERRUPTED:
            sess.transition(S.REESTABLISHING, t)
        if sess.state is S.REESTABLISHING:
            sess.transition(S.ACTIVE, t)
        self.tce.resume_timers.pop(sess.sid, None)
        sess.resume_attempts = 0
        ack = ResumeAck(sess.sid, self.id, sess.next_seq_in, self.addr)
        out = [self._emit(NodeEp(body.node, where_en(body.addr) or msg.origin), ack)]
        return out + self._rewind(sess, body.next_seq_in, t)

    def _on_resume_ack(self, msg: Message, t: int) -> list:
        body: ResumeAck = msg.body
        sess = self._session_for(msg, body.sid, body.node)
        if sess is None:
            return []
        if body.addr is not None:
            sess.peer_hint = body.addr
        if sess.state is S.INTERRUPTED:
            sess.transition(S.REESTABLISHING, t)
        if sess.state is S.REESTABLISHING:
            sess.transition(S.ACTIVE, t)
        self.tce.resume_timers.pop(sess.sid, None)
        sess.resume_attempts = 0
        return self._rewind(sess, body.next_seq_in, t)

    def _on_data(self, msg: Message, t: int) -> list:
        body: Data = msg.body
        sess = self._session_for(msg, body.sid, body.src_node)
        if sess is None:
            return self._reject(msg, body.sid, body.src_node, "unknown-session", t)
        if body.seq == sess.next_seq_in:
            self.accept_in_order(sess, body.seq, body.payload, t)
        elif body.seq > sess.next_seq_in and body.seq not in sess.reorder:
            if len(sess.reorder) >= self.params.reorder_limit:
                self.stats["reorder_overflows"] += 1
                self.log(t, "error", "ReorderBufferFull", f"sid={sess.sid}", f"seq={body.seq}")
                return []
            sess.reorder[body.seq] = body.payload
            self.log(t, "hold", f"sid={sess.sid}", f"seq={body.seq}")
        ack = DataAck(sess.sid, sess.next_seq_in, self.id)
        return [self._emit(NodeEp(body.src_node, msg.origin), ack)]

    def _on_data_ack(self, msg: Message, t: int) -> list:
        body: DataAck = msg.body
        sess = self._session_for(msg, body.sid, body.src_node)
        if sess is None:
            return []
        ack = min(body.ack, sess.next_seq_out)
        if ack > sess.acked_upto:
            for seq in [s for s in sess.rtx if s < ack]:
                del sess.rtx[seq]
            sess.acked_upto = ack
            floor = ack - self.params.history_limit
            for seq in [s for s in sess.sent if s < floor]:
                del sess.sent[seq]
        return []

    def _on_reject(self, msg: Message, t: int) -> list:
        body: Reject = msg.body
        self.log(t, "rejected", f"sid={body.sid}", f"reason={body.reason}")
        return []

    def _on_delegate_request(self, msg: Message, t: int) -> list:
        reply = vnl.accept_delegation(self, msg.body, t)
        if isinstance(reply, DelegateReject):
            self.log(t, "delegate-reject", f"principal={reply.principal.id8}", f"reason={reply.reason}")
        return self.count_outbound(vnl.delegation_outbound(self, reply))

    def _on_delegate_reply(self, msg: Message, t: int) -> list:
        body = msg.body
        dep = self.departure
        if dep is None or body.delegate != dep.delegate:
            self.log(t, "delegate-reply-ignored", body.kind)
            return []
        if isinstance(body, DelegateAck):
            return self._leave(t, dep.dest_en, dep.arrive_at, delegate=dep.delegate)
        self.log(t, "warning", "delegation-refused", f"reason={body.reason}")
        return self._leave(t, dep.dest_en, dep.arrive_at, delegate=None)

    def _on_sync_request(self, msg: Message, t: int) -> list:
        return self.count_outbound(vnl.sync_reply(self, msg.body, msg, t))

    def _on_sync_reply(self, msg: Message, t: int) -> list:
        return vnl.apply_sync(self, msg.body, t)

    _HANDLERS = {
        AddressGrant: _on_address_grant,
        RegisterAck: _on_register_ack,
        CacheResponse: _on_cache_response,
        LookupResponse: _on_lookup_response,
        LookupExpired: _on_lookup_expired,
        MapReply: _on_map_reply,
        LocatorPush: _on_locator_push,
        Resume: _on_resume,
        ResumeAck: _on_resume_ack,
        Data: _on_data,
        DataAck: _on_data_ack,
        Reject: _on_reject,
        DelegateRequest: _on_delegate_request,
        DelegateAck: _on_delegate_reply,
        DelegateReject: _on_delegate_reply,
        SyncRequest: _on_sync_request,
        SyncReply: _on_sync_reply,
    }

    # -- timers -----------------------------------------------------------------------------------------------------

    def on_timer(self, tag: tuple, t: int) -> list:
        kind = tag[0]
        if kind == "rtx":
            return self._rtx_fire(tag[1], tag[2], t)
        if kind == "resume":
            return self._resume_fire(tag[1], t)
        if kind == "map-retry":
            if self.addr is None or self.departing:
                return []
            peer = tag[1]
            if not any(s.peer == peer and self._needs_resume(s) for s in self.sessions.values()):
                return []
            return self._core_lookup(peer, t)
        if kind == "map-timeout":
            return self._map_timeout_fire(tag[1], t)
        if kind == "query":
            return self._query_fire(tag[1], t)
        if kind == "depart":
            dep = self.departure
            if dep is None or dep.deadline != t:
                return []
            self.log(t, "warning", "delegation-handshake-timeout")
            return self._leave(t, dep.dest_en, dep.arrive_at, delegate=None)
        if kind == "sync":
            return self._sync_fire(t)
        if kind == "lease":
            role = self.role
            if isinstance(role, DelegateFor) and role.principal == tag[1] and role.state.lease_end == t:
                return self.count_outbound(vnl.drop_delegation(self, t, reason="lease-expired"))
            return []
        raise ProtocolError(f"unknown timer {tag!r}")

    def _rtx_fire(self, sid: str, seq: int, t: int) -> list:
        sess = self.sessions.get(sid)
        if sess is None:
            return []
        entry = sess.rtx.get(seq)
        if entry is None or entry.deadline != t:
            return []
        if seq < sess.acked_upto or not self._can_send(sess):
            del sess.rtx[seq]
            return []
        if entry.tries >= self.params.rtx_max:
            sess.rtx.clear()
            self.log(t, "rtx-exhausted", f"sid={sid}", f"seq={seq}")
            sess.transition(S.INTERRUPTED, t)
            return self._core_lookup(sess.peer, t)
        self.log(t, "retransmit", f"sid={sid}", f"seq={seq}", f"try={entry.tries + 1}")
        return self._send_seq(sess, seq, t, entry.tries + 1)

    def _resume_fire(self, sid: str, t: int) -> list:
        if self.tce.resume_timers.get(sid) != t:
            return []
        del self.tce.resume_timers[sid]
        sess = self.sessions.get(sid)
        if sess is None or sess.state not in (S.REESTABLISHING, S.ACTIVE) or self.addr is None:
            return []
        if sess.resume_attempts >= self.params.max_resume_attempts:
            self.stats["resume_giveups"] += 1
            self.log(t, "resume-giveup", f"sid={sid}")
            if sess.state is S.REESTABLISHING:
                sess.transition(S.INTERRUPTED, t)
            return []
        self.log(t, "resume-timeout", f"sid={sid}")
        if sess.state is S.ACTIVE:
            # resumed after a sync and never heard back; look the peer up again
            self.tce.resync.add(sid)
        return self._core_lookup(sess.peer, t)

    def _map_timeout_fire(self, peer: NodeId, t: int) -> list:
        if self.tce.awaiting_map.get(peer) != t:
            return []
        del self.tce.awaiting_map[peer]
        tries = self.tce.map_retries.get(peer, 0) + 1
        self.tce.map_retries[peer] = tries
        self.log(t, "map-timeout", f"target={peer.id8}", f"try={tries}")
        if tries >= self.params.max_resume_attempts or self.addr is None or self.departing:
            return []
        stuck = any(s.peer == peer and (self._needs_resume(s) or s.sid in self.tce.resync)
                    for s in self.sessions.values())
        return self._core_lookup(peer, t) if stuck else []

    def _query_fire(self, peer: NodeId, t: int) -> list:
        if self.addr is None or self.departing or peer in self.tce.awaiting_map:
            return []
        if self.tce.pending_lookups.get(peer, t) > t:
            return []
        waiting = [s for s in self.sessions.values() if s.peer == peer and self._needs_resume(s)]
        if not waiting or any(s.sid in self.tce.resume_timers for s in waiting):
            return []
        self.tce.pending_lookups.pop(peer, None)
        self.log(t, "query-timeout", f"target={peer.id8}")
        return self._core_lookup(peer, t)

    def _sync_fire(self, t: int) -> list:
        if self.tce.sync_deadline != t or not isinstance(self.role, Delegating):
            return []
        self.tce.sync_deadline = None
        lease_end = self.role.lease_end
        if lease_end is not None and t < lease_end:
            self.log(t, "sync-retry", f"delegate={self.role.delegate.id8}")
            return self.count_outbound(vnl.sync(self, t))
        return self.delegate_lost(t, "sync-timeout")

    def delegate_lost(self, t: int, reason: str) -> list:
        """Give up on the delegate: interrupt what it held and look peers up afresh."""
        self.tce.sync_deadline = None
        role = self.role
        self.stats["delegate_losses"] += 1
        self.vnl_trace(t, "DelegateLost", self.id, role.delegate, f"reason={reason}")
        self.role = Plain()
        for sess in self.sorted_sessions():
            if sess.state is S.DELEGATED:
                sess.transition(S.INTERRUPTED, t)
        return self.announce(t)
