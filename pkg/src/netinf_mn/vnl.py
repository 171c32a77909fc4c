"""Virtual node layer.

A departing node hands its sessions to a local peer, which then answers for
the departed node's identity: it acknowledges and buffers the data arriving
for it, and hands everything over when the real node reaches its new edge
network and asks for a sync.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional

from netinf_mn.ids import NodeId
from netinf_mn.messages import (
    BindProxy,
    BufferedData,
    Data,
    DataAck,
    DelegateAck,
    DelegateReject,
    DelegateRequest,
    LsEp,
    Message,
    NodeEp,
    Send,
    SessionSnapshot,
    SyncReply,
    SyncRequest,
    Timer,
    Unbind,
)

if TYPE_CHECKING:
    from netinf_mn.node import MobileNode

DELEGATE_BUFFER_LIMIT = 4096

__all__ = [
    "DelegationState",
    "SessionSnapshot",
    "accept_delegation",
    "apply_sync",
    "drop_delegation",
    "proxy_handle",
    "select_delegate",
    "sync",
    "sync_reply",
]


@dataclass
class DelegationState:
    principal: NodeId
    dest_en: str
    sessions: dict[str, SessionSnapshot]
    started_at: int
    buffer: list[BufferedData] = field(default_factory=list)
    held: dict[tuple[str, int], bytes] = field(default_factory=dict)
    released: bool = False
    limit: int = DELEGATE_BUFFER_LIMIT
    lease_end: Optional[int] = None

    def is_empty(self) -> bool:
        return not self.buffer and not self.held and not self.sessions


def select_delegate(candidates: Iterable[tuple[NodeId, bool]]) -> Optional[NodeId]:
    """Lowest capable NodeId, or None."""
    capable = [node for node, ok in candidates if ok]
    return min(capable) if capable else None


def accept_delegation(delegate: "MobileNode", req: DelegateRequest, t: int):
    from netinf_mn.node import Attached, DelegateFor, Plain

    if not isinstance(delegate.role, Plain):
        return DelegateReject(req.principal, delegate.id, "Busy")
    att = delegate.attachment
    if not isinstance(att, Attached) or att.en != req.origin_en or att.addr is None or delegate.departing:
        return DelegateReject(req.principal, delegate.id, "NotLocal")
    state = DelegationState(
        principal=req.principal,
        dest_en=req.dest_en,
        sessions={s.sid: s for s in req.sessions},
        started_at=t,
        limit=delegate.params.delegate_buffer_limit,
        lease_end=req.lease_end,
    )
    delegate.role = DelegateFor(req.principal, state)
    delegate.stats["delegations"] += 1
    delegate.vnl_trace(t, "DelegateStart", req.principal, delegate.id, f"sessions={len(req.sessions)}")
    return DelegateAck(req.principal, delegate.id)


def delegation_outbound(delegate: "MobileNode", reply) -> list:
    """Messages that carry an accept/reject decision back to the principal."""
    en = delegate.attachment.en
    out: list = []
    if isinstance(reply, DelegateAck):
        lease_end = delegate.role.state.lease_end
        out.append(Send(LsEp(en), BindProxy(reply.principal, delegate.id, lease_end)))
        if lease_end is not None:
            out.append(Timer(lease_end, ("lease", reply.principal)))
    out.append(Send(NodeEp(reply.principal, en), reply))
    return out


def proxy_handle(delegate: "MobileNode", msg: Message, t: int) -> list:
    from netinf_mn.node import DelegateFor

    role = delegate.role
    target = msg.dst.node if isinstance(msg.dst, NodeEp) else None
    if not isinstance(role, DelegateFor) or target != role.principal:
        delegate.log(t, "proxy-ignored", msg.body.kind, f"for={target.id8 if target else '-'}")
        return []
    state = role.state
    body = msg.body
    if not isinstance(body, Data):
        # the virtual node captures data only; control traffic waits for the real node
        delegate.log(t, "proxy-ignored", body.kind, f"for={target.id8}")
        return []
    snap = state.sessions.get(body.sid)
    if snap is None:
        delegate.log(t, "proxy-ignored", "Data", f"sid={body.sid}")
        return []
    expected = snap.next_seq_in
    if body.seq >= expected:
        if len(state.buffer) + len(state.held) >= state.limit:
            delegate.stats["buffer_overflows"] += 1
            delegate.vnl_trace(t, "BufferOverflow", state.principal, delegate.id, f"sid={body.sid} seq={body.seq}")
            return []
        if body.seq == expected:
            state.buffer.append(BufferedData(body.sid, body.seq, body.payload))
            expected += 1
            while (body.sid, expected) in state.held:
                state.buffer.append(BufferedData(body.sid, expected, state.held.pop((body.sid, expected))))
                expected += 1
            state.sessions[body.sid] = SessionSnapshot(snap.sid, snap.peer, snap.next_seq_out, expected)
            delegate.vnl_trace(t, "ProxyData", state.principal, delegate.id, f"sid={body.sid} seq={body.seq}")
        else:
            state.held[(body.sid, body.seq)] = body.payload
    ack = DataAck(body.sid, expected, state.principal)
    return [Send(NodeEp(body.src_node, msg.origin), ack, as_node=state.principal)]


def sync(principal: "MobileNode", t: int) -> list:
    """Ask the delegate for everything it captured.

    The timer re-asks until the delegate's lease runs out; only then does the
    principal give up on it.
    """
    from netinf_mn.node import Delegating

    role = principal.role
    assert isinstance(role, Delegating)
    if role.lease_end is not None and t >= role.lease_end:
        return principal.delegate_lost(t, "lease-over")
    deadline = t + principal.params.resume_timeout
    if role.lease_end is not None:
        deadline = min(deadline, role.lease_end)
    principal.tce.sync_deadline = deadline
    return [
        Send(NodeEp(role.delegate, role.delegate_en), SyncRequest(principal.id)),
        Timer(deadline, ("sync",)),
    ]


def sync_reply(delegate: "MobileNode", req: SyncRequest, msg: Message, t: int) -> list:
    """Delegate side: hand over the buffer, release the binding, drop all state."""
    from netinf_mn.node import DelegateFor, Plain

    role = delegate.role
    if not isinstance(role, DelegateFor) or role.principal != req.principal:
        delegate.log(t, "sync-ignored", f"principal={req.principal.id8}")
        return []
    state = role.state
    reply = SyncReply(
        principal=state.principal,
        delegate=delegate.id,
        sessions=tuple(state.sessions[sid] for sid in sorted(state.sessions)),
        buffer=tuple(sorted(state.buffer, key=lambda b: (b.sid, b.seq))),
    )
    state.buffer.clear()
    state.held.clear()
    state.sessions.clear()
    state.released = True
    delegate.role = Plain()
    en = delegate.attachment.en
    return [
        Send(LsEp(en), Unbind(state.principal, delegate.id)),
        Send(NodeEp(state.principal, msg.origin), reply),
    ]


def apply_sync(principal: "MobileNode", reply: SyncReply, t: int) -> list:
    """Principal side: replay buffered data, reactivate sessions, re-announce, resume."""
    from netinf_mn.node import Delegating, Plain, SessionState

    role = principal.role
    if not isinstance(role, Delegating) or role.delegate != reply.delegate:
        principal.log(t, "sync-reply-ignored", f"delegate={reply.delegate.id8}")
        return []
    principal.tce.sync_deadline = None
    for item in reply.buffer:
        sess = principal.sessions.get(item.sid)
        if sess is not None and item.seq == sess.next_seq_in:
            principal.accept_in_order(sess, item.seq, item.payload, t)
    principal.role = Plain()
    principal.vnl_trace(t, "SyncDone", principal.id, reply.delegate, f"buffered={len(reply.buffer)}")
    out = principal.announce(t, queries=False)
    for sess in principal.sorted_sessions():
        if sess.state is SessionState.DELEGATED:
            sess.transition(SessionState.ACTIVE, t)
            out += principal.resume_session(sess.sid, sess.peer_hint, t)
    for sess in principal.sorted_sessions():
        out += principal.flush(sess, t)
    return out


def drop_delegation(delegate: "MobileNode", t: int, reason: str) -> list:
    from netinf_mn.node import DelegateFor, Plain

    role = delegate.role
    if not isinstance(role, DelegateFor):
        return []
    state = role.state
    delegate.vnl_trace(t, "DelegateLost", state.principal, delegate.id, f"reason={reason}")
    state.buffer.clear()
    state.held.clear()
    state.sessions.clear()
    state.released = True
    delegate.role = Plain()
    return [Send(LsEp(delegate.attachment.en), Unbind(state.principal, delegate.id))]
