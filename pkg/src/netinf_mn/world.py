"""The simulated network: actors, routing and the event dispatcher.

Actors are mobile nodes, one local server per edge network, and the core
LCS. Actors never talk to the engine directly; they return ``Send``/``Timer``
items and the world puts them on the wire, so every message is counted in
exactly one place.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from netinf_mn import tunnel
from netinf_mn.edge import DEFAULT_CACHE_TTL, LocalServerActor
from netinf_mn.errors import NotFoundError, ProtocolError, SendQueueFullError
from netinf_mn.ids import ArId, IdRegistry, NodeId, mint_node_id
from netinf_mn.lcs import ROOT, AttachmentRegister, LcsState
from netinf_mn.messages import (
    LCS,
    AttachUpdate,
    ExtEp,
    LcsEp,
    LocatorPush,
    LsEp,
    MapReply,
    MapRequest,
    Message,
    NativePacket,
    NodeEp,
    Send,
    Timer,
    TunnelPacket,
)
from netinf_mn.node import Attached, MobileNode, NodeParams, message_class
from netinf_mn.sim import CORE, Deliver, Engine, LinkModel, MobilityArrive, ScenarioAction, TimerFire, Trace

Actor = Union[MobileNode, LocalServerActor, LcsState, None]


@dataclass(frozen=True)
class ExternalDelivery:
    at: int
    dst: str
    src: NodeId
    payload: bytes
    tunnelled: bool


@dataclass
class WorldTallies:
    """Per-actor send counts, kept independently of the engine's counters."""

    by_actor: Counter = field(default_factory=Counter)
    by_kind: Counter = field(default_factory=Counter)
    lcs_handled: Counter = field(default_factory=Counter)
    locator_pushes: int = 0


class World:
    def __init__(
        self,
        seed: int = 0,
        links: Optional[LinkModel] = None,
        params: Optional[NodeParams] = None,
        cache_ttl: int = DEFAULT_CACHE_TTL,
        trace: Optional[Trace] = None,
        sites: Optional[tunnel.SiteRegistry] = None,
    ):
        self.trace = trace if trace is not None else Trace()
        self.engine = Engine(seed, links, self.trace, dispatch=self._dispatch)
        self.params = params or NodeParams()
        self.cache_ttl = cache_ttl
        self.sites = sites or tunnel.SiteRegistry()
        self.lcs = LcsState()
        self.registry = IdRegistry()
        self.servers: dict[str, LocalServerActor] = {}
        self.nodes: dict[NodeId, MobileNode] = {}
        self.labels: dict[str, NodeId] = {}
        self.external: list[ExternalDelivery] = []
        self.tallies = WorldTallies()

    # -- setup (direct, not messages) ------------------------------------------------

    @property
    def now(self) -> int:
        return self.engine.now

    def emit(self, t: int, *fields) -> None:
        self.trace.emit(t, *fields)

    def add_edge_network(self, en: str, parents: tuple[str, ...] = ()) -> LocalServerActor:
        if en in self.servers or en == CORE:
            raise ProtocolError(f"edge network {en} declared twice")
        nbrs = {ArId("edge", p) for p in parents} if parents else {ROOT}
        self.lcs.register_ar(AttachmentRegister(ArId("edge", en), owner=en, neighbors=nbrs))
        self.emit(0, "lcs", "register_ar", ArId("edge", en), f"counter={self.lcs.core_msg_counter}")
        ls = LocalServerActor(en, self.cache_ttl, trace=self.emit)
        self.servers[en] = ls
        return ls

    def add_node(self, label: str, home: str, vnl_capable: bool = True) -> MobileNode:
        if label in self.labels:
            raise ProtocolError(f"node {label} declared twice")
        ls = self.servers[home]
        nid = mint_node_id(self.registry, label.encode())
        host = ArId("host", label)
        node = MobileNode(nid, label, vnl_capable, host, self.params, trace=self.emit, sites=self.sites)
        self.lcs.register_ar(AttachmentRegister(host, owner=nid, neighbors={ArId("edge", home)}))
        addr = ls.allocate_local_address(nid)
        ls.register(nid, addr, 0)
        node.bootstrap_attach(addr, 0)
        self.nodes[nid] = node
        self.labels[label] = nid
        self.emit(0, "setup", "node", label, f"id={nid.hex}", f"home={home}", f"addr={addr}")
        self.emit(0, "lcs", "register_ar", host, f"counter={self.lcs.core_msg_counter}")
        return node

    def node(self, label: str) -> MobileNode:
        return self.nodes[self.labels[label]]

    def open_session(self, sid: str, a: str, b: str, t: int) -> None:
        na, nb = self.node(a), self.node(b)
        for me, peer in ((na, nb), (nb, na)):
            me.open_session(sid, peer.id, self._hint_for(me, peer, t), t)

    def _hint_for(self, me: MobileNode, peer: MobileNode, t: int):
        if peer.en is not None and peer.en == me.en:
            return peer.addr
        return self.lcs.construct_locator(peer.id, t)

    # -- scenario hooks ------------------------------------------------------------------

    def move(self, label: str, to_en: str, travel: int, delegate: bool, expect_peer: bool, t: int) -> None:
        node = self.node(label)
        if to_en not in self.servers:
            raise ProtocolError(f"unknown edge network {to_en}")
        here = self.servers[node.en] if node.en in self.servers else None
        candidates = []
        if here is not None:
            for nid in here.registered_nodes():
                other = self.nodes.get(nid)
                if other is not None and nid != node.id and not other.departing:
                    candidates.append((nid, other.vnl_capable))
        arrive = t + travel
        self.emit(t, "mobility", "move", label, f"to={to_en}", f"arrive={arrive}",
                  f"delegate={'yes' if delegate else 'no'}", f"expect-peer={'yes' if expect_peer else 'no'}")
        self._step(node, node.detach, t, delegate, to_en, arrive, candidates, expect_peer)
        self.engine.schedule(arrive, MobilityArrive(node.id, to_en))

    def send_app(self, label: str, sid: str, payload: bytes, t: int) -> bool:
        node = self.node(label)
        try:
            self._step(node, node.send_data, sid, payload, t)
        except SendQueueFullError as exc:
            node.log(t, "error", "SendQueueFull", f"sid={sid}", str(exc))
            return False
        return True

    def egress(self, label: str, dst: str, payload: bytes, t: int) -> None:
        node = self.node(label)
        self._step(node, node.egress, dst, payload, t)

    def set_param(self, name: str, value, t: int) -> None:
        if name == "cache_ttl":
            self.cache_ttl = value
            for ls in self.servers.values():
                ls.cache_ttl = value
        elif hasattr(self.params, name):
            setattr(self.params, name, value)
        else:
            raise ProtocolError(f"unknown parameter {name}")
        self.emit(t, "set", name, value)

    # -- fabric -----------------------------------------------------------------------------

    def _location(self, ep) -> Optional[str]:
        if isinstance(ep, (LcsEp, ExtEp)):
            return CORE
        if isinstance(ep, LsEp):
            return ep.en if ep.en in self.servers else None
        if isinstance(ep, NodeEp):
            return ep.en if ep.en in self.servers else None
        return None

    def _step(self, node: MobileNode, fn, *args) -> None:
        """Run one node step; its sends leave from where the node stood before the step."""
        before = node.en
        items = fn(*args)
        self._process(node, items, before or node.en)

    def _process(self, actor: Actor, items: list, node_origin: Optional[str] = None) -> None:
        for item in items:
            if isinstance(item, Timer):
                self.engine.schedule(item.at, TimerFire(self._owner_key(actor), item.tag))
                continue
            assert isinstance(item, Send)
            if isinstance(actor, MobileNode):
                origin = node_origin or actor.en
                if origin is None:
                    raise ProtocolError(f"{actor.label} sent {item.body.kind} while not attached")
                src = NodeEp(item.as_node or actor.id, origin)
                cls = message_class(item.dst)
            elif isinstance(actor, LocalServerActor):
                src, origin, cls = LsEp(actor.en), actor.en, "edge"
            else:
                src, origin, cls = LCS, CORE, "core"
            self.tallies.by_actor[(self._owner_key(actor), cls)] += 1
            self.tallies.by_kind[item.body.kind] += 1
            self.engine.send(src, item.dst, item.body, origin, self._location(item.dst), cls)

    def _owner_key(self, actor: Actor) -> tuple:
        if isinstance(actor, MobileNode):
            return ("mn", actor.id)
        if isinstance(actor, LocalServerActor):
            return ("ls", actor.en)
        return ("lcs",)

    def _resolve(self, msg: Message) -> tuple[Actor, str]:
        dst = msg.dst
        if isinstance(dst, LcsEp):
            return self.lcs, ""
        if isinstance(dst, LsEp):
            return self.servers.get(dst.en), "no-local-server"
        if isinstance(dst, ExtEp):
            return None, ""
        ls = self.servers.get(dst.en)
        if ls is None:
            return None, "unknown-edge-network"
        target = dst.node
        if msg.body.BOUND:
            holder = ls.resolve(target, self.engine.now)
            if holder is None:
                return None, "no-binding"
            target = holder
        node = self.nodes.get(target)
        att = node.attachment if node is not None else None
        if not isinstance(att, Attached) or att.en != dst.en:
            return None, "not-present"
        return node, ""

    def _dispatch(self, engine: Engine, kind: Any) -> None:
        t = engine.now
        if isinstance(kind, Deliver):
            msg = kind.msg
            if isinstance(msg.dst, ExtEp):
                engine.delivered(msg, msg.dst)
                self._external(msg, t)
                return
            actor, reason = self._resolve(msg)
            if actor is None:
                engine.strand(msg, reason)
                return
            if isinstance(actor, MobileNode):
                engine.delivered(msg, f"mn:{actor.id.id8}")
                self._step(actor, actor.handle_message, msg, t)
            elif isinstance(actor, LocalServerActor):
                engine.delivered(msg, f"ls:{actor.en}")
                self._process(actor, actor.handle_message(msg, t))
            else:
                engine.delivered(msg, "lcs")
                self._process(None, self._lcs_handle(msg, t))
        elif isinstance(kind, TimerFire):
            owner = kind.owner
            if owner[0] == "mn":
                node = self.nodes[owner[1]]
                self._step(node, node.on_timer, kind.tag, t)
            elif owner[0] == "ls":
                ls = self.servers[owner[1]]
                self._process(ls, ls.on_timer(kind.tag, t))
            else:
                raise ProtocolError(f"timer for unknown owner {owner!r}")
        elif isinstance(kind, MobilityArrive):
            node = self.nodes[kind.node]
            self.emit(t, "mobility", "arrive", node.label, f"en={kind.en}")
            self._step(node, node.attach, kind.en, t)
        elif isinstance(kind, ScenarioAction):
            kind.action.apply(self, t)
        else:
            raise ProtocolError(f"unknown event {kind!r}")

    # -- core ---------------------------------------------------------------------------------

    def _lcs_handle(self, msg: Message, t: int) -> list:
        body = msg.body
        if isinstance(body, AttachUpdate):
            try:
                self.lcs.update_attachment(body.node, ArId("edge", body.en), t)
            except NotFoundError:
                self.emit(t, "lcs", "update_attachment", f"node={body.node.id8}", "NotFound",
                          f"counter={self.lcs.core_msg_counter}")
                return []
            self.tallies.lcs_handled["AttachUpdate"] += 1
            self.emit(t, "lcs", "update_attachment", f"node={body.node.id8}", f"parent=ar:edge:{body.en}",
                      f"counter={self.lcs.core_msg_counter}")
            return self._eager_pushes(body, t)
        if isinstance(body, MapRequest):
            reply: MapReply = self.lcs.handle_map_request(body, t)
            self.tallies.lcs_handled["MapRequest"] += 1
            self.emit(t, "lcs", "map_request", f"target={body.target.id8}",
                      f"locator={reply.locator or 'NotFound'}", f"counter={self.lcs.core_msg_counter}")
            return [Send(NodeEp(body.requester, msg.origin), reply)]
        raise ProtocolError(f"LCS cannot handle {body.kind}")

    def _eager_pushes(self, body: AttachUpdate, t: int) -> list:
        if not body.correspondents:
            return []
        loc = self.lcs.construct_locator(body.node, t)
        out = []
        for peer in body.correspondents:
            where = self.lcs.construct_locator(peer, t)
            if loc is None or where is None:
                continue
            self.tallies.locator_pushes += 1
            out.append(Send(NodeEp(peer, where.edge_network), LocatorPush(body.node, loc)))
        return out

    # -- non-NetInf sink ---------------------------------------------------------------------------

    def _external(self, msg: Message, t: int) -> None:
        body = msg.body
        if isinstance(body, TunnelPacket):
            pkt = tunnel.EncapsulatedPacket(body.outer, body.inner_dst, body.wire)
            inner = tunnel.decapsulate(pkt)
            self.external.append(ExternalDelivery(t, body.inner_dst, inner.inner_src, inner.payload, True))
            self.emit(t, "ext", "decapsulate", f"dst={body.inner_dst}", f"src={inner.inner_src.id8}",
                      f"bytes={len(inner.payload)}")
        elif isinstance(body, NativePacket):
            self.external.append(ExternalDelivery(t, body.inner_dst, body.src_node, body.payload, False))
            self.emit(t, "ext", "native", f"dst={body.inner_dst}", f"src={body.src_node.id8}",
                      f"bytes={len(body.payload)}")
        else:
            raise ProtocolError(f"external sink cannot take {body.kind}")

    # -- accounting --------------------------------------------------------------------------------

    def reconcile(self) -> list[str]:
        """Cross-check the engine's per-class totals against the actors' own tallies."""
        problems = []
        sent = self.engine.counts["sent"]
        for cls in ("core", "edge", "data"):
            actor_total = sum(n for (key, c), n in self.tallies.by_actor.items() if c == cls)
            if actor_total != sent[cls]:
                problems.append(f"{cls}: engine sent {sent[cls]} but actors tallied {actor_total}")
        for cls in ("core", "edge", "data"):
            node_total = sum(n.tce.counters[cls] for n in self.nodes.values())
            world_total = sum(v for (key, c), v in self.tallies.by_actor.items() if key[0] == "mn" and c == cls)
            if node_total != world_total:
                problems.append(f"node {cls} counters {node_total} != {world_total} sent by nodes")
        ls_total = sum(ls.sent for ls in self.servers.values())
        ls_world = sum(v for (key, c), v in self.tallies.by_actor.items() if key[0] == "ls")
        if ls_total != ls_world:
            problems.append(f"local servers counted {ls_total} sends but the fabric saw {ls_world}")
        if self.lcs.core_msg_counter != self.lcs.expected_counter():
            problems.append("LCS counter does not match its operation tallies")
        if self.lcs.attach_updates != self.tallies.lcs_handled["AttachUpdate"]:
            problems.append("LCS attach-update tally disagrees with handled messages")
        if self.lcs.map_requests != self.tallies.lcs_handled["MapRequest"]:
            problems.append("LCS map-request tally disagrees with handled messages")
        if not self.engine.conservation_holds():
            problems.append("message conservation violated")
        return problems
