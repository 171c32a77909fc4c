"""Per-edge-network local server.

Hands out local addresses, keeps the registration table, a TTL-bounded
locator cache, and pending rendezvous lookups. TTL boundaries:

* a cache entry is live iff ``now < inserted + ttl``;
* a pending lookup is expired iff ``now >= deadline``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Union

from netinf_mn.errors import (
    AlreadyAttachedError,
    BadTtlError,
    ForeignAddressError,
    NotAttachedError,
    NotFoundError,
)
from netinf_mn.ids import GlobalLocator, LocalAddress, NodeId

DEFAULT_CACHE_TTL = 100
DEFAULT_LOOKUP_TTL = 50

Where = Union[GlobalLocator, LocalAddress]


@dataclass(frozen=True)
class Registration:
    addr: LocalAddress
    since: int


@dataclass(frozen=True)
class CacheEntry:
    loc: Where
    inserted: int
    ttl: int

    def live(self, now: int) -> bool:
        return now < self.inserted + self.ttl


@dataclass(frozen=True)
class CachedLocator:
    target: NodeId
    where: Where
    age: int


@dataclass(frozen=True)
class PendingLookup:
    requester: NodeId
    target: NodeId
    requested_at: int
    deadline: int


@dataclass(frozen=True)
class RendezvousNotice:
    """Answer to a pending lookup, produced when its target registers."""

    lookup: PendingLookup
    addr: LocalAddress


@dataclass(frozen=True)
class Answered:
    addr: LocalAddress


@dataclass(frozen=True)
class Waiting:
    deadline: int


@dataclass(frozen=True)
class ProxyBinding:
    holder: NodeId
    since: int
    until: Optional[int] = None

    def live(self, now: Optional[int]) -> bool:
        return self.until is None or now is None or now < self.until


@dataclass
class LocalServer:
    en: str
    cache_ttl: int = DEFAULT_CACHE_TTL
    registrations: dict[NodeId, Registration] = field(default_factory=dict)
    cache: dict[NodeId, CacheEntry] = field(default_factory=dict)
    pending: list[PendingLookup] = field(default_factory=list)
    proxies: dict[NodeId, ProxyBinding] = field(default_factory=dict)
    next_slot: int = 0
    allocated: dict[int, NodeId] = field(default_factory=dict)
    _free_slots: list[int] = field(default_factory=list)
    _last_expire: Optional[int] = None
    stats: dict[str, int] = field(
        default_factory=lambda: {
            "cache_hits": 0,
            "cache_misses": 0,
            "rendezvous_successes": 0,
            "rendezvous_timeouts": 0,
        }
    )

    # -- addresses & registration ---------------------------------------------

    def allocate_local_address(self, node: NodeId) -> LocalAddress:
        if node in self.registrations:
            raise AlreadyAttachedError(f"{node!r} is already registered in {self.en}")
        for slot, owner in self.allocated.items():
            if owner == node:
                return LocalAddress(self.en, slot)
        if self._free_slots:
            slot = heapq.heappop(self._free_slots)
        else:
            slot = self.next_slot
            self.next_slot += 1
        self.allocated[slot] = node
        return LocalAddress(self.en, slot)

    def register(self, node: NodeId, addr: LocalAddress, t: int) -> list[RendezvousNotice]:
        """Record ``node`` at ``addr``; answer every live lookup waiting for it.

        Notices come back ordered by request time.
        """
        if addr.en != self.en or self.allocated.get(addr.slot) != node:
            raise ForeignAddressError(f"{addr} was not allocated to {node!r} by {self.en}")
        self.proxies.pop(node, None)
        self.registrations[node] = Registration(addr, t)
        self.cache[node] = CacheEntry(addr, t, self.cache_ttl)
        matched = [p for p in self.pending if p.target == node and p.deadline > t]
        if matched:
            self.pending = [p for p in self.pending if not (p.target == node and p.deadline > t)]
        matched.sort(key=lambda p: (p.requested_at, p.requester))
        self.stats["rendezvous_successes"] += len(matched)
        return [RendezvousNotice(p, addr) for p in matched]

    def deregister(self, node: NodeId, t: int) -> None:
        """Drop the registration; the cache entry survives as a trace of the visit."""
        reg = self.registrations.pop(node, None)
        if reg is None:
            raise NotFoundError(f"{node!r} is not registered in {self.en}")
        self._release_slot(reg.addr.slot)

    def _release_slot(self, slot: int) -> None:
        if self.allocated.pop(slot, None) is not None:
            heapq.heappush(self._free_slots, slot)

    def is_registered(self, node: NodeId) -> bool:
        return node in self.registrations

    # -- cache ------------------------------------------------------------------

    def store(self, target: NodeId, where: Where, t: int, ttl: Optional[int] = None) -> None:
        self.cache[target] = CacheEntry(where, t, self.cache_ttl if ttl is None else ttl)

    def query_cache(self, target: NodeId, t: int) -> Optional[CachedLocator]:
        entry = self.cache.get(target)
        if entry is None:
            self.stats["cache_misses"] += 1
            return None
        if not entry.live(t):
            del self.cache[target]
            self.stats["cache_misses"] += 1
            return None
        self.stats["cache_hits"] += 1
        return CachedLocator(target, entry.loc, t - entry.inserted)

    # -- rendezvous ----------------------------------------------------------------

    def lookup_request(self, requester: NodeId, target: NodeId, ttl: int, t: int) -> Union[Answered, Waiting]:
        if requester not in self.registrations:
            raise NotAttachedError(f"{requester!r} is not registered in {self.en}")
        if ttl <= 0:
            raise BadTtlError(f"lookup ttl must be positive, got {ttl}")
        reg = self.registrations.get(target)
        if reg is not None:
            self.stats["rendezvous_successes"] += 1
            return Answered(reg.addr)
        deadline = t + ttl
        self.pending.append(PendingLookup(requester, target, t, deadline))
        return Waiting(deadline)

    def expire(self, t: int) -> list[PendingLookup]:
        if self._last_expire is not None and t < self._last_expire:
            raise ValueError(f"expire called with {t} after {self._last_expire}")
        self._last_expire = t
        dead = [p for p in self.pending if t >= p.deadline]
        if dead:
            self.pending = [p for p in self.pending if t < p.deadline]
        for node in [n for n, e in self.cache.items() if not e.live(t)]:
            del self.cache[node]
        self.stats["rendezvous_timeouts"] += len(dead)
        return dead

    # -- delegation bindings ----------------------------------------------------------

    def bind_proxy(self, principal: NodeId, holder: NodeId, t: int, until: Optional[int] = None) -> None:
        """Hand ``principal``'s identity binding to a local delegate, in one step.

        With ``until`` the binding is a lease that lapses at that tick.
        """
        holder_reg = self.registrations.get(holder)
        if holder_reg is None:
            raise NotAttachedError(f"delegate {holder!r} is not registered in {self.en}")
        if until is not None and until <= t:
            raise BadTtlError(f"lease ending at {until} is already over at {t}")
        own = self.registrations.pop(principal, None)
        if own is not None:
            self._release_slot(own.addr.slot)
        self.proxies[principal] = ProxyBinding(holder, t, until)
        self.cache[principal] = CacheEntry(holder_reg.addr, t, self.cache_ttl)

    def unbind_proxy(self, principal: NodeId, holder: NodeId) -> bool:
        binding = self.proxies.get(principal)
        if binding is None or binding.holder != holder:
            return False
        del self.proxies[principal]
        return True

    def lapse(self, principal: NodeId, t: int) -> bool:
        """Drop the binding for ``principal`` if its lease is over at ``t``."""
        binding = self.proxies.get(principal)
        if binding is None or binding.live(t):
            return False
        del self.proxies[principal]
        return True

    def resolve(self, node: NodeId, now: Optional[int] = None) -> Optional[NodeId]:
        """Which local node currently answers for ``node``'s identity."""
        if node in self.registrations:
            return node
        binding = self.proxies.get(node)
        if binding is None or not binding.live(now):
            return None
        return binding.holder

    def registered_nodes(self) -> list[NodeId]:
        return sorted(self.registrations)


# -- message handling ---------------------------------------------------------------


def _msgs():
    from netinf_mn import messages

    return messages


class LocalServerActor(LocalServer):
    """A local server wired to the fabric: turns PDUs into state changes and replies."""

    def __init__(self, en: str, cache_ttl: int = DEFAULT_CACHE_TTL, trace=None):
        super().__init__(en, cache_ttl)
        self._trace = trace or (lambda t, *f: None)
        self.sent = 0

    def log(self, t: int, op: str, args: str, outcome: str) -> None:
        self._trace(t, f"ls:{self.en}", op, args, "->", outcome)

    def _to(self, node: NodeId, body):
        m = _msgs()
        self.sent += 1
        return m.Send(m.NodeEp(node, self.en), body)

    def handle_message(self, msg, t: int) -> list:
        m = _msgs()
        body = msg.body
        if isinstance(body, m.AddressRequest):
            try:
                addr = self.allocate_local_address(body.node)
            except AlreadyAttachedError:
                self.log(t, "allocate", f"node={body.node.id8}", "AlreadyAttached")
                return []
            self.log(t, "allocate", f"node={body.node.id8}", f"slot={addr.slot}")
            return [self._to(body.node, m.AddressGrant(body.node, addr))]
        if isinstance(body, m.Register):
            try:
                notices = self.register(body.node, body.addr, t)
            except ForeignAddressError:
                self.log(t, "register", f"node={body.node.id8} addr={body.addr}", "RejectedForeignAddress")
                return []
            self.log(t, "register", f"node={body.node.id8} addr={body.addr}", f"notify={len(notices)}")
            out = [self._to(body.node, m.RegisterAck(body.node, body.addr))]
            for n in notices:
                out.append(self._to(n.lookup.requester, m.LookupResponse(n.lookup.requester, n.lookup.target, n.addr)))
            return out
        if isinstance(body, m.Deregister):
            try:
                self.deregister(body.node, t)
                outcome = "ok"
            except NotFoundError:
                outcome = "handed-over" if body.node in self.proxies else "NotFound"
            self.log(t, "deregister", f"node={body.node.id8}", outcome)
            return []
        if isinstance(body, m.CacheQuery):
            hit = self.query_cache(body.target, t)
            if hit is None:
                self.log(t, "cache_query", f"target={body.target.id8}", "miss")
                return [self._to(body.requester, m.CacheResponse(body.target, None))]
            self.log(t, "cache_query", f"target={body.target.id8}", f"hit {hit.where} age={hit.age}")
            return [self._to(body.requester, m.CacheResponse(body.target, hit.where, hit.age))]
        if isinstance(body, m.CacheStore):
            self.store(body.target, body.where, t)
            self.log(t, "cache_store", f"target={body.target.id8} where={body.where}", "ok")
            return []
        if isinstance(body, m.LookupRequest):
            try:
                outcome = self.lookup_request(body.requester, body.target, body.ttl, t)
            except (NotAttachedError, BadTtlError) as exc:
                self.log(t, "lookup", f"requester={body.requester.id8} target={body.target.id8}", type(exc).__name__)
                return []
            args = f"requester={body.requester.id8} target={body.target.id8} ttl={body.ttl}"
            if isinstance(outcome, Answered):
                self.log(t, "lookup", args, f"answer {outcome.addr}")
                return [self._to(body.requester, m.LookupResponse(body.requester, body.target, outcome.addr))]
            self.log(t, "lookup", args, f"waiting deadline={outcome.deadline}")
            return [m.Timer(outcome.deadline, ("expire",))]
        if isinstance(body, m.BindProxy):
            try:
                self.bind_proxy(body.principal, body.holder, t, body.until)
                outcome = "ok"
            except (NotAttachedError, BadTtlError) as exc:
                outcome = "NotAttached" if isinstance(exc, NotAttachedError) else "LeaseOver"
            self.log(t, "bind_proxy", f"principal={body.principal.id8} holder={body.holder.id8}", outcome)
            if outcome == "ok" and body.until is not None:
                return [m.Timer(body.until, ("lease", body.principal))]
            return []
        if isinstance(body, m.Unbind):
            ok = self.unbind_proxy(body.principal, body.holder)
            self.log(t, "unbind", f"principal={body.principal.id8} holder={body.holder.id8}", "ok" if ok else "none")
            return []
        from netinf_mn.errors import ProtocolError

        raise ProtocolError(f"local server {self.en} cannot handle {body.kind}")

    def on_timer(self, tag: tuple, t: int) -> list:
        m = _msgs()
        if tag[0] == "lease":
            if self.lapse(tag[1], t):
                self.log(t, "lease", f"principal={tag[1].id8}", "lapsed")
            return []
        dead = self.expire(t)
        if dead:
            self.log(t, "expire", f"count={len(dead)}", ",".join(p.requester.id8 for p in dead))
        return [self._to(p.requester, m.LookupExpired(p.requester, p.target, p.deadline)) for p in dead]
