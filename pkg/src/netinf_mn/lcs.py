"""Core-network Locator Construction System.

The LCS only stores the attachment-register graph. Global locators are built
on demand when a map request arrives and are never kept.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

from netinf_mn.errors import NotFoundError, ProtocolError, UnknownNeighborError
from netinf_mn.ids import ArId, GlobalLocator, NodeId
from netinf_mn.messages import MapReply, MapRequest

ROOT = ArId("root", "core")


@dataclass
class AttachmentRegister:
    ar_id: ArId
    owner: Union[NodeId, str, None] = None  # NodeId for hosts, edge-network name otherwise
    neighbors: set[ArId] = field(default_factory=set)
    updated_at: int = 0


@dataclass
class LcsState:
    root: ArId = ROOT
    registers: dict[ArId, AttachmentRegister] = field(default_factory=dict)
    host_index: dict[NodeId, ArId] = field(default_factory=dict)
    core_msg_counter: int = 0
    # tallies behind core_msg_counter, for the signalling reconciliation
    registrations: int = 0
    attach_updates: int = 0
    map_requests: int = 0
    # bumped on every graph change; keys the cached shortest-path tree
    _topology: int = field(default=0, repr=False, compare=False)
    _tree: Optional[tuple[int, dict]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.root not in self.registers:
            self.registers[self.root] = AttachmentRegister(self.root, owner=None)

    # -- mutation ----------------------------------------------------------

    def register_ar(self, ar: AttachmentRegister) -> None:
        """Store ``ar`` and mirror its neighbour entries.

        Re-registering an identical register is acknowledged without change.
        Raises UnknownNeighborError before touching any state.
        """
        for n in sorted(ar.neighbors):
            if n not in self.registers:
                raise UnknownNeighborError(ar.ar_id, n)
        existing = self.registers.get(ar.ar_id)
        if existing is not None:
            if existing.owner != ar.owner or not set(ar.neighbors) <= existing.neighbors:
                raise ProtocolError(f"conflicting re-registration of {ar.ar_id}")
            self._count_registration()
            return
        if ar.ar_id.scope == "host":
            if len(ar.neighbors) != 1:
                raise ProtocolError(f"host AR {ar.ar_id} needs exactly one neighbour")
            if not isinstance(ar.owner, NodeId):
                raise ProtocolError(f"host AR {ar.ar_id} must be owned by a node")
            if ar.owner in self.host_index:
                raise ProtocolError(f"node {ar.owner!r} already has a host AR")
        for n in ar.neighbors:
            if n.scope == "host":
                raise ProtocolError(f"{ar.ar_id} cannot attach below host AR {n}")
        stored = AttachmentRegister(ar.ar_id, ar.owner, set(ar.neighbors), ar.updated_at)
        self.registers[ar.ar_id] = stored
        for n in stored.neighbors:
            self.registers[n].neighbors.add(ar.ar_id)
        if ar.ar_id.scope == "host":
            self.host_index[ar.owner] = ar.ar_id
        self._topology += 1
        self._count_registration()

    def _count_registration(self) -> None:
        self.registrations += 1
        self.core_msg_counter += 1

    def update_attachment(self, node: NodeId, new_parent: ArId, t: int) -> None:
        host = self.host_index.get(node)
        if host is None:
            raise NotFoundError(f"no host AR for {node!r}")
        parent = self.registers.get(new_parent)
        if parent is None or new_parent.scope != "edge":
            raise ProtocolError(f"{new_parent} is not a registered edge AR")
        reg = self.registers[host]
        for old in list(reg.neighbors):
            if old != new_parent:
                self.registers[old].neighbors.discard(host)
        reg.neighbors = {new_parent}
        parent.neighbors.add(host)
        reg.updated_at = t
        self._topology += 1
        self.attach_updates += 1
        self.core_msg_counter += 1

    def detach_host(self, node: NodeId, t: int) -> None:
        """Cut a host AR loose; its node becomes unresolvable until it re-attaches."""
        host = self.host_index.get(node)
        if host is None:
            raise NotFoundError(f"no host AR for {node!r}")
        reg = self.registers[host]
        for old in reg.neighbors:
            self.registers[old].neighbors.discard(host)
        reg.neighbors = set()
        reg.updated_at = t
        self._topology += 1

    # -- reads ---------------------------------------------------------------

    def graph_view(self) -> dict[ArId, frozenset[ArId]]:
        return {a: frozenset(r.neighbors) for a, r in self.registers.items()}

    def parent_of(self, node: NodeId) -> Optional[ArId]:
        host = self.host_index.get(node)
        if host is None:
            return None
        nbrs = self.registers[host].neighbors
        return next(iter(nbrs)) if nbrs else None

    def _bfs(self, start: ArId) -> dict[ArId, int]:
        dist = {start: 0}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            d = dist[cur] + 1
            for n in self.registers[cur].neighbors:
                if n not in dist:
                    dist[n] = d
                    queue.append(n)
        return dist

    def construct_locator(self, target: NodeId, now: int = 0) -> Optional[GlobalLocator]:
        """Shortest root-to-host AR path, lexicographically smallest among ties.

        The root itself is left out of the path. Returns None when the target
        is unknown or not reachable from the root.
        """
        host = self.host_index.get(target)
        if host is None:
            return None
        via = self._shortest_tree()
        if host not in via:
            return None
        path = []
        cur = host
        while cur != self.root:
            path.append(cur)
            cur = via[cur]
        return GlobalLocator(tuple(reversed(path)), constructed_at=now)

    def _shortest_tree(self) -> dict[ArId, Optional[ArId]]:
        """Predecessor of every reachable AR on its preferred root path.

        BFS layer by layer, keeping each layer in path order: a node's path is
        its predecessor's path plus itself, so sorting by (predecessor rank,
        own id) orders the next layer, and the first predecessor seen in
        rank order is the best one.
        """
        if self._tree is not None and self._tree[0] == self._topology:
            return self._tree[1]
        via: dict[ArId, Optional[ArId]] = {self.root: None}
        layer = [self.root]
        while layer:
            rank = {a: i for i, a in enumerate(layer)}
            nxt: dict[ArId, ArId] = {}
            for a in layer:
                for n in self.registers[a].neighbors:
                    if n not in via and n not in nxt:
                        nxt[n] = a
            via.update(nxt)
            layer = sorted(nxt, key=lambda n: (rank[nxt[n]], n))
        self._tree = (self._topology, via)
        return via

    def unreachable_hosts(self) -> list[NodeId]:
        reach = self._bfs(self.root)
        return sorted(n for n, ar in self.host_index.items() if ar not in reach)

    def handle_map_request(self, req: MapRequest, now: int = 0) -> MapReply:
        self.map_requests += 1
        self.core_msg_counter += 2
        return MapReply(req.target, self.construct_locator(req.target, now))

    def expected_counter(self) -> int:
        return self.registrations + self.attach_updates + 2 * self.map_requests
