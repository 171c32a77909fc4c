"""Identifier and locator value types.

A node's identity (NodeId) never changes; where it is reachable is described
either by a GlobalLocator built by the core, or by a LocalAddress handed out by
the local server of the edge network it is visiting.
"""

from __future__ import annotations

import hashlib
import re
from collections.abc import Collection, Mapping
from dataclasses import dataclass, field
from typing import Optional

SCOPES = ("root", "edge", "host")

_HEX32 = re.compile(r"^[0-9a-f]{32}$")
_AR_RE = re.compile(r"^ar:(root|edge|host):([A-Za-z0-9_.\-]+)$")


@dataclass(frozen=True, order=True)
class NodeId:
    """Flat 128-bit node identity."""

    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, bytes) or len(self.value) != 16:
            raise ValueError("NodeId must wrap exactly 16 bytes")

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        if not _HEX32.match(text):
            raise ValueError(f"not a node id: {text!r}")
        return cls(bytes.fromhex(text))

    @property
    def hex(self) -> str:
        return self.value.hex()

    @property
    def id8(self) -> str:
        return self.value.hex()[:8]

    def __str__(self) -> str:
        return self.value.hex()

    def __repr__(self) -> str:
        return f"NodeId({self.id8})"


@dataclass(frozen=True)
class ArId:
    scope: str
    name: str

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ValueError(f"unknown AR scope {self.scope!r}")
        if not self.name or not re.match(r"^[A-Za-z0-9_.\-]+$", self.name):
            raise ValueError(f"bad AR name {self.name!r}")

    @classmethod
    def parse(cls, text: str) -> "ArId":
        m = _AR_RE.match(text)
        if not m:
            raise ValueError(f"not an AR id: {text!r}")
        return cls(m.group(1), m.group(2))

    def __str__(self) -> str:
        return f"ar:{self.scope}:{self.name}"

    # ordering follows the rendered text so tie-breaks are reproducible
    def __lt__(self, other: "ArId") -> bool:
        return str(self) < str(other)

    def __le__(self, other: "ArId") -> bool:
        return str(self) <= str(other)

    def __gt__(self, other: "ArId") -> bool:
        return str(self) > str(other)

    def __ge__(self, other: "ArId") -> bool:
        return str(self) >= str(other)


@dataclass(frozen=True)
class GlobalLocator:
    path: tuple[ArId, ...]
    constructed_at: int = 0

    def __post_init__(self):
        if not self.path:
            raise ValueError("a global locator needs at least one AR")
        object.__setattr__(self, "path", tuple(self.path))

    @classmethod
    def parse(cls, text: str, constructed_at: int = 0) -> "GlobalLocator":
        if not (text.startswith("gl:[") and text.endswith("]")):
            raise ValueError(f"not a locator: {text!r}")
        inner = text[4:-1]
        if not inner:
            raise ValueError("empty locator")
        return cls(tuple(ArId.parse(p) for p in inner.split(">")), constructed_at)

    @property
    def host(self) -> ArId:
        return self.path[-1]

    @property
    def edge_network(self) -> Optional[str]:
        """Name of the edge network the host hangs off, if the path has one."""
        for ar in reversed(self.path[:-1]):
            if ar.scope == "edge":
                return ar.name
        return None

    def __str__(self) -> str:
        return "gl:[" + ">".join(str(a) for a in self.path) + "]"


@dataclass(frozen=True, order=True)
class LocalAddress:
    en: str
    slot: int

    def __post_init__(self):
        if self.slot < 0:
            raise ValueError("slot must be non-negative")

    def __str__(self) -> str:
        return f"{self.en}/{self.slot}"


def where_en(where) -> Optional[str]:
    """Edge network a locator or local address points into."""
    if isinstance(where, LocalAddress):
        return where.en
    if isinstance(where, GlobalLocator):
        return where.edge_network
    return None


@dataclass
class IdRegistry:
    """Single-writer registry guaranteeing NodeId uniqueness within one run."""

    namespace: bytes = b"netinf"
    minted: set[NodeId] = field(default_factory=set)
    _uses: dict[bytes, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.minted)

    def __contains__(self, node: NodeId) -> bool:
        return node in self.minted


MAX_MINT_RETRIES = 16


def mint_node_id(registry: IdRegistry, seed_material: bytes) -> NodeId:
    """Derive a fresh id from ``seed_material``.

    Repeated material is salted with a per-material use counter, so minting is
    deterministic for a given registry history yet never repeats an id.
    """
    if isinstance(seed_material, str):
        seed_material = seed_material.encode()
    uses = registry._uses.get(seed_material, 0)
    for attempt in range(MAX_MINT_RETRIES):
        h = hashlib.blake2b(digest_size=16, person=b"netinf-nodeid")
        h.update(registry.namespace)
        h.update(b"\x00")
        h.update(seed_material)
        h.update(b"\x00")
        h.update((uses + attempt).to_bytes(8, "big"))
        candidate = NodeId(h.digest())
        if candidate not in registry.minted:
            registry.minted.add(candidate)
            registry._uses[seed_material] = uses + attempt + 1
            return candidate
    raise RuntimeError("NodeId collision persisted after bounded retries")


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    reason: Optional[str] = None
    pair: Optional[tuple[ArId, ...]] = None

    def __bool__(self) -> bool:
        return self.ok


ACCEPT = ValidationResult(True)


def validate_locator(loc: GlobalLocator, graph: Mapping[ArId, Collection[ArId]]) -> ValidationResult:
    """Check a locator against an adjacency snapshot.

    ``graph`` maps every known AR to its neighbours. Rejections name the
    first offending element or pair.
    """
    for ar in loc.path:
        if ar not in graph:
            return ValidationResult(False, "unknown-ar", (ar,))
    for a, b in zip(loc.path, loc.path[1:]):
        if b not in graph[a]:
            return ValidationResult(False, "missing-edge", (a, b))
    if loc.host.scope != "host":
        return ValidationResult(False, "terminal-not-host", (loc.host,))
    return ACCEPT
