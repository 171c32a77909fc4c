"""Deterministic discrete-event engine and message fabric.

Time is an integer tick. Events pop in ``(at, seqno)`` order, and the only
randomness is the run's seeded generator, drawn once per send over a lossy
link (links with loss 0 or 1 draw nothing).
"""

from __future__ import annotations

import heapq
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, TextIO

from netinf_mn.errors import SimulationAbort
from netinf_mn.messages import Body, Endpoint, Message

CORE = "core"
INTRA_EN_LATENCY = 1
EN_CORE_LATENCY = 5


# -- events ------------------------------------------------------------------

@dataclass(frozen=True)
class Deliver:
    msg: Message


@dataclass(frozen=True)
class MobilityArrive:
    node: Any
    en: str


@dataclass(frozen=True)
class TimerFire:
    owner: Any
    tag: tuple


@dataclass(frozen=True)
class ScenarioAction:
    action: Any


@dataclass(order=True)
class Event:
    at: int
    seqno: int
    kind: Any = field(compare=False)


# -- links --------------------------------------------------------------------

@dataclass
class LinkModel:
    """Latency and loss between locations (edge-network names or ``core``).

    Unlisted pairs: 1 tick inside an edge network, 5 between an edge network
    and the core, and for two edge networks the sum of both core legs; loss
    along such a path compounds over its two legs.
    """

    intra_latency: int = INTRA_EN_LATENCY
    core_latency: int = EN_CORE_LATENCY
    latency: dict[frozenset, int] = field(default_factory=dict)
    loss_prob: dict[frozenset, float] = field(default_factory=dict)
    default_loss: float = 0.0

    def set_link(self, a: str, b: str, latency: Optional[int] = None, loss: Optional[float] = None) -> None:
        key = frozenset((a, b))
        if latency is not None:
            if latency < 1:
                raise ValueError("link latency must be at least one tick")
            self.latency[key] = latency
        if loss is not None:
            if not 0.0 <= loss <= 1.0:
                raise ValueError("loss probability must lie in [0, 1]")
            self.loss_prob[key] = loss

    def latency_between(self, a: str, b: str) -> int:
        key = frozenset((a, b))
        if key in self.latency:
            return self.latency[key]
        if a == b:
            return self.intra_latency
        if CORE in key:
            return self.core_latency
        return self.latency_between(a, CORE) + self.latency_between(CORE, b)

    def loss_between(self, a: str, b: str) -> float:
        key = frozenset((a, b))
        if key in self.loss_prob:
            return self.loss_prob[key]
        if a == b or CORE in key:
            return self.default_loss
        # two hops through the core; a message survives only if it survives both
        survive = (1.0 - self.loss_between(a, CORE)) * (1.0 - self.loss_between(CORE, b))
        return 1.0 - survive


# -- trace ----------------------------------------------------------------------

class Trace:
    """Line-oriented audit log; every record starts with ``t=<tick>``."""

    def __init__(self):
        self.lines: list[str] = []

    def emit(self, t: int, *fields: object) -> None:
        self.lines.append(" ".join([f"t={t}", *(str(f) for f in fields if f != "")]))

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def write(self, fh: TextIO) -> None:
        fh.write(self.text())

    def __iter__(self):
        return iter(self.lines)

    def __len__(self) -> int:
        return len(self.lines)


# -- engine -----------------------------------------------------------------------

OUTCOMES = ("sent", "delivered", "dropped", "stranded")


@dataclass
class RunResult:
    now: int
    event_count: int
    exhausted: bool
    counts: dict[str, Counter]
    in_flight: Counter


class Engine:
    """Event queue plus fabric.

    ``dispatch(engine, event)`` is called for every popped event.
    ``resolve(engine, msg)`` is consulted when a message arrives and returns
    the receiving actor, or ``None`` if the destination is unreachable at
    that tick (the message is then stranded).
    """

    def __init__(
        self,
        seed: int = 0,
        links: Optional[LinkModel] = None,
        trace: Optional[Trace] = None,
        dispatch: Optional[Callable[["Engine", Any], None]] = None,
    ):
        self.seed = seed
        self.rng = random.Random(seed)
        self.links = links or LinkModel()
        self.trace = trace if trace is not None else Trace()
        self.dispatch = dispatch
        self.now = 0
        self._queue: list[Event] = []
        self._seqno = 0
        self._msg_ids = 0
        self.event_count = 0
        self.counts: dict[str, Counter] = {o: Counter() for o in OUTCOMES}

    # -- scheduling ------------------------------------------------------------------

    def schedule(self, at: int, kind: Any) -> Event:
        if at < self.now:
            raise SimulationAbort(f"event scheduled in the past: at={at} now={self.now}", kind)
        ev = Event(at, self._seqno, kind)
        self._seqno += 1
        heapq.heappush(self._queue, ev)
        return ev

    def pending(self) -> int:
        return len(self._queue)

    # -- fabric -------------------------------------------------------------------------

    def send(
        self,
        src: Endpoint,
        dst: Endpoint,
        body: Body,
        origin: str,
        dest_location: Optional[str],
        cls: str,
    ) -> Message:
        """Put a message on the wire from ``origin`` toward ``dest_location``.

        ``dest_location`` of None means the destination does not exist; the
        message is stranded on the spot.
        """
        msg = Message(self._msg_ids, src, dst, body, self.now, origin, cls)
        self._msg_ids += 1
        self.counts["sent"][cls] += 1
        desc = body.describe()
        if dest_location is None:
            self.trace.emit(self.now, "net", "send", f"id={msg.msg_id}", body.kind, f"{src}->{dst}", desc)
            self.strand(msg, "unknown-endpoint")
            return msg
        latency = self.links.latency_between(origin, dest_location)
        loss = self.links.loss_between(origin, dest_location)
        arrive = self.now + latency
        self.trace.emit(
            self.now, "net", "send", f"id={msg.msg_id}", body.kind, f"{src}->{dst}", desc, f"arrive={arrive}"
        )
        if loss >= 1.0 or (loss > 0.0 and self.rng.random() < loss):
            self.counts["dropped"][cls] += 1
            self.trace.emit(self.now, "net", "drop", f"id={msg.msg_id}", body.kind)
            return msg
        self.schedule(arrive, Deliver(msg))
        return msg

    def strand(self, msg: Message, reason: str) -> None:
        self.counts["stranded"][msg.cls] += 1
        self.trace.emit(self.now, "net", "strand", f"id={msg.msg_id}", msg.body.kind, f"reason={reason}")

    def delivered(self, msg: Message, to: object) -> None:
        self.counts["delivered"][msg.cls] += 1
        self.trace.emit(self.now, "net", "deliver", f"id={msg.msg_id}", msg.body.kind, f"to={to}")

    # -- running --------------------------------------------------------------------------

    def run(self, until: Optional[int] = None) -> RunResult:
        while self._queue:
            if until is not None and self._queue[0].at > until:
                break
            ev = heapq.heappop(self._queue)
            self.now = ev.at
            self.event_count += 1
            if self.dispatch is None:
                continue
            try:
                self.dispatch(self, ev.kind)
            except SimulationAbort:
                raise
            except Exception as exc:
                raise SimulationAbort(f"{type(exc).__name__}: {exc}", ev) from exc
        exhausted = not self._queue
        if until is not None and not exhausted:
            self.now = until
        return RunResult(self.now, self.event_count, exhausted, self.counts, self.in_flight())

    def in_flight(self) -> Counter:
        c: Counter = Counter()
        for ev in self._queue:
            if isinstance(ev.kind, Deliver):
                c[ev.kind.msg.cls] += 1
        return c

    def conservation_holds(self) -> bool:
        inflight = self.in_flight()
        classes = set(self.counts["sent"]) | set(inflight)
        for cls in classes:
            lhs = self.counts["sent"][cls]
            rhs = (
                self.counts["delivered"][cls]
                + self.counts["dropped"][cls]
                + self.counts["stranded"][cls]
                + inflight[cls]
            )
            if lhs != rhs:
                return False
        return True
