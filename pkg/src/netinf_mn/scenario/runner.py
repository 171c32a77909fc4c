"""Turn a parsed scenario into a simulation run and a versioned JSON report."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Optional

from netinf_mn import tunnel
from netinf_mn.errors import IncomparableReportsError, ReconciliationError
from netinf_mn.node import NodeParams, SessionState
from netinf_mn.scenario.parser import (
    EgressAction,
    Move,
    Scenario,
    SendAction,
    SessionSpec,
    SetAction,
    render_scenario,
)
from netinf_mn.sim import LinkModel, ScenarioAction, Trace
from netinf_mn.world import World

REPORT_VERSION = 1
DEFAULT_SEED = 0
SEED_ENV = "NETINF_SIM_SEED"
DOWN_STATES = (SessionState.INTERRUPTED, SessionState.REESTABLISHING)


def resolve_seed(cli_seed: Optional[int], sc: Scenario, env: Optional[Mapping[str, str]] = None) -> int:
    """Explicit flag, then the environment, then the scenario, then 0."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV)
    if raw not in (None, ""):
        return int(raw)
    if sc.params.seed is not None:
        return sc.params.seed
    return DEFAULT_SEED


def shape_fingerprint(sc: Scenario) -> str:
    """Identifies the scenario independently of params such as seed and policy."""
    return hashlib.sha256(render_scenario(sc, include_params=False).encode()).hexdigest()[:16]


def make_payload(tag: str, index: int, size: int) -> bytes:
    block = hashlib.blake2b(f"{tag}/{index}".encode(), digest_size=32).digest()
    reps = size // len(block) + 1
    return (block * reps)[:size]


# -- timed actions -------------------------------------------------------------------------------

@dataclass(frozen=True)
class _Open:
    spec: SessionSpec

    def apply(self, world: World, t: int) -> None:
        world.open_session(self.spec.sid, self.spec.a, self.spec.b, t)


@dataclass(frozen=True)
class _Move:
    spec: Move

    def apply(self, world: World, t: int) -> None:
        m = self.spec
        world.move(m.node, m.to_en, m.travel, m.delegate, m.expect_peer, t)


@dataclass(frozen=True)
class _Send:
    node: str
    sid: str
    payload: bytes
    log: dict

    def apply(self, world: World, t: int) -> None:
        if world.send_app(self.node, self.sid, self.payload, t):
            self.log.setdefault((self.sid, self.node), []).append(self.payload)


@dataclass(frozen=True)
class _Egress:
    spec: EgressAction
    payload: bytes

    def apply(self, world: World, t: int) -> None:
        world.egress(self.spec.node, self.spec.dst, self.payload, t)


@dataclass(frozen=True)
class _Set:
    spec: SetAction

    def apply(self, world: World, t: int) -> None:
        world.set_param(self.spec.param, self.spec.value, t)


# -- building and running ----------------------------------------------------------------------------

def build_world(sc: Scenario, seed: int, policy: Optional[str] = None, trace: Optional[Trace] = None) -> World:
    p = sc.params
    params = NodeParams(
        resume_timeout=p.resume_timeout,
        lookup_ttl=p.lookup_ttl,
        rtx_interval=p.rtx_interval,
        rtx_max=p.rtx_max,
        policy=policy or p.policy,
        mtu=p.mtu,
        handshake_timeout=p.handshake_timeout,
    )
    links = LinkModel()
    for ln in sc.links:
        links.set_link(ln.a, ln.b, ln.latency, ln.loss)
    sites = tunnel.SiteRegistry()
    for s in sc.sites:
        sites.mark(s.prefix, s.netinf)
    world = World(seed, links, params, p.cache_ttl, trace, sites)
    world.emit(0, "setup", "run", f"seed={seed}", f"policy={params.policy}")
    for en in sc.edge_networks:
        world.add_edge_network(en.name, en.parents)
    for n in sc.nodes:
        world.add_node(n.label, n.home, n.vnl_capable)
    return world


def schedule_actions(world: World, sc: Scenario) -> dict:
    """Queue every scenario action; returns the log of accepted application sends."""
    sent_log: dict = {}
    engine = world.engine
    for s in sc.sessions:
        engine.schedule(s.at, ScenarioAction(_Open(s)))
    counters: dict = {}
    for a in sc.actions:
        if isinstance(a, Move):
            engine.schedule(a.at, ScenarioAction(_Move(a)))
        elif isinstance(a, SendAction):
            for k in range(a.repeat):
                key = (a.sid, a.node)
                idx = counters.get(key, 0)
                counters[key] = idx + 1
                payload = make_payload(f"{a.sid}/{a.node}", idx, a.size)
                engine.schedule(a.at + k * a.every, ScenarioAction(_Send(a.node, a.sid, payload, sent_log)))
        elif isinstance(a, EgressAction):
            key = ("egress", a.node)
            idx = counters.get(key, 0)
            counters[key] = idx + 1
            engine.schedule(a.at, ScenarioAction(_Egress(a, make_payload(f"egress/{a.node}", idx, a.size))))
        elif isinstance(a, SetAction):
            engine.schedule(a.at, ScenarioAction(_Set(a)))
    return sent_log


@dataclass
class RunOutput:
    report: dict
    trace: Trace
    world: World
    sent_log: dict

    def report_json(self) -> str:
        return report_to_json(self.report)

    def delivered(self, label: str, sid: str) -> list[bytes]:
        return list(self.world.node(label).delivered.get(sid, []))


def run_scenario(
    sc: Scenario,
    seed: int = DEFAULT_SEED,
    *,
    name: str = "scenario",
    policy: Optional[str] = None,
    until: Optional[int] = None,
    timing: bool = False,
) -> RunOutput:
    started = time.perf_counter()
    trace = Trace()
    world = build_world(sc, seed, policy, trace)
    sent_log = schedule_actions(world, sc)
    limit = until if until is not None else sc.params.until
    result = world.engine.run(limit)
    wall = time.perf_counter() - started
    problems = world.reconcile()
    if problems:
        raise ReconciliationError("; ".join(problems))
    report = build_report(sc, world, sent_log, result, seed, name, wall if timing else None)
    return RunOutput(report, trace, world, sent_log)


# -- report ---------------------------------------------------------------------------------------------

def down_intervals(transitions: Iterable[tuple], sid: str, end: int) -> list[tuple[int, int]]:
    spans = []
    start = None
    for t, s, _old, new in transitions:
        if s != sid:
            continue
        if new in DOWN_STATES and start is None:
            start = t
        elif new not in DOWN_STATES and start is not None:
            spans.append((start, t))
            start = None
    if start is not None:
        spans.append((start, end))
    return spans


def union_length(spans: Iterable[tuple[int, int]]) -> int:
    total = 0
    cur_start = cur_end = None
    for a, b in sorted(spans):
        if cur_end is None or a > cur_end:
            if cur_end is not None:
                total += cur_end - cur_start
            cur_start, cur_end = a, b
        else:
            cur_end = max(cur_end, b)
    if cur_end is not None:
        total += cur_end - cur_start
    return total


def _digest(payloads: list[bytes]) -> str:
    h = hashlib.sha256()
    for p in payloads:
        h.update(len(p).to_bytes(4, "big"))
        h.update(p)
    return h.hexdigest()[:16]


def build_report(sc: Scenario, world: World, sent_log: dict, result, seed: int, name: str,
                 wall_time: Optional[float]) -> dict:
    end = result.now
    sessions: dict[str, Any] = {}
    for spec in sc.sessions:
        a, b = world.node(spec.a), world.node(spec.b)
        spans = []
        endpoints = {}
        delivered_total = 0
        in_order = True
        for me, peer in ((a, b), (b, a)):
            if spec.sid not in me.sessions:
                continue
            spans += down_intervals(me.transitions, spec.sid, end)
            got = me.delivered.get(spec.sid, [])
            sent = sent_log.get((spec.sid, peer.label), [])
            ok = got == sent[: len(got)]
            in_order = in_order and ok
            delivered_total += len(got)
            endpoints[me.label] = {
                "delivered": len(got),
                "sent_by_peer": len(sent),
                "complete": got == sent,
                "digest": _digest(got),
                "state": str(me.sessions[spec.sid].state),
            }
        sessions[spec.sid] = {
            "interruption_ticks": union_length(spans),
            "payloads_delivered": delivered_total,
            "in_order": in_order,
            "endpoints": endpoints,
        }
    servers = world.servers.values()
    nodes = world.nodes.values()
    kinds = world.tallies.by_kind
    counts = world.engine.counts
    glob = {
        "core_msgs": counts["sent"]["core"],
        "edge_msgs": counts["sent"]["edge"],
        "data_msgs": counts["sent"]["data"],
        "cache_hits": sum(ls.stats["cache_hits"] for ls in servers),
        "cache_misses": sum(ls.stats["cache_misses"] for ls in servers),
        "rendezvous_successes": sum(ls.stats["rendezvous_successes"] for ls in servers),
        "rendezvous_timeouts": sum(ls.stats["rendezvous_timeouts"] for ls in servers),
        "delegations": sum(n.stats["delegations"] for n in nodes),
        "delegate_losses": sum(n.stats["delegate_losses"] for n in nodes),
        "attach_updates": kinds["AttachUpdate"],
        "map_requests": kinds["MapRequest"],
        "map_replies": kinds["MapReply"],
        "locator_pushes": kinds["LocatorPush"],
        "resume_core_msgs": kinds["MapRequest"] + kinds["MapReply"],
        "lcs_counter": world.lcs.core_msg_counter,
        "buffer_overflows": sum(n.stats["buffer_overflows"] for n in nodes),
        "send_queue_full": sum(n.stats["send_queue_full"] for n in nodes),
        "mtu_exceeded": sum(n.stats["mtu_exceeded"] for n in nodes),
        "external_deliveries": len(world.external),
    }
    inflight = result.in_flight
    conservation = {
        cls: {
            "sent": counts["sent"][cls],
            "delivered": counts["delivered"][cls],
            "dropped": counts["dropped"][cls],
            "stranded": counts["stranded"][cls],
            "in_flight": inflight[cls],
        }
        for cls in ("core", "edge", "data")
    }
    return {
        "report_version": REPORT_VERSION,
        "scenario": {"name": name, "shape": shape_fingerprint(sc)},
        "policy": world.params.policy,
        "sessions": sessions,
        "global": glob,
        "conservation": conservation,
        "run": {
            "seed": seed,
            "ticks": end,
            "event_count": result.event_count,
            "exhausted": result.exhausted,
            "wall_time": wall_time,
        },
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


# -- comparison ---------------------------------------------------------------------------------------------

def lookup_key(report: dict, key: str):
    """``core_msgs`` reads from ``global``; dotted keys walk the report."""
    if "." not in key:
        for section in ("global", "run"):
            if key in report.get(section, {}):
                return report[section][key]
        raise KeyError(key)
    cur: Any = report
    for part in key.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(key)
        cur = cur[part]
    return cur


@dataclass(frozen=True)
class ComparisonRow:
    key: str
    a: float
    b: float

    @property
    def delta(self):
        return self.b - self.a


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]

    def row(self, key: str) -> ComparisonRow:
        for r in self.rows:
            if r.key == key:
                return r
        raise KeyError(key)

    def regressions(self, budgets: Mapping[str, float]) -> list[str]:
        """Keys whose increase from a to b exceeds the allowed budget."""
        bad = []
        for key, allowed in budgets.items():
            if self.row(key).delta > allowed:
                bad.append(key)
        return bad

    def render(self) -> str:
        width = max([len("key")] + [len(r.key) for r in self.rows])
        lines = [f"{'key':<{width}}  {'a':>10}  {'b':>10}  {'delta':>10}"]
        for r in self.rows:
            lines.append(f"{r.key:<{width}}  {r.a:>10}  {r.b:>10}  {r.delta:>+10}")
        return "\n".join(lines) + "\n"


def compare_runs(a: dict, b: dict, keys: Iterable[str]) -> ComparisonTable:
    if a.get("scenario", {}).get("shape") != b.get("scenario", {}).get("shape"):
        raise IncomparableReportsError(
            f"reports come from different scenarios ({a.get('scenario')} vs {b.get('scenario')})"
        )
    rows = []
    for key in keys:
        va, vb = lookup_key(a, key), lookup_key(b, key)
        if isinstance(va, bool) or isinstance(vb, bool) or not isinstance(va, (int, float)) \
                or not isinstance(vb, (int, float)):
            raise IncomparableReportsError(f"key {key} is not numeric")
        rows.append(ComparisonRow(key, va, vb))
    return ComparisonTable(tuple(rows))
