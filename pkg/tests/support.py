"""Builders shared by the test modules."""

from __future__ import annotations

import json
import random
import re
from pathlib import Path

from netinf_mn.ids import ArId, LocalAddress, NodeId
from netinf_mn.lcs import ROOT, AttachmentRegister, LcsState
from netinf_mn.messages import LCS, LsEp, Message, NodeEp
from netinf_mn.node import MobileNode, NodeParams
from netinf_mn.scenario import parse_scenario, run_scenario, shipped_scenarios

FIXTURES = Path(__file__).parent / "fixtures"

# verdict lines written by the acceptance tests, printed at the end of the session
ACCEPTANCE: list[str] = []


def nid(n: int) -> NodeId:
    """Small deterministic ids whose order follows ``n``."""
    return NodeId(n.to_bytes(16, "big"))


_ids = iter(range(10**9))


def msg(body, dst, src=None, origin="EN1", cls="data", t=0) -> Message:
    return Message(next(_ids), src if src is not None else LCS, dst, body, t, origin, cls)


def to_node(node: MobileNode, body, origin=None, src=None, t=0) -> Message:
    en = node.en or origin or "EN1"
    return msg(body, NodeEp(node.id, en), src=src, origin=origin or en, t=t)


def attached_node(n: int, en: str = "EN1", slot: int = 0, params: NodeParams | None = None,
                  vnl_capable: bool = True, trace=None) -> MobileNode:
    kwargs = {"trace": trace} if trace is not None else {}
    node = MobileNode(nid(n), f"MN{n}", vnl_capable=vnl_capable, params=params, **kwargs)
    node.bootstrap_attach(LocalAddress(en, slot), 0)
    return node


def ls_ep(en: str) -> LsEp:
    return LsEp(en)


def load(name: str):
    return parse_scenario(shipped_scenarios()[name].read_text())


def run_shipped(name: str, seed: int = 1, **kw):
    return run_scenario(load(name), seed, name=name, **kw)


def bodies(items) -> list[str]:
    """Kinds of the sends in an outbound list, timers left out."""
    return [i.body.kind for i in items if hasattr(i, "body")]


def random_lcs(rng: random.Random, n_ars: int) -> tuple[LcsState, list]:
    """A general AR graph: edge ARs may hang off several earlier ARs, some
    are islands, and hosts fill the rest of the budget."""
    lcs = LcsState()
    edges = []
    n_edges = max(1, n_ars // 2)
    for i in range(n_edges):
        pool = [ROOT] + edges
        k = 0 if rng.random() < 0.05 else rng.choice([1, 1, 1, 2, 3])
        parents = set(rng.sample(pool, min(k, len(pool))))
        ar = ArId("edge", f"E{rng.randrange(10**6)}x{i}")
        lcs.register_ar(AttachmentRegister(ar, ar.name, parents))
        edges.append(ar)
    hosts = []
    for j in range(n_ars - n_edges - 1):
        n = nid(j + 1)
        lcs.register_ar(AttachmentRegister(ArId("host", f"H{j}"), n, {rng.choice(edges)}))
        hosts.append(n)
    return lcs, hosts


def golden_patterns(out, labels=("MN1", "MN2")) -> list[re.Pattern]:
    """The fig2 fixture with node placeholders filled from a run."""
    ids = {lab: out.world.node(lab).id.id8 for lab in labels}
    pats = []
    for line in (FIXTURES / "fig2_golden.txt").read_text().splitlines():
        if line and not line.startswith("#"):
            for lab, v in ids.items():
                line = line.replace("{%s}" % lab, v)
            pats.append(re.compile(line))
    return pats


def match_in_order(patterns, lines) -> int:
    """How many patterns match successive lines, each after the previous match."""
    it = iter(lines)
    done = 0
    for pat in patterns:
        if not any(pat.search(line) for line in it):
            break
        done += 1
    return done


def handtrace() -> dict:
    return json.loads((FIXTURES / "roaming5_handtrace.json").read_text())


def core_lines(out) -> list[str]:
    """``kind src->dst`` for every message sent to or from the LCS."""
    rows = []
    for line in out.trace.lines:
        f = line.split()
        if len(f) > 5 and f[1:3] == ["net", "send"] and "lcs" in f[5].split("->"):
            rows.append(f"{f[4]} {f[5]}")
    return rows
