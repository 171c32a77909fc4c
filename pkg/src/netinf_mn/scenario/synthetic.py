"""Seeded generator for large random scenarios (scale and stress runs)."""

from __future__ import annotations

import random

from netinf_mn.scenario.parser import EdgeNetwork, Move, NodeSpec, Params, Scenario, SendAction, SessionSpec


def synthetic_scenario(
    n_nodes: int = 100,
    n_ens: int = 10,
    seed: int = 0,
    payloads: int = 40,
    moves_per_node: float = 0.3,
    horizon: int = 600,
) -> Scenario:
    """Nodes spread over ``n_ens`` edge networks, paired into sessions that
    exchange ``payloads`` messages each way while a share of nodes roam."""
    if n_nodes < 2 or n_ens < 1:
        raise ValueError("need at least two nodes and one edge network")
    rng = random.Random(seed)
    ens = tuple(EdgeNetwork(f"EN{i}") for i in range(n_ens))
    nodes = tuple(NodeSpec(f"N{i}", f"EN{i % n_ens}", vnl_capable=rng.random() < 0.8) for i in range(n_nodes))
    half = n_nodes // 2
    sessions = tuple(SessionSpec(f"S{i}", f"N{i}", f"N{i + half}") for i in range(half))
    actions = []
    every = max(1, (horizon // 2) // max(1, payloads))
    for s in sessions:
        start = rng.randrange(1, 20)
        actions.append(SendAction(start, s.a, s.sid, rng.randrange(16, 256), payloads, every))
        actions.append(SendAction(start + 1, s.b, s.sid, rng.randrange(16, 256), payloads, every))
    movers = rng.sample([n.label for n in nodes], int(n_nodes * moves_per_node))
    for label in sorted(movers, key=lambda x: int(x[1:])):
        home = next(n.home for n in nodes if n.label == label)
        dest = rng.choice([e.name for e in ens if e.name != home] or [home])
        at = rng.randrange(30, horizon // 2)
        actions.append(Move(at, label, dest, rng.randrange(5, 60), delegate=rng.random() < 0.5,
                            expect_peer=False))
    actions.sort(key=lambda a: a.at)
    return Scenario(ens, nodes, sessions=sessions, actions=tuple(actions), params=Params(seed=seed))
