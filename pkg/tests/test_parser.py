from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from netinf_mn.scenario import ParseError, parse_scenario, render_scenario, shipped_scenarios
from netinf_mn.scenario.parser import (
    EdgeNetwork,
    EgressAction,
    LinkSpec,
    Move,
    NodeSpec,
    Params,
    Scenario,
    SendAction,
    SessionSpec,
    SetAction,
    SiteSpec,
)
from netinf_mn.scenario.synthetic import synthetic_scenario

from support import load

HEAD = "topology\n  en EN1\n  en EN2\nnodes\n  node A home EN1\n  node B home EN2\n"


def err(text):
    with pytest.raises(ParseError) as exc:
        parse_scenario(text)
    return exc.value


def test_fig2_topology():
    sc = load("fig2")
    assert sc.en_names() == ["EN1", "EN2", "EN3"]
    assert sc.node("MN1").home == "EN1" and sc.node("MN3").home == "EN1"
    assert sc.node("MN2").home == "EN2"


def test_every_shipped_scenario_parses_and_round_trips():
    for name, path in shipped_scenarios().items():
        sc = parse_scenario(path.read_text())
        assert parse_scenario(render_scenario(sc)) == sc, name


def test_undeclared_destination_is_named():
    e = err(HEAD + "actions\n  at 3 move A -> EN9 travel 5\n")
    assert (e.line, e.found) == (8, "EN9")
    assert "EN9" in str(e)
    assert e.column == 18


def test_empty_file_expects_topology():
    e = err("")
    assert e.expected == "`topology`"
    assert err("# only a comment\n\n").expected == "`topology`"


@pytest.mark.parametrize(
    "tail, line, expected",
    [
        ("sessions\n  session S A A\n", 8, "a second, different node"),
        ("sessions\n  session S A Z\n", 8, "declared node"),
        ("sessions\n  session S A B\nactions\n  at 1 send Z S 4\n", 10, "declared node"),
        ("sessions\n  session S A B\nactions\n  at 1 send A T 4\n", 10, "declared session"),
        ("sessions\n  session S A B at 5\nactions\n  at 1 send A S 4\n", 10, "session already open at tick 1"),
        ("sessions\n  session S A B\nactions\n  at 1 send A S 70000\n", 10, "payload size <= 65535"),
        ("actions\n  at 1 move A -> EN2 travel 0\n", 8, "travel ticks >= 1"),
        ("actions\n  at 1 move A -> EN2 travel 9\n  at 5 move A -> EN1 travel 2\n", 9, "move of A at or after tick 10"),
        ("actions\n  at 1 set bogus 3\n", 8, "one of cache_ttl"),
        ("actions\n  at 1 fly A\n", 8, "`move`, `send`, `egress` or `set`"),
        ("params\n  policy sideways\n", 8, "`lazy` or `eager`"),
        ("params\n  mtu 30\n", 8, "value for mtu >= 37"),
        ("params\n  seed 1\n  seed 2\n", 9, "parameter not already set"),
        ("params\n  seed 1\nsessions\n", 9, "one of cache_ttl"),
    ],
)
def test_validation_errors(tail, line, expected):
    e = err(HEAD + tail)
    assert e.line == line
    assert e.expected.startswith(expected), e.expected


def test_topology_errors():
    assert err("topology\nnodes\n").expected == "at least one `en` declaration"
    assert err("topology\n  en core\nnodes\n").expected == "new edge network name"
    assert err("topology\n  en A\n  en A\n").expected == "new edge network name"
    assert err("topology\n  en A under B\n").expected == "declared edge network"
    assert err("topology\n  en A\n  link A core loss 2\nnodes\n").line == 3


def test_loss_inside_an_edge_network_is_rejected():
    e = err("topology\n  en A\n  link A A loss 0.1\nnodes\n  node N home A\n")
    assert (e.line, e.column, e.found) == (3, 17, "0.1")
    sc = parse_scenario("topology\n  en A\n  link A A loss 0\n  link core core loss 0.5\nnodes\n  node N home A\n")
    assert len(sc.links) == 2
    assert err("topology\n  en A\n  site ext:/x maybe\n").found == "maybe"
    assert err("topology\n  en A\n  tunnel A\n").expected.startswith("`en`")


def test_node_errors():
    assert err("topology\n  en A\nnodes\n  node A home A\n").expected == "new node label"
    assert err("topology\n  en A\nnodes\n  node N home A vnl maybe\n").found == "maybe"
    assert err("topology\n  en A\nnodes\n  node N home A extra\n").found == "extra"


def test_full_grammar():
    text = HEAD.replace("  en EN2\n", "  en EN2 under EN1\n  link EN1 core latency 3 loss 0.25\n"
                        "  site ext:/old legacy\n") + (
        "sessions\n  session S A B at 2\n"
        "actions\n"
        "  at 2 send A S 10 repeat 3 every 4\n"
        "  at 5 move B -> EN1 travel 7 delegate expect-peer\n"
        "  at 6 egress A ext:/old/x 99\n"
        "  at 7 set cache_ttl 40\n"
        "params\n  lookup_ttl 20\n  policy eager\n  until 300\n"
    )
    sc = parse_scenario(text)
    assert sc.edge_networks[1] == EdgeNetwork("EN2", ("EN1",))
    assert sc.links == (LinkSpec("EN1", "core", 3, 0.25),)
    assert sc.sites == (SiteSpec("ext:/old", False),)
    assert sc.sessions == (SessionSpec("S", "A", "B", 2),)
    assert sc.actions == (
        SendAction(2, "A", "S", 10, 3, 4),
        Move(5, "B", "EN1", 7, True, True),
        EgressAction(6, "A", "ext:/old/x", 99),
        SetAction(7, "cache_ttl", 40),
    )
    assert sc.params == Params(lookup_ttl=20, policy="eager", until=300)
    assert parse_scenario(render_scenario(sc)) == sc


def test_comments_and_blank_lines_are_ignored():
    text = "# header\ntopology   # trailing\n\n  en EN1\nnodes\n  node A home EN1 # hi\n"
    assert parse_scenario(text).nodes == (NodeSpec("A", "EN1"),)


def test_synthetic_scenarios_round_trip():
    for seed in range(5):
        sc = synthetic_scenario(n_nodes=12, n_ens=4, seed=seed, payloads=5)
        assert parse_scenario(render_scenario(sc)) == sc


# -- generated scenarios ---------------------------------------------------------------------

@st.composite
def scenarios(draw):
    n_en = draw(st.integers(1, 4))
    ens = []
    for i in range(n_en):
        parents = tuple(draw(st.lists(st.sampled_from([f"E{j}" for j in range(i)]), unique=True, max_size=2))) if i else ()
        ens.append(EdgeNetwork(f"E{i}", parents))
    names = [e.name for e in ens]
    locs = names + ["core"]
    links = []
    for _ in range(draw(st.integers(0, 2))):
        a, b = draw(st.sampled_from(locs)), draw(st.sampled_from(locs))
        losses = [0.0] if a == b != "core" else [0.0, 0.05, 0.125, 1.0]
        links.append(LinkSpec(a, b, draw(st.one_of(st.none(), st.integers(1, 50))),
                              draw(st.one_of(st.none(), st.sampled_from(losses)))))
    links = tuple(links)
    sites = tuple(SiteSpec(f"ext:/s{i}", draw(st.booleans())) for i in range(draw(st.integers(0, 2))))
    n_nodes = draw(st.integers(2, 5))
    nodes = tuple(NodeSpec(f"N{i}", draw(st.sampled_from(names)), draw(st.booleans())) for i in range(n_nodes))
    labels = [n.label for n in nodes]
    sessions = []
    for i in range(draw(st.integers(0, 3))):
        a, b = draw(st.lists(st.sampled_from(labels), min_size=2, max_size=2, unique=True))
        sessions.append(SessionSpec(f"S{i}", a, b, draw(st.integers(0, 20))))
    actions = []
    busy = {}
    for _ in range(draw(st.integers(0, 8))):
        kind = draw(st.sampled_from(["move", "send", "egress", "set"]))
        at = draw(st.integers(0, 200))
        if kind == "move":
            node = draw(st.sampled_from(labels))
            at = max(at, busy.get(node, 0))
            travel = draw(st.integers(1, 30))
            busy[node] = at + travel
            actions.append(Move(at, node, draw(st.sampled_from(names)), travel, draw(st.booleans()), draw(st.booleans())))
        elif kind == "send" and sessions:
            s = draw(st.sampled_from(sessions))
            actions.append(SendAction(max(at, s.at), draw(st.sampled_from([s.a, s.b])), s.sid,
                                      draw(st.integers(0, 65535)), draw(st.integers(1, 9)), draw(st.integers(1, 9))))
        elif kind == "egress":
            actions.append(EgressAction(at, draw(st.sampled_from(labels)), "ext:/s0/h", draw(st.integers(0, 2000))))
        elif kind == "set":
            actions.append(SetAction(at, draw(st.sampled_from(["cache_ttl", "mtu", "rtx_max"])), draw(st.integers(37, 500))))
    params = Params(
        cache_ttl=draw(st.integers(1, 300)),
        lookup_ttl=draw(st.integers(1, 300)),
        seed=draw(st.one_of(st.none(), st.integers(0, 10**6))),
        until=draw(st.one_of(st.none(), st.integers(0, 10**4))),
        policy=draw(st.sampled_from(["lazy", "eager"])),
    )
    return Scenario(tuple(ens), nodes, links, sites, tuple(sessions), tuple(actions), params)


@settings(max_examples=200, deadline=None)
@given(scenarios())
def test_parse_render_is_identity(sc):
    assert parse_scenario(render_scenario(sc)) == sc


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="topologynedsaci EN1->0123456789#\n", max_size=200))
def test_arbitrary_text_parses_or_fails_cleanly(text):
    try:
        parse_scenario(text)
    except ParseError as e:
        assert e.line >= 1 and e.column >= 1


def test_documented_example_parses():
    doc = (Path(__file__).parents[1] / "docs" / "scenario-grammar.md").read_text()
    example = doc.split("## Example")[1].split("```")[1]
    sc = parse_scenario(example)
    assert [a.__class__.__name__ for a in sc.actions] == ["SendAction", "Move"]
    assert sc.params.policy == "eager"
