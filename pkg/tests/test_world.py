import pytest

from netinf_mn.errors import ProtocolError
from netinf_mn.ids import LocalAddress
from netinf_mn.messages import (
    AttachUpdate,
    Data,
    LcsEp,
    LookupResponse,
    LsEp,
    NodeEp,
)
from netinf_mn.scenario import parse_scenario, run_scenario, shipped_scenarios
from netinf_mn.world import World

from oracles import identity_violations
from support import load, msg, nid, run_shipped


def small_world(**kw):
    w = World(seed=0, **kw)
    for en in ("EN1", "EN2"):
        w.add_edge_network(en)
    a = w.add_node("A", "EN1")
    b = w.add_node("B", "EN1")
    c = w.add_node("C", "EN2")
    return w, a, b, c


def test_setup_registers_everything_directly():
    w, a, b, c = small_world()
    assert w.servers["EN1"].registrations[b.id].addr == LocalAddress("EN1", 1)
    assert str(w.lcs.construct_locator(c.id, 0)) == "gl:[ar:edge:EN2>ar:host:C]"
    assert w.engine.counts["sent"]["core"] == 0
    assert w.lcs.core_msg_counter == 5


def test_setup_rejects_duplicates():
    w, *_ = small_world()
    with pytest.raises(ProtocolError):
        w.add_edge_network("EN1")
    with pytest.raises(ProtocolError):
        w.add_node("A", "EN2")


def test_routes_to_attached_node():
    w, a, b, c = small_world()
    actor, reason = w._resolve(msg(Data("S", 0, b"x", c.id), NodeEp(a.id, "EN1")))
    assert actor is a and reason == ""


def test_routes_bound_traffic_through_proxy():
    w, a, b, c = small_world()
    ls = w.servers["EN1"]
    ls.bind_proxy(a.id, b.id, 0, until=50)
    data = msg(Data("S", 0, b"x", c.id), NodeEp(a.id, "EN1"))
    assert w._resolve(data) == (b, "")
    w.engine.now = 50
    assert w._resolve(data) == (None, "no-binding")


def test_unbound_traffic_never_follows_a_proxy():
    w, a, b, c = small_world()
    w.servers["EN1"].bind_proxy(a.id, b.id, 0)
    a.attachment = None
    m = msg(LookupResponse(a.id, c.id, LocalAddress("EN2", 0)), NodeEp(a.id, "EN1"))
    assert w._resolve(m) == (None, "not-present")


def test_stranding_reasons():
    w, a, b, c = small_world()
    assert w._resolve(msg(Data("S", 0, b"x", c.id), NodeEp(nid(99), "EN1"))) == (None, "no-binding")
    assert w._resolve(msg(Data("S", 0, b"x", c.id), NodeEp(a.id, "EN2"))) == (None, "no-binding")
    assert w._resolve(msg(LookupResponse(a.id, c.id, LocalAddress("EN2", 0)), NodeEp(a.id, "EN2"))) == (
        None, "not-present")
    assert w._resolve(msg(Data("S", 0, b"x", c.id), NodeEp(a.id, "EN9"))) == (None, "unknown-edge-network")
    assert w._resolve(msg(AttachUpdate(a.id, "EN2"), LsEp("EN9"))) == (None, "no-local-server")
    assert w._resolve(msg(AttachUpdate(a.id, "EN2"), LcsEp())) == (w.lcs, "")


def test_send_to_missing_edge_network_is_stranded_and_conserved():
    w, a, b, c = small_world()
    w.engine.send(NodeEp(a.id, "EN1"), NodeEp(c.id, "EN9"), Data("S", 0, b"x", a.id), "EN1", None, "data")
    w.engine.run()
    assert w.engine.counts["stranded"]["data"] == 1
    assert any("reason=unknown-endpoint" in line for line in w.trace)
    assert w.engine.conservation_holds()


def test_proxied_data_is_delivered_to_the_delegate():
    w, a, b, c = small_world()
    w.servers["EN1"].bind_proxy(a.id, b.id, 0)
    a.attachment = None
    w.engine.send(NodeEp(c.id, "EN2"), NodeEp(a.id, "EN1"), Data("S", 0, b"x", c.id), "EN2", "EN1", "data")
    w.engine.run()
    assert f"to=mn:{b.id.id8}" in [line for line in w.trace if "net deliver" in line][-1]


def test_reconcile_is_clean_on_every_shipped_scenario():
    for name in ("fig2", "fig2_hit", "fig3", "fig3_late", "roaming5", "delegation", "lossy"):
        out = run_shipped(name)
        assert out.world.reconcile() == [], name


def test_eager_policy_pushes_to_each_correspondent():
    lazy = run_shipped("roaming5", policy="lazy").world
    eager = run_shipped("roaming5", policy="eager").world
    assert lazy.tallies.locator_pushes == 0
    assert eager.tallies.locator_pushes == 5
    assert eager.tallies.by_kind["LocatorPush"] == 5


@pytest.mark.parametrize("name", ["fig2", "fig2_hit", "fig3", "fig3_late", "roaming5", "delegation", "lossy"])
def test_one_identity_one_binding_in_shipped_scenarios(name):
    for seed in range(1, 11):
        assert identity_violations(load(name), seed) == [], seed


def lossy_delegation():
    text = shipped_scenarios()["delegation"].read_text().replace(
        "  en EN3\n", "  en EN3\n  link EN1 core loss 0.3\n  link EN3 core loss 0.3\n", 1)
    return parse_scenario(text)


def test_one_identity_one_binding_when_the_core_drops_messages():
    sc = lossy_delegation()
    losses = 0
    for seed in range(60):
        assert identity_violations(sc, seed) == [], seed
        losses += run_scenario(sc, seed).report["global"]["delegate_losses"]
    # the lossy runs must actually exercise the give-up path
    assert losses > 0


def test_delegate_releases_only_on_request():
    out = run_shipped("delegation")
    principal = out.world.node("MN1")
    lines = out.trace.lines
    sync_at = next(i for i, l in enumerate(lines) if "net send" in l and " SyncRequest " in l)
    reply_at = next(i for i, l in enumerate(lines) if "net send" in l and " SyncReply " in l)
    assert sync_at < reply_at
    unbind_at = next(i for i, l in enumerate(lines) if "net send" in l and " Unbind " in l)
    assert sync_at < unbind_at < reply_at
    assert principal.delivered["S1"] == out.sent_log[("S1", "MN2")]
