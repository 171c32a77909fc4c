import json

import pytest
from hypothesis import given, strategies as st

from netinf_mn.errors import IncomparableReportsError
from netinf_mn.node import SessionState as S
from netinf_mn.scenario import run_scenario
from netinf_mn.scenario.runner import (
    REPORT_VERSION,
    SEED_ENV,
    compare_runs,
    down_intervals,
    lookup_key,
    make_payload,
    resolve_seed,
    shape_fingerprint,
    union_length,
)

from oracles import no_mobility
from support import load, run_shipped

SHIPPED = ["fig2", "fig2_hit", "fig3", "fig3_late", "roaming5", "delegation", "lossy"]


def test_report_layout():
    rep = run_shipped("fig2").report
    assert rep["report_version"] == REPORT_VERSION
    assert set(rep) == {"report_version", "scenario", "policy", "sessions", "global", "conservation", "run"}
    assert rep["scenario"]["name"] == "fig2"
    assert set(rep["run"]) == {"seed", "ticks", "event_count", "exhausted", "wall_time"}
    assert rep["run"]["wall_time"] is None
    ep = rep["sessions"]["S1"]["endpoints"]["MN1"]
    assert set(ep) == {"delivered", "sent_by_peer", "complete", "digest", "state"}
    for cls in ("core", "edge", "data"):
        c = rep["conservation"][cls]
        assert c["sent"] == c["delivered"] + c["dropped"] + c["stranded"] + c["in_flight"]


def test_timing_fills_wall_time():
    assert run_shipped("fig2", timing=True).report["run"]["wall_time"] >= 0


def test_lcs_counter_matches_its_parts():
    sc = load("roaming5")
    g = run_shipped("roaming5").report["global"]
    setup = len(sc.edge_networks) + len(sc.nodes)  # ARs registered at setup
    assert g["lcs_counter"] == setup + g["attach_updates"] + 2 * g["map_requests"]


def test_seed_priority():
    sc = load("fig2")
    assert resolve_seed(7, sc, {SEED_ENV: "3"}) == 7
    assert resolve_seed(None, sc, {SEED_ENV: "3"}) == 3
    assert resolve_seed(None, sc, {SEED_ENV: ""}) == (sc.params.seed if sc.params.seed is not None else 0)
    bare = type(sc)(sc.edge_networks, sc.nodes, params=type(sc.params)())
    assert resolve_seed(None, bare, {}) == 0


def test_payloads_are_deterministic_and_sized():
    assert make_payload("S1/MN1", 3, 100) == make_payload("S1/MN1", 3, 100)
    assert len(make_payload("x", 0, 1000)) == 1000
    assert make_payload("x", 0, 32) != make_payload("x", 1, 32)


def test_down_intervals_track_interrupted_and_reestablishing():
    tr = [(10, "S1", S.ACTIVE, S.INTERRUPTED), (15, "S1", S.INTERRUPTED, S.REESTABLISHING),
          (20, "S1", S.REESTABLISHING, S.ACTIVE), (5, "S2", S.ACTIVE, S.INTERRUPTED),
          (40, "S1", S.ACTIVE, S.INTERRUPTED)]
    assert down_intervals(tr, "S1", 50) == [(10, 20), (40, 50)]
    assert down_intervals(tr, "S3", 50) == []


def test_union_length_merges_overlaps():
    assert union_length([(0, 10), (5, 15), (20, 25)]) == 20
    assert union_length([]) == 0
    assert union_length([(3, 3)]) == 0


@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 30)), max_size=12))
def test_union_length_agrees_with_tick_set(raw):
    spans = [(a, a + w) for a, w in raw]
    ticks = set()
    for a, b in spans:
        ticks.update(range(a, b))
    assert union_length(spans) == len(ticks)


def test_lookup_key_forms():
    rep = run_shipped("fig2").report
    assert lookup_key(rep, "core_msgs") == rep["global"]["core_msgs"]
    assert lookup_key(rep, "event_count") == rep["run"]["event_count"]
    assert lookup_key(rep, "sessions.S1.interruption_ticks") == rep["sessions"]["S1"]["interruption_ticks"]
    with pytest.raises(KeyError):
        lookup_key(rep, "nope")
    with pytest.raises(KeyError):
        lookup_key(rep, "sessions.S9.interruption_ticks")


def test_compare_identical_runs_has_zero_deltas():
    a = run_shipped("roaming5").report
    table = compare_runs(a, json.loads(json.dumps(a)), ["core_msgs", "data_msgs"])
    assert [r.delta for r in table.rows] == [0, 0]
    assert table.regressions({"core_msgs": 0}) == []


def test_compare_policies_on_one_scenario():
    lazy = run_shipped("roaming5", policy="lazy").report
    eager = run_shipped("roaming5", policy="eager").report
    table = compare_runs(lazy, eager, ["core_msgs"])
    assert table.row("core_msgs").delta == 5
    assert table.regressions({"core_msgs": 4}) == ["core_msgs"]
    assert table.regressions({"core_msgs": 5}) == []
    assert "core_msgs" in table.render()


def test_compare_refuses_different_scenarios():
    with pytest.raises(IncomparableReportsError):
        compare_runs(run_shipped("fig2").report, run_shipped("fig3").report, ["core_msgs"])


def test_compare_refuses_non_numeric_keys():
    a = run_shipped("fig2").report
    with pytest.raises(IncomparableReportsError):
        compare_runs(a, a, ["sessions.S1.in_order"])
    with pytest.raises(IncomparableReportsError):
        compare_runs(a, a, ["scenario.name"])
    with pytest.raises(KeyError):
        compare_runs(a, a, ["policy"])


def test_shape_ignores_params():
    sc = load("roaming5")
    other = type(sc)(sc.edge_networks, sc.nodes, sc.links, sc.sites, sc.sessions, sc.actions,
                     type(sc.params)(policy="eager", seed=99))
    assert shape_fingerprint(sc) == shape_fingerprint(other)
    assert shape_fingerprint(sc) != shape_fingerprint(load("fig2"))


@pytest.mark.parametrize("name", SHIPPED)
def test_delivery_matches_a_run_without_mobility(name):
    """Whatever roaming happens, each endpoint ends up with what its peer sent."""
    sc = load(name)
    moving, still = run_scenario(sc, 1).report, run_scenario(no_mobility(sc), 1).report
    for sid, sess in moving["sessions"].items():
        for label, ep in sess["endpoints"].items():
            ref = still["sessions"][sid]["endpoints"][label]
            assert (ep["delivered"], ep["digest"]) == (ref["delivered"], ref["digest"]), (sid, label)
            assert ep["complete"]
        assert sess["in_order"]


def test_rendezvous_counts():
    fig3 = run_shipped("fig3").report["global"]
    assert (fig3["rendezvous_successes"], fig3["resume_core_msgs"], fig3["map_requests"]) == (2, 0, 0)
    late = run_shipped("fig3_late").report["global"]
    assert late["rendezvous_timeouts"] == 1
    assert late["map_requests"] == late["rendezvous_timeouts"]


def test_cache_hit_avoids_the_core():
    assert run_shipped("fig2_hit").report["global"]["map_requests"] == 0
    assert run_shipped("fig2").report["global"]["map_requests"] == 1
