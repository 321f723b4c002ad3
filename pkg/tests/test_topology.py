import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgekeeper.errors import DomainError, Unreachable
from edgekeeper.topology import (
    DistanceVector,
    advertised_link,
    LinkQuality,
    PingWindow,
    TopologyGraph,
    clamp_pdr,
    compute_etx,
    update_rtt_ema,
)

from conftest import guid_of
from oracles import etx_exact, shortest_costs, window_pdr

S, A, B, C = "self", "A", "B", "C"


@pytest.mark.parametrize("f, r, want", [(0.0, 0.0, 1.0), (0.5, 0.5, 4.0), (0.2, 0.0, 1.25)])
def test_etx_examples(f, r, want):
    assert compute_etx(f, r) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("f, r", [(1.0, 0.0), (0.0, 1.0), (-0.1, 0.0), (0.3, 1.5)])
def test_etx_domain(f, r):
    with pytest.raises(DomainError):
        compute_etx(f, r)


pdr = st.floats(0, 0.999, allow_nan=False)


@given(pdr, pdr)
def test_etx_symmetric(a, b):
    assert compute_etx(a, b) == compute_etx(b, a)


@given(pdr, pdr, st.floats(1e-6, 0.5))
def test_etx_monotone(a, b, step):
    if a + step < 1:
        assert compute_etx(a + step, b) > compute_etx(a, b)


def test_ema_examples():
    assert update_rtt_ema(None, 50.0, 0.125) == 50.0
    assert update_rtt_ema(100.0, 200.0, 0.125) == 112.5
    assert update_rtt_ema(100.0, 100.0, 0.7) == 100.0
    with pytest.raises(DomainError):
        update_rtt_ema(1.0, -1.0, 0.5)
    with pytest.raises(DomainError):
        update_rtt_ema(1.0, 1.0, 0.0)


@given(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(0.001, 1.0))
def test_ema_bounded(prev, sample, alpha):
    got = update_rtt_ema(prev, sample, alpha)
    tol = 1e-9 * max(prev, sample, 1)
    assert min(prev, sample) - tol <= got <= max(prev, sample) + tol


def test_window_rejects_non_increasing_seq():
    w = PingWindow(4)
    assert w.record(1, True)
    assert not w.record(1, False)
    assert not w.record(0, False)
    for seq in range(2, 10):
        w.record(seq, seq % 2 == 0)
    assert len(w) == 4


def test_pdr_clamped_below_one():
    assert clamp_pdr(1.0, 20) == pytest.approx(1 - 1 / 20)
    assert clamp_pdr(0.3, 20) == 0.3


def test_all_acked_uses_reported_reverse():
    g = TopologyGraph(S)
    for seq in range(1, 11):
        q = g.record_ping_outcome(A, "wlan0", seq, 10.0, seq * 1000, pdr_reverse=0.2)
    assert q.pdr_forward == 0 and q.etx == pytest.approx(1.25)


def test_half_acked():
    g = TopologyGraph(S)
    for seq in range(1, 11):
        q = g.record_ping_outcome(A, "wlan0", seq, 10.0 if seq % 2 else None, seq)
    assert q.pdr_forward == 0.5


def test_first_ack_initialises_ema():
    g = TopologyGraph(S)
    q = g.record_ping_outcome(A, "wlan0", 1, 80.0, 5)
    assert q.rtt_ema_ms == 80.0 and q.last_heard_ms == 5


def test_cannot_ping_self():
    with pytest.raises(DomainError):
        TopologyGraph(S).record_ping_outcome(S, "lo", 1, 1.0, 0)


def _direct(g, peer, link, etx, now=0.0):
    g.add_edge(S, peer, link, LinkQuality(etx=etx, last_heard_ms=now))


def test_dv_examples():
    g = TopologyGraph(S)
    assert g.build_distance_vector().entries == {S: 0.0}
    _direct(g, A, "w", 1.0)
    g.add_edge(A, B, "x", LinkQuality(etx=2.0, last_heard_ms=0))
    assert g.build_distance_vector().entries == {S: 0.0, A: 1.0, B: 3.0}
    g2 = TopologyGraph(S)
    _direct(g2, A, "wifi", 4.0)
    _direct(g2, A, "bt", 1.5)
    assert g2.build_distance_vector().entries == {S: 0.0, A: 1.5}


def random_graph(rng, n):
    nodes = [S] + [f"n{i}" for i in range(1, n)]
    links = []
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            for link in range(rng.choice([0, 0, 1, 1, 2])):
                links.append((a, b, rng.choice([1.0, 1.25, 2.0, 4.0, round(rng.uniform(1, 9), 3)]), f"l{link}"))
    g = TopologyGraph(S)
    for a, b, cost, lid in links:
        g.add_edge(a, b, lid, LinkQuality(etx=cost, last_heard_ms=0))
    return g, nodes, [(a, b, c) for a, b, c, _ in links]


def test_dv_matches_bruteforce_on_random_graphs():
    rng = random.Random(20240611)
    for _ in range(200):
        g, nodes, links = random_graph(rng, rng.randint(1, 6))
        want = shortest_costs(sorted(g.nodes), links, S)
        got = g.build_distance_vector().entries
        assert set(got) == set(want)
        for k in want:
            assert math.isclose(got[k], want[k], rel_tol=1e-12)


def test_merge_dv_adds_remote_edge_and_guards_seq():
    g = TopologyGraph(S)
    _direct(g, A, "w", 1.0)
    assert g.merge_distance_vector(DistanceVector(A, {A: 0.0, B: 2.0, S: 1.0}, seq=1), now=10)
    assert B in g.nodes
    assert g.build_distance_vector().entries[B] == 3.0
    before = dict(g.edges)
    assert not g.merge_distance_vector(DistanceVector(A, {A: 0.0, C: 1.0}, seq=1), now=11)
    assert g.edges == before
    assert not any(S in (a, b) for (a, b, _), q in g.edges.items() if q.advertised)


def test_merge_from_non_neighbour_ignored():
    g = TopologyGraph(S)
    assert not g.merge_distance_vector(DistanceVector(A, {B: 1.0}, seq=1))
    assert g.nodes == {S}


def test_merge_replaces_previous_advertisement():
    g = TopologyGraph(S)
    _direct(g, A, "w", 1.0)
    g.merge_distance_vector(DistanceVector(A, {A: 0.0, B: 2.0}, seq=1), now=0)
    g.merge_distance_vector(DistanceVector(A, {A: 0.0, C: 2.0}, seq=2), now=0)
    assert B not in g.nodes and C in g.nodes


@given(st.data())
def test_two_hop_property(data):
    rng = random.Random(data.draw(st.integers(0, 10_000)))
    g = TopologyGraph(S)
    peers = ["n1", "n2", "n3", "n4"]
    for p in peers[:2]:
        _direct(g, p, "w", 1.0)
    for seq in range(1, data.draw(st.integers(1, 6))):
        origin = rng.choice(peers)
        entries = {x: rng.uniform(0, 5) for x in peers + [S] if rng.random() < 0.6}
        g.merge_distance_vector(DistanceVector(origin, entries, seq), now=seq)
    measured = {p for p in peers[:2]}
    for (a, b, _), q in g.edges.items():
        if S in (a, b):
            assert not q.advertised and (b if a == S else a) in measured
        if q.advertised:
            assert a in measured or b in measured


def test_expire_boundary_and_prune():
    g = TopologyGraph(S)
    _direct(g, A, "w", 1.0, now=36_000)
    _direct(g, B, "w", 1.0, now=0)
    removed = g.expire_links(41_000, 40_000)
    assert removed == [tuple(sorted((S, B))) + ("w",)]
    assert A in g.nodes and B not in g.nodes
    assert g.departed_at[B] == 41_000


class Cloud:
    guid = guid_of("cloud")

    def __init__(self, rtt=120.0, up=True):
        self.rtt, self.up = rtt, up

    def probe(self):
        if not self.up:
            raise Unreachable("down")
        return self.rtt


def test_probe_cloud_and_advertise():
    g = TopologyGraph(S)
    q = g.probe_cloud(Cloud(), now=5)
    assert q.channel == "session" and q.rtt_ema_ms == 120.0
    assert g.best_etx(Cloud.guid) is None  # session links are not replica candidates
    dv = g.build_distance_vector(seq=1)
    assert Cloud.guid in dv.entries
    slave = TopologyGraph(A)
    slave.add_edge(A, S, "w", LinkQuality(etx=1.0, last_heard_ms=0))
    slave.merge_distance_vector(dv, now=5)
    assert any({a, b} == {S, Cloud.guid} for a, b, _ in slave.edges)


def test_probe_cloud_unreachable_removes_edge():
    g = TopologyGraph(S)
    g.probe_cloud(Cloud(), now=0)
    with pytest.raises(Unreachable):
        g.probe_cloud(Cloud(up=False), now=1)
    assert Cloud.guid not in g.nodes


def test_snapshot_is_immutable_copy():
    g = TopologyGraph(S)
    assert g.get_network_info().nodes == (S,)
    _direct(g, A, "w", 1.0)
    snap = g.get_network_info()
    g.edge(S, A, "w").etx = 9.0
    assert dict(snap.edges[0][3])["etx"] == 1.0
    with pytest.raises(TypeError):
        snap.edges[0][3]["etx"] = 3.0


def test_window_pdr_matches_count_oracle():
    rng = random.Random(3)
    g = TopologyGraph(S, window=20)
    outcomes = []
    for seq in range(1, 80):
        ok = seq == 1 or rng.random() > 0.3
        outcomes.append(ok)
        q = g.record_ping_outcome(A, "w", seq, 5.0 if ok else None, seq)
        assert q.pdr_forward == pytest.approx(clamp_pdr(window_pdr(outcomes, 20), 20))


def test_lost_ping_to_unknown_peer_creates_nothing():
    g = TopologyGraph(S)
    assert g.record_ping_outcome(A, "w", 1, None, 0) is None
    assert A not in g.nodes and g.edges == {}


def test_stale_advertised_route_ages_out():
    g = TopologyGraph(S)
    g.record_ping_outcome(A, "w", 1, 5.0, now=0)
    g.merge_distance_vector(DistanceVector(A, {A: 0.0, B: 1.0}, seq=1, ages={B: 3000.0}), now=4000)
    assert g.edge(A, B, advertised_link(A)).last_heard_ms == 1000.0
    assert g.build_distance_vector(now=4000).ages[B] == 3000.0
    g.record_ping_outcome(A, "w", 2, 5.0, now=9000)
    g.expire_links(9500, 4000)
    assert B not in g.nodes and g.departed_at[B] == 9500
    # a neighbour echoing the old observation cannot revive B
    g.merge_distance_vector(DistanceVector(A, {A: 0.0, B: 1.0}, seq=2, ages={B: 9000.0}), now=10_000)
    assert B not in g.nodes


@given(st.floats(0, 0.99), st.floats(0, 0.99))
def test_etx_matches_exact_arithmetic(f, r):
    assert math.isclose(compute_etx(f, r), float(etx_exact(f, r)), rel_tol=1e-12)
