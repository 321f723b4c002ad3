"""The eleven acceptance criteria, each printing one [PASS]/[FAIL] line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
written straight to the terminal even when output capture is on.
"""

import random
import time
from fractions import Fraction
from pathlib import Path

import pytest

from edgekeeper.auth import CertificateAuthority, Challenge, Response, respond_challenge, verify_response
from edgekeeper.errors import QuorumLost
from edgekeeper.lincheck import check_history
from edgekeeper.simnet import Simulation, run_scenario
from edgekeeper.simnet.experiments import (
    _first,
    formed_edge,
    full_set_synced,
    measure_formation,
    metadata_costs,
    random_history,
    reconfiguration_run,
)
from edgekeeper.topology import compute_etx

from oracles import etx_exact, shortest_costs
from test_topology import S, random_graph

SCENARIOS = sorted((Path(__file__).parent.parent / "scenarios").glob("*.yaml"))
INTERVAL = 10_000


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}")
        assert ok, detail

    return report


def test_01_formation_bound(verdict):
    start = time.perf_counter()
    formed = measure_formation(4, 3, INTERVAL, bootstrap="gateway")
    wall = time.perf_counter() - start
    verdict(1, formed <= 25_000 and wall < 1.0,
            f"4 nodes r=3 formed after {formed} simulated ms in {wall:.3f} s wall clock")


def test_02_single_replica_immediacy(verdict):
    formed = measure_formation(3, 1, INTERVAL)
    verdict(2, formed <= INTERVAL, f"r=1 formed {formed} ms after master start (limit {INTERVAL})")


def test_03_replica_replacement(verdict):
    run = reconfiguration_run(3, 1, INTERVAL)
    [heard] = run.last_heard.values()
    # the master ticks on multiples of the interval; the first tick past the timeout decides
    expected = (heard + 4 * INTERVAL) // INTERVAL * INTERVAL + INTERVAL
    ok = run.time_ms <= 60_000 and run.decision_at == expected and run.epoch == 0
    verdict(3, ok, f"full set back after {run.time_ms} ms; decision at {run.decision_at} "
                   f"(last heard {heard}, expected first tick past +40000 = {expected})")


def test_04_quorum_loss(verdict):
    with pytest.raises(QuorumLost) as lost:
        reconfiguration_run(3, 2, INTERVAL)
    sim = formed_edge(3, n=5)
    master = sim.node("M")
    committed = []
    sim.call("N4", "putMetadata", {"path": "/old", "value": "v"}, on_done=committed.append)
    _first(sim, lambda: bool(committed), sim.now() + 3 * INTERVAL)
    victims = [g for g in master.cluster.replicas if g != master.guid]
    for g in victims:
        sim.kill(sim.name_of(g))
    puts = []
    for i in range(5):
        puts.append(sim.call("M", "putMetadata", {"path": f"/during/{i}", "value": "x"}))
        sim.run_for(INTERVAL / 2)
    _first(sim, lambda: master.cluster.epoch == 1 and full_set_synced(master), sim.now() + 20 * INTERVAL)
    sim.run_for(INTERVAL)
    _first(sim, lambda: all(p.response is not None for p in puts), sim.now() + 10 * INTERVAL)
    gone, fresh = [], []
    sim.call("M", "getMetadata", {"path": "/old"}, on_done=gone.append)
    sim.call("M", "putMetadata", {"path": "/new", "value": "n"}, on_done=fresh.append)
    _first(sim, lambda: bool(gone and fresh), sim.now() + 3 * INTERVAL)
    codes = [p.error["code"] if p.error else "ok" for p in puts]
    version = None
    if fresh and fresh[0].result:
        version = (fresh[0].result["epoch"], fresh[0].result["index"])
    ok = (
        committed[0].result is not None
        and codes == ["ENOQUORUM"] * len(puts)
        and master.cluster.epoch == 1
        and gone[0].error["code"] == "ENOTFOUND"
        and version == (1, 2)
        and lost.value.epoch == 1
    )
    verdict(4, ok, f"puts during outage {codes}; epoch {master.cluster.epoch}; old data "
                   f"{gone[0].error['code'] if gone[0].error else 'still present'}; next put version {version}")


def test_05_metadata_cost_ordering(verdict):
    costs = {r: metadata_costs(r) for r in (1, 3, 5)}
    ok = costs[5]["put"] > costs[3]["put"] > costs[1]["put"] and all(c["get"] < c["put"] for c in costs.values())
    verdict(5, ok, "messages per put/get: " + ", ".join(f"r={r} {c['put']}/{c['get']}" for r, c in costs.items()))


def test_06_etx_grid(verdict):
    grid = [(f / 10, r / 10) for f in range(10) for r in range(10)]
    worst = 0.0
    for f, r in grid:
        want = etx_exact(f, r)
        got = Fraction(compute_etx(f, r))
        worst = max(worst, float(abs(got - want) / want))
    verdict(6, len(grid) == 100 and worst <= 1e-12, f"{len(grid)} pairs, worst relative error {worst:.2e}")


def test_07_topology_oracle(verdict):
    rng = random.Random(7)
    mismatches = 0
    for _ in range(200):
        g, _nodes, links = random_graph(rng, rng.randint(1, 6))
        if g.build_distance_vector().entries != shortest_costs(sorted(g.nodes), links, S):
            mismatches += 1
    verdict(7, mismatches == 0, f"200 random graphs, {mismatches} differ from brute-force shortest paths")


def test_08_self_certification(verdict):
    rng = random.Random(88)
    ca = CertificateAuthority("ca.acc", seed=b"acceptance")
    creds = [ca.issue(f"k{i}", seed=rng.randbytes(16)) for i in range(100)]
    honest = reused = corrupted = 0
    for i, cred in enumerate(creds):
        other = creds[(i + 37) % len(creds)]
        nonce = rng.randbytes(32)
        ch = Challenge(nonce, "10.0.0.9", 0)
        resp = respond_challenge(ch, cred)
        honest += verify_response(cred.guid, ch, resp)
        reused += verify_response(cred.guid, ch, resp)
        fields = {"guid": (cred.guid, other.guid), "key": (cred.public_key, other.public_key),
                  "nonce": (nonce, rng.randbytes(32)), "sig": (resp.signature, other.sign(nonce))}
        for pick in range(1, 16):  # every subset of fields swapped for a foreign value...
            if pick == 0b1011:
                continue  # ...except guid+key+sig together, which is the other pair answering honestly
            guid, key, n, sig = (fields[k][(pick >> j) & 1] for j, k in enumerate(fields))
            corrupted += verify_response(guid, Challenge(n, "10.0.0.9", 0), Response(key, sig))
    ok = honest == 100 and reused == 0 and corrupted == 0
    verdict(8, ok, f"honest {honest}/100 verified, reused {reused} accepted, corruptions accepted {corrupted}/1400")


def test_09_linearizability(verdict):
    ops = failed = bad = 0
    for seed in range(50):
        history = random_history(seed, clients=3, max_ops=8)
        ops += len(history)
        failed += sum(not op.ok for op in history)
        bad += not check_history(history)
    verdict(9, bad == 0, f"50 histories, {ops} ops ({failed} failed or timed out), {bad} not linearizable")


def test_10_local_cache_lookup(verdict):
    sim = formed_edge(3, n=5)
    target = sim.node("N3")
    before = sum(sim.sent.values())
    done = []
    sim.call("N1", "getIPbyGUID", {"guid": target.guid}, on_done=done.append)
    sent = sum(sim.sent.values()) - before
    ok = bool(done) and done[0].result == {"ips": list(target.ips)} and sent == 0
    verdict(10, ok, f"slave getIPbyGUID answered synchronously={bool(done)} with {sent} messages")


def test_11_determinism(verdict):
    assert SCENARIOS, "scenarios directory is empty"
    differing = [p.name for p in SCENARIOS if run_scenario(p.read_text()).to_json() != run_scenario(p.read_text()).to_json()]
    sim_a, sim_b = Simulation(seed=5), Simulation(seed=5)
    verdict(11, not differing and sim_a.rng.random() == sim_b.rng.random(),
            f"{len(SCENARIOS)} scenarios run twice, byte-different reports: {differing or 'none'}")
