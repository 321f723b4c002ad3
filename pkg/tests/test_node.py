"""Protocol behaviour of EdgeNodes inside the simulator."""

import pytest

from edgekeeper.node import NodeConfig
from edgekeeper.simnet import Simulation
from edgekeeper.simnet.experiments import formed_edge, spawn_edge
from edgekeeper.simnet.experiments import _first, full_set_synced


def sim_call(sim, node, method, params=None, within=None):
    done = []
    rec = sim.call(node, method, params, on_done=done.append)
    limit = within or 3 * sim.node("M").cfg.ping_interval_ms
    _first(sim, lambda: bool(done), sim.now() + limit)
    assert done, f"{method} never answered"
    return rec


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        NodeConfig.from_dict({"target_rr": 3})
    cfg = NodeConfig.from_dict({"ping_interval_ms": 1000})
    assert cfg.failure_timeout_ms == 4000
    assert cfg.record_grace_ms == 3 * cfg.failure_timeout_ms


def test_slaves_mirror_master_view():
    sim = formed_edge(3, n=5)
    m = sim.node("M")
    for name, host in sim.hosts.items():
        assert host.node.cluster.replicas == m.cluster.replicas, name
        assert host.node.cluster.phase == "formed"
        assert host.node.serving()


def test_committed_value_survives_single_replacement():
    sim = formed_edge(3, n=5)
    put = sim_call(sim, "N4", "putMetadata", {"path": "/keep", "value": "v1"})
    assert put.result is not None
    m = sim.node("M")
    victim = next(g for g in m.cluster.replicas if g != m.guid)
    sim.kill(sim.name_of(victim))
    _first(sim, lambda: full_set_synced(m) and victim not in m.cluster.replicas, sim.now() + 200_000)
    assert victim not in m.cluster.replicas and m.cluster.epoch == 0
    for g in m.cluster.replicas:
        node = sim.node(sim.name_of(g))
        assert node.log.state["/keep"][0] == b"v1"
    got = sim_call(sim, "N4", "getMetadata", {"path": "/keep"})
    assert got.result["value_b64"] == "djE="


def test_r1_master_death_puts_slaves_in_looking():
    sim = formed_edge(1, n=3)
    assert sim_call(sim, "N1", "getNetworkInfo").result is not None
    sim.kill("M")
    sim.run_for(sim.node("N1").cfg.failure_timeout_ms + 20_000)
    rec = sim_call(sim, "N1", "putMetadata", {"path": "/x", "value": "y"})
    assert rec.error["code"] == "ELOOKING"
    assert sim.node("N1").cluster.phase == "looking"
    ok = sim_call(sim, "N1", "getOwnGUID")
    assert ok.result["guid"] == sim.node("N1").guid


def test_foreign_org_is_refused():
    sim = Simulation(seed=1, config={"target_r": 1, "ping_interval_ms": 1000})
    sim.spawn("M", master_mode=True)
    sim.spawn("X", gateway="M", org="other")
    sim.run_for(5000)
    x = sim.node("X")
    assert x.auth_denied and not x.serving()
    assert x.guid not in sim.node("M").joined
    assert any(e["kind"] == "auth_denied" for e in sim.events)


def test_vouch_admits_foreign_node():
    sim = Simulation(seed=1, config={"target_r": 1, "ping_interval_ms": 1000})
    sim.spawn("M", master_mode=True)
    sim.spawn("A", gateway="M")
    sim.spawn("X", gateway="M", org="other")
    sim.run_for(3000)
    assert sim.node("X").auth_denied
    sim.node("A").request_vouch(sim.node("X").credential.certificate)
    sim.run_for(3000)
    assert sim.node("X").serving()
    vouches = [e for e in sim.events if e["kind"] == "vouch"]
    assert vouches and vouches[0]["via"] == "vouch" and vouches[0]["voucher"] == "A"


def test_records_propagate_and_expire():
    sim = formed_edge(1, n=3, ping_interval_ms=1000)
    n1, n2 = sim.node("N1"), sim.node("N2")
    assert n2.guid in n1.store.guids()
    sim.kill("N2")
    # direct link, then the advertised route behind N1, then the record grace period
    sim.run_for(2 * n1.cfg.failure_timeout_ms + n1.cfg.record_grace_ms + 3000)
    assert n2.guid not in sim.node("M").store.guids()
    assert n2.guid not in n1.store.guids()


def test_cloud_probe_reaches_slaves_via_distance_vector():
    sim = Simulation(seed=0, config={"target_r": 1, "ping_interval_ms": 1000})
    sim.spawn("M", master_mode=True, cloud=True)
    sim.spawn("A", gateway="M")
    sim.run_for(5000)
    cloud = sim.cloud.guid
    assert sim.node("M").graph.edge(sim.node("M").guid, cloud, "cloud") is not None or any(
        cloud in key for key in sim.node("M").graph.edges
    )
    info = sim_call(sim, "A", "getNetworkInfo").result
    assert cloud in str(info)


def test_edges_merge_directories():
    sim = Simulation(seed=4, config={"target_r": 1, "ping_interval_ms": 1000})
    sim.spawn("M1", master_mode=True)
    sim.spawn("A", gateway="M1")
    sim.spawn("M2", master_mode=True)
    sim.run_for(3000)
    a_guid = sim.node("A").guid
    sim.node("M1").peer_masters.add(sim.node("M2").guid)
    sim.node("M2").peer_masters.add(sim.node("M1").guid)
    sim.node("M1").learn_peer(sim.node("M2").guid, sim.node("M2").ips)
    sim.node("M2").learn_peer(sim.node("M1").guid, sim.node("M1").ips)
    sim.run_for(5000)
    assert a_guid in sim.node("M2").store.guids()
    assert any(e["kind"] == "merge" for e in sim.events)


def test_dns_bootstrap_finds_master():
    sim = Simulation(seed=0, config={"target_r": 1, "ping_interval_ms": 10_000})
    spawn_edge(sim, 2, bootstrap="dns")
    sim.run_for(2100)
    assert sim.node("N1").master_ip == sim.node("M").ips[0]


def test_vouched_node_flagged_when_gns_returns(caplog):
    from edgekeeper.naming import StubGns

    sim = Simulation(seed=1, config={"target_r": 1, "ping_interval_ms": 1000}, gns=StubGns(reachable=False))
    sim.spawn("M", master_mode=True, gns=True)
    sim.spawn("A", gateway="M")
    sim.spawn("X", gateway="M", org="other")
    sim.run_for(3000)
    sim.node("A").request_vouch(sim.node("X").credential.certificate)
    sim.run_for(3000)
    assert sim.node("X").serving()
    sim.gns.reachable = True
    sim.run_for(3000)
    flagged = [e for e in sim.events if e["kind"] == "vouch_unverified"]
    assert [e["guid"] for e in flagged] == ["X"]
    assert sim.node("X").guid in sim.node("M").trust.client_certs
    assert "CA unknown to the GNS" in caplog.text
