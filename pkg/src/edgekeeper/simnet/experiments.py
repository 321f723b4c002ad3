"""Canned simulator experiments: formation, reconfiguration, message cost and
randomized client histories for the linearizability checker."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from ..auth import b64d, b64e
from ..cluster import majority
from ..errors import DomainError, QuorumLost, SimTimeout
from ..lincheck import Op
from .core import Simulation
from .scenario import collect_metrics

DATA_PATH_TYPES = frozenset({"fwd", "fwd_resp", "append", "ack", "nack", "snap"})


def spawn_edge(sim: Simulation, n: int, bootstrap="gateway", at_ms=0.0) -> list:
    """Master ``M`` plus ``n - 1`` slaves ``N1..``, all started at ``at_ms``."""
    if bootstrap not in ("gateway", "dns"):
        raise DomainError(f"unknown bootstrap mode {bootstrap!r}")
    sim.run_until(at_ms)
    names = ["M"] + [f"N{i}" for i in range(1, n)]
    sim.spawn("M", master_mode=True)
    for name in names[1:]:
        sim.spawn(name, gateway="M" if bootstrap == "gateway" else None)
    return names


def _first(sim, predicate, horizon_ms):
    """Advance event by event until ``predicate()`` holds; None at the horizon."""
    while sim.now() < horizon_ms:
        nxt = sim.queue.peek()
        if nxt is None or nxt > horizon_ms:
            sim.run_until(horizon_ms)
            break
        sim.run_until(nxt)
        if predicate():
            return sim.now()
    return sim.now() if predicate() else None


def full_set_synced(node) -> bool:
    return (
        node.is_master
        and len(node.cluster.replicas) == node.cluster.target_r
        and all(g in node.leader.synced_members() for g in node.cluster.replicas)
    )


def measure_formation(n: int, r: int, ping_interval_ms=10_000, bootstrap="gateway", seed=0,
                      horizon_ms=None) -> float:
    """Simulated ms from master start until the master reports phase formed."""
    if n < majority(r):
        raise DomainError(f"{n} nodes cannot reach a majority of {r} replicas")
    horizon = horizon_ms or 20 * ping_interval_ms
    sim = Simulation(seed=seed, config={"target_r": r, "ping_interval_ms": ping_interval_ms})
    spawn_edge(sim, n, bootstrap)
    master = sim.node("M")
    if master.cluster.phase == "formed":
        return 0.0
    t = _first(sim, lambda: master.cluster.phase == "formed", horizon)
    if t is None:
        raise SimTimeout(f"edge not formed within {horizon} ms")
    return collect_metrics(sim)["time_to_formed_ms"]


@dataclass
class ReconfigResult:
    time_ms: float
    killed_at: float
    decision_at: Optional[float]
    last_heard: dict = field(default_factory=dict)
    master_ticks: float = 0.0
    epoch: int = 0
    sim: Optional[Simulation] = None


def reconfiguration_run(r: int, departures: int, ping_interval_ms=10_000, seed=0, spares=None,
                        kill_offset_ms=None) -> ReconfigResult:
    """Form an edge, kill ``departures`` non-master replicas, watch it recover.

    Raises QuorumLost when recovery needed a quorum reset.
    """
    if departures < 1 or departures >= r:
        raise DomainError("departures must leave the master and be at least one replica")
    spares = departures if spares is None else spares
    interval = ping_interval_ms
    sim = Simulation(seed=seed, config={"target_r": r, "ping_interval_ms": interval})
    spawn_edge(sim, r + spares)
    master = sim.node("M")
    if _first(sim, lambda: full_set_synced(master), 20 * interval) is None:
        raise SimTimeout("edge never reached a full replica set")
    # kill between health ticks, after the pre-kill link state settled
    offset = kill_offset_ms if kill_offset_ms is not None else interval / 2
    kill_at = (sim.now() // interval + 1) * interval + offset
    sim.run_until(kill_at)
    victims = [g for g in master.cluster.replicas if g != master.guid][:departures]
    last_heard = {g: master.graph.last_heard(g) for g in victims}
    for g in victims:
        sim.kill(sim.name_of(g))
    decisions_before = len([e for e in sim.events if e["kind"] == "health_decision"])

    def recovered():
        if any(e["kind"] == "reset" for e in sim.events):
            return True
        return full_set_synced(master) and not set(victims) & set(master.cluster.replicas)

    t = _first(sim, recovered, kill_at + 20 * interval)
    decisions = [e["t"] for e in sim.events if e["kind"] == "health_decision"][decisions_before:]
    decision_at = decisions[0] if decisions else None
    resets = [e for e in sim.events if e["kind"] == "reset"]
    if resets:
        raise QuorumLost(
            f"{departures} of {r} replicas departed; quorum rebuilt under epoch {resets[0]['epoch']}",
            time_ms=resets[0]["t"] - kill_at,
            epoch=resets[0]["epoch"],
        )
    if t is None:
        raise SimTimeout("replica set not restored within the horizon")
    return ReconfigResult(t - kill_at, kill_at, decision_at, last_heard, interval,
                          master.cluster.epoch, sim)


def measure_reconfiguration(r: int, departures: int, ping_interval_ms=10_000, seed=0) -> float:
    return reconfiguration_run(r, departures, ping_interval_ms, seed).time_ms


def formed_edge(r: int, n: int = 6, ping_interval_ms=10_000, seed=0) -> Simulation:
    sim = Simulation(seed=seed, config={"target_r": r, "ping_interval_ms": ping_interval_ms})
    spawn_edge(sim, n)
    master = sim.node("M")
    if _first(sim, lambda: full_set_synced(master), 20 * ping_interval_ms) is None:
        raise SimTimeout("edge never reached a full replica set")
    # let slaves mirror the formed phase
    sim.run_for(2 * ping_interval_ms)
    return sim


def data_path_messages(sim: Simulation) -> int:
    return sum(count for kind, count in sim.sent.items() if kind in DATA_PATH_TYPES)


def measure_call_messages(sim: Simulation, node: str, method: str, params: dict) -> tuple:
    """Data-path messages spent on one call: returns (count, call record)."""
    interval = sim.node("M").cfg.ping_interval_ms
    start = (sim.now() // interval + 1) * interval + interval / 2  # far from any heartbeat
    sim.run_until(start)
    before = data_path_messages(sim)
    done = []
    record = sim.call(node, method, params, on_done=done.append)
    _first(sim, lambda: bool(done), start + 3 * interval)
    return data_path_messages(sim) - before, record


def metadata_costs(r: int, seed=0) -> dict:
    """Data-path messages of a committed put and a get issued at a slave."""
    sim = formed_edge(r, n=6, seed=seed)
    slave = next(name for name, h in sorted(sim.hosts.items())
                 if h.node.guid not in sim.node("M").cluster.replicas)
    put, rec_put = measure_call_messages(sim, slave, "putMetadata", {"path": "/cost", "value": "x"})
    get, rec_get = measure_call_messages(sim, slave, "getMetadata", {"path": "/cost"})
    if rec_put.error or rec_get.error:
        raise RuntimeError(f"cost probe failed: {rec_put.error or rec_get.error}")
    return {"put": put, "get": get}


# -- randomized histories --------------------------------------------------------


def _to_op(call, kind, path, value) -> Op:
    if kind == "put":
        ok = call.result is not None
        return Op(call.client, "put", path, value, call.invoke,
                  call.response if call.response is not None else float("inf"), ok)
    if call.error and call.error["code"] == "ENOTFOUND":
        return Op(call.client, "get", path, None, call.invoke, call.response, True)
    if call.result is None:
        return Op(call.client, "get", path, None, call.invoke,
                  call.response if call.response is not None else float("inf"), False)
    return Op(call.client, "get", path, b64d(call.result["value_b64"]), call.invoke, call.response, True)


def random_history(seed: int, clients: int = 3, max_ops: int = 8, r: int = 3) -> list:
    """Run concurrent sequential clients against a formed edge; returns the Op history.

    The network gets seeded per-link drop rates and one seed in three loses a
    replica mid-run, so some operations time out and fail.
    """
    rng = random.Random(f"history:{seed}")
    sim = formed_edge(r, n=r + 2, seed=seed)
    names = sorted(sim.hosts)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            sim.set_link(a, b, delay_ms=rng.choice([2, 5, 20, 80]), drop=rng.choice([0, 0, 0, 0.05, 0.2]))
    interval = sim.node("M").cfg.ping_interval_ms
    start = sim.now()
    if seed % 3 == 0:
        victim = [g for g in sim.node("M").cluster.replicas if g != sim.node("M").guid][0]
        sim.queue.schedule(start + rng.uniform(0, 2 * interval), lambda: sim.kill(sim.name_of(victim)))
    total = rng.randint(clients, max_ops)
    budget = [total]
    issued: list = []
    paths = ["/lin/a", "/lin/b"]
    client_nodes = rng.sample(names, clients)

    def issue(cid):
        node = client_nodes[cid]
        if budget[0] <= 0 or not sim.hosts[node].alive:
            return
        budget[0] -= 1
        path = rng.choice(paths)
        if rng.random() < 0.5:
            value = f"c{cid}-{budget[0]}".encode()
            params = {"path": path, "value_b64": b64e(value)}
            kind, method = "put", "putMetadata"
        else:
            value, params, kind, method = None, {"path": path}, "get", "getMetadata"

        def done(_call):
            sim.call_later(rng.uniform(0, interval / 2), lambda: issue(cid))

        issued.append((sim.call(node, method, params, client=f"c{cid}", on_done=done), kind, path, value))

    for cid in range(clients):
        sim.queue.schedule(start + rng.uniform(0, interval), lambda cid=cid: issue(cid))
    sim.run_for(12 * interval)
    return [_to_op(call, kind, path, value) for call, kind, path, value in issued]
