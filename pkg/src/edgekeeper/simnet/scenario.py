"""Scenario files: parsing, execution and the JSON report.

A scenario is a JSON or YAML document::

    seed: 7
    horizon_ms: 90000
    config: {target_r: 3, ping_interval_ms: 10000}
    network: {delay_ms: 5, drop: 0.0, resolver_delay_ms: 2000}
    events:
      - {at_ms: 0, action: spawn, node: M, master_mode: true}
      - {at_ms: 0, action: spawn, node: A, gateway: M}
      - {at_ms: 30000, action: assert, node: M, phase: formed}

Events must be sorted by ``at_ms``. Events sharing a timestamp run in file
order, before any protocol traffic due at that instant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import yaml

from ..errors import MalformedScenario, ScenarioAssertionFailed
from ..naming import StubGns
from .core import DEFAULT_DELAY_MS, DEFAULT_RESOLVER_DELAY_MS, Simulation

REPORT_NOTE = (
    "Simulated timings reflect protocol rules only (ping cadence, timeouts, "
    "message delays); radio variance of field deployments is not modelled."
)

# action -> (required keys, optional keys)
ACTIONS = {
    "spawn": ({"node"}, {"master_mode", "gateway", "ips", "org", "config", "cloud", "gns", "alias"}),
    "kill": ({"node"}, set()),
    "set_link": ({"a", "b"}, {"delay_ms", "drop", "up"}),
    "partition": ({"groups"}, set()),
    "heal": (set(), set()),
    "assert": (set(), {"node", "phase", "epoch", "replicas", "replica_count", "role", "serving"}),
    "call": ({"node", "method"}, {"params", "client"}),
    "connect_edges": ({"a", "b"}, set()),
    "vouch": ({"voucher", "node"}, set()),
    "cloud": (set(), {"reachable", "rtt_ms"}),
    "gns": ({"reachable"}, set()),
}


@dataclass
class Scenario:
    seed: int = 0
    events: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    horizon_ms: Optional[float] = None
    gns: bool = False

    @property
    def end_ms(self) -> float:
        last = self.events[-1]["at_ms"] if self.events else 0
        return max(last, self.horizon_ms or 0)


def parse_scenario(data) -> Scenario:
    if isinstance(data, (str, bytes)):
        try:
            data = yaml.safe_load(data)
        except yaml.YAMLError as exc:
            raise MalformedScenario(f"unparseable scenario: {exc}") from None
    if not isinstance(data, dict):
        raise MalformedScenario("scenario must be a mapping")
    unknown = set(data) - {"seed", "events", "config", "network", "horizon_ms", "gns"}
    if unknown:
        raise MalformedScenario(f"unknown scenario keys {sorted(unknown)}")
    events = data.get("events", [])
    if not isinstance(events, list):
        raise MalformedScenario("events must be a list")
    last = float("-inf")
    for i, ev in enumerate(events):
        if not isinstance(ev, dict) or "action" not in ev or "at_ms" not in ev:
            raise MalformedScenario(f"event {i} needs 'at_ms' and 'action'")
        at = ev["at_ms"]
        if not isinstance(at, (int, float)) or isinstance(at, bool) or at < 0:
            raise MalformedScenario(f"event {i}: at_ms must be a non-negative number")
        if at < last:
            raise MalformedScenario(f"event {i}: events must be sorted by at_ms")
        last = at
        allowed = ACTIONS.get(ev["action"])
        if allowed is None:
            raise MalformedScenario(f"event {i}: unknown action {ev['action']!r}")
        required, optional = allowed
        keys = set(ev) - {"at_ms", "action"}
        if required - keys:
            raise MalformedScenario(f"event {i}: {ev['action']} needs {sorted(required - keys)}")
        if keys - required - optional:
            raise MalformedScenario(f"event {i}: unexpected keys {sorted(keys - required - optional)}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise MalformedScenario("seed must be an integer")
    return Scenario(
        seed=seed,
        events=[dict(ev) for ev in events],
        config=dict(data.get("config") or {}),
        network=dict(data.get("network") or {}),
        horizon_ms=data.get("horizon_ms"),
        gns=bool(data.get("gns", False)),
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())


@dataclass
class Report:
    seed: int
    horizon_ms: float
    events: list
    metrics: dict
    history: list

    def to_dict(self) -> dict:
        return {
            "note": REPORT_NOTE,
            "seed": self.seed,
            "horizon_ms": self.horizon_ms,
            "metrics": self.metrics,
            "events": self.events,
            "history": self.history,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def build_simulation(scenario: Scenario) -> Simulation:
    net = scenario.network
    try:
        return Simulation(
            seed=scenario.seed,
            config=scenario.config,
            delay_ms=net.get("delay_ms", DEFAULT_DELAY_MS),
            drop_rate=net.get("drop", 0.0),
            resolver_delay_ms=net.get("resolver_delay_ms", DEFAULT_RESOLVER_DELAY_MS),
            gns=StubGns() if scenario.gns else None,
        )
    except (TypeError, ValueError) as exc:
        raise MalformedScenario(f"bad network settings: {exc}") from None


def resolve_node(sim: Simulation, ref: str) -> str:
    """Node names, or ``replica:<i>`` for the i-th non-master replica of the live master."""
    if isinstance(ref, str) and ref.startswith("replica:"):
        master = sim.live_master()
        if master is None:
            raise ScenarioAssertionFailed(f"{ref}: no live master")
        others = [g for g in master.node.cluster.replicas if g != master.node.guid]
        i = int(ref.split(":", 1)[1])
        if i >= len(others):
            raise ScenarioAssertionFailed(f"{ref}: only {len(others)} non-master replicas")
        return sim.name_of(others[i])
    if ref not in sim.hosts:
        raise MalformedScenario(f"unknown node {ref!r}")
    return ref


def check_assertion(sim: Simulation, ev: dict):
    target = ev.get("node")
    host = sim.hosts.get(resolve_node(sim, target)) if target else sim.live_master()
    if host is None:
        raise ScenarioAssertionFailed(f"assert at {ev['at_ms']}: no node to inspect")
    node = host.node
    state = node.cluster
    failures = []

    def expect(name, actual, wanted):
        if actual != wanted:
            failures.append(f"{name}={actual!r}, expected {wanted!r}")

    if "phase" in ev:
        expect("phase", state.phase if state else None, ev["phase"])
    if "epoch" in ev:
        expect("epoch", state.epoch if state else None, ev["epoch"])
    if "role" in ev:
        expect("role", state.role_of_self if state else None, ev["role"])
    if "replica_count" in ev:
        expect("replica_count", len(state.replicas) if state else 0, ev["replica_count"])
    if "replicas" in ev:
        expect("replicas", sorted(sim.name_of(g) for g in state.replicas) if state else [],
               sorted(ev["replicas"]))
    if "serving" in ev:
        expect("serving", node.serving(), ev["serving"])
    if failures:
        raise ScenarioAssertionFailed(f"assert at {ev['at_ms']} on {host.name}: " + "; ".join(failures))


def apply_event(sim: Simulation, ev: dict):
    action = ev["action"]
    try:
        if action == "spawn":
            sim.spawn(
                ev["node"],
                master_mode=ev.get("master_mode", False),
                gateway=ev.get("gateway"),
                ips=ev.get("ips"),
                org=ev.get("org", "edge"),
                config=ev.get("config"),
                cloud=ev.get("cloud", False),
                gns=ev.get("gns", False),
                alias=ev.get("alias"),
            )
        elif action == "kill":
            sim.kill(resolve_node(sim, ev["node"]))
        elif action == "set_link":
            sim.set_link(resolve_node(sim, ev["a"]), resolve_node(sim, ev["b"]),
                         ev.get("delay_ms"), ev.get("drop"), ev.get("up"))
        elif action == "partition":
            sim.partition([[resolve_node(sim, n) for n in group] for group in ev["groups"]])
        elif action == "heal":
            sim.heal()
        elif action == "assert":
            check_assertion(sim, ev)
        elif action == "call":
            sim.call(resolve_node(sim, ev["node"]), ev["method"], ev.get("params"), ev.get("client"))
        elif action == "connect_edges":
            a, b = sim.node(resolve_node(sim, ev["a"])), sim.node(resolve_node(sim, ev["b"]))
            a.learn_peer(b.guid, b.ips)
            b.learn_peer(a.guid, a.ips)
        elif action == "vouch":
            sim.node(resolve_node(sim, ev["voucher"])).request_vouch(
                sim.node(resolve_node(sim, ev["node"])).credential.certificate)
        elif action == "cloud":
            if "reachable" in ev:
                sim.cloud.reachable = bool(ev["reachable"])
            if "rtt_ms" in ev:
                sim.cloud.rtt_ms = float(ev["rtt_ms"])
        elif action == "gns":
            if sim.gns is None:
                raise MalformedScenario("gns action needs 'gns: true' at scenario level")
            sim.gns.reachable = bool(ev["reachable"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (MalformedScenario, ScenarioAssertionFailed)):
            raise
        raise MalformedScenario(f"event at {ev['at_ms']} ({action}): {exc}") from None
    if action not in ("assert", "call", "spawn", "kill"):
        sim.events.append({"t": sim.now(), "kind": "action", "action": action,
                           **{k: v for k, v in ev.items() if k not in ("at_ms", "action")}})


def collect_metrics(sim: Simulation) -> dict:
    metrics: dict = {
        "messages": dict(sorted(sim.sent.items())),
        "messages_total": sum(sim.sent.values()),
        "delivered": sim.delivered,
        "dropped": sim.dropped,
        "decisions": [ev["t"] for ev in sim.events if ev["kind"] == "health_decision"],
        "resets": [ev["t"] for ev in sim.events if ev["kind"] == "reset"],
    }
    start = next((ev["t"] for ev in sim.events if ev["kind"] == "master_start"), None)
    formed = full = None
    for ev in sim.events:
        if ev["kind"] != "phase" or "synced" not in ev:
            continue
        if formed is None and ev["phase"] == "formed":
            formed = ev["t"]
        target = sim.hosts[ev["node"]].node.cfg.target_r
        if full is None and len(ev["synced"]) >= target:
            full = ev["t"]
    metrics["time_to_formed_ms"] = None if formed is None or start is None else formed - start
    metrics["time_to_full_ms"] = None if full is None or start is None else full - start
    return metrics


def run_scenario(scenario) -> Report:
    if not isinstance(scenario, Scenario):
        scenario = parse_scenario(scenario)
    sim = build_simulation(scenario)
    for ev in scenario.events:
        at = float(ev["at_ms"])
        if at > sim.now():
            sim.run_until(math.nextafter(at, -math.inf))
        sim.queue.now_ms = max(sim.now(), at)
        apply_event(sim, ev)
    sim.run_until(scenario.end_ms)
    return Report(
        seed=scenario.seed,
        horizon_ms=scenario.end_ms,
        events=sim.events,
        metrics=collect_metrics(sim),
        history=[c.to_dict() for c in sim.calls],
    )
