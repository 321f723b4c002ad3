"""Deterministic discrete-event network hosting many EdgeNodes in one process.

Time is virtual and advances only when the next event is popped. Every
random decision (packet drops, challenge nonces) comes from one
``random.Random(seed)`` (Mersenne Twister, MT19937), so a seed fixes the run.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional

from ..auth import CertificateAuthority
from ..errors import EdgeKeeperError, Unreachable
from ..node import EdgeNode, NodeConfig

DEFAULT_DELAY_MS = 5.0
DEFAULT_RESOLVER_DELAY_MS = 2000.0


class Timer:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class EventQueue:
    """Events fire in (fire_at, seq) order; nothing may be scheduled in the past."""

    def __init__(self):
        self.now_ms = 0.0
        self._heap: list = []
        self._seq = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, at_ms: float, fn: Callable, timer: Optional[Timer] = None) -> Timer:
        if at_ms < self.now_ms:
            raise ValueError(f"cannot schedule at {at_ms} before now={self.now_ms}")
        timer = timer or Timer()
        self._seq += 1
        heapq.heappush(self._heap, (at_ms, self._seq, fn, timer))
        return timer

    def peek(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def run_until(self, horizon_ms: float):
        while self._heap and self._heap[0][0] <= horizon_ms:
            at, _seq, fn, timer = heapq.heappop(self._heap)
            self.now_ms = at
            if not timer.cancelled:
                fn()
        self.now_ms = max(self.now_ms, horizon_ms)


@dataclass
class SimLink:
    endpoints: tuple
    delay_ms: float = DEFAULT_DELAY_MS
    drop_rate: float = 0.0
    up: bool = True

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError(f"drop rate {self.drop_rate} outside [0, 1]")
        if self.delay_ms < 0:
            raise ValueError("link delay must be non-negative")


class SimCloud:
    """Cloud endpoint reached over the master's session channel."""

    def __init__(self, rtt_ms: float = 120.0, reachable: bool = True):
        self.guid = hashlib.sha256(b"edgekeeper-cloud").hexdigest()
        self.rtt_ms = rtt_ms
        self.reachable = reachable

    def probe(self) -> float:
        if not self.reachable:
            raise Unreachable("cloud endpoint unreachable")
        return self.rtt_ms


def synthetic_sampler(index: int):
    """Device readings that drift with simulated time; no randomness involved."""

    def sample(now):
        return {
            "processors": 2 + index % 7,
            "memory_free_bytes": (512 + 64 * index) << 20,
            "battery_pct": max(0.0, 100.0 - index - now / 600_000),
            "storage_free_bytes": (8 + index) << 30,
        }

    return sample


@dataclass
class SimHost:
    name: str
    node: EdgeNode
    index: int
    dns: bool = True
    alive: bool = True


@dataclass
class Call:
    client: str
    node: str
    method: str
    params: dict
    invoke: float
    response: Optional[float] = None
    result: Optional[dict] = None
    error: Optional[dict] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


class Simulation:
    """Event loop, network fabric and node runtime in one object."""

    def __init__(self, seed: int = 0, config: Optional[dict] = None, delay_ms=DEFAULT_DELAY_MS,
                 drop_rate=0.0, resolver_delay_ms=DEFAULT_RESOLVER_DELAY_MS, gns=None):
        self.seed = seed
        self.rng = random.Random(seed)
        self.queue = EventQueue()
        self.config = dict(config or {})
        self.default_delay = float(delay_ms)
        self.default_drop = float(drop_rate)
        self.resolver_delay = float(resolver_delay_ms)
        self.gns = gns
        self.cloud = SimCloud()
        self.hosts: dict = {}
        self.by_ip: dict = {}
        self.links: dict = {}
        self.groups: Optional[dict] = None
        self.cas: dict = {}
        self.events: list = []
        self.calls: list = []
        self.sent = Counter()
        self.delivered = 0
        self.dropped = 0
        self._next_ip = 1
        self._guid_names: dict = {}

    # -- runtime interface used by EdgeNode --------------------------------

    def now(self) -> float:
        return self.queue.now_ms

    def call_later(self, delay_ms, fn) -> Timer:
        return self.queue.schedule(self.now() + max(0.0, delay_ms), fn)

    def token_bytes(self, n: int) -> bytes:
        return self.rng.randbytes(n)

    def emit(self, node, kind, **data):
        self.events.append({"t": self.now(), "node": node.name, "kind": kind, **self._names(data)})

    def send(self, node, dst_ip, msg: dict):
        self.sent[msg.get("type", "?")] += 1
        wire = json.dumps(msg, sort_keys=True)
        src_ip = node.ips[0]
        dst = self.by_ip.get(dst_ip)
        if dst is None or not dst.alive:
            self.dropped += 1
            return
        if dst.node is node:
            delay = 0.0
        else:
            link = self.link(node.name, dst.name)
            if not link.up or self._partitioned(node.name, dst.name):
                self.dropped += 1
                return
            if link.drop_rate >= 1.0 or (link.drop_rate > 0 and self.rng.random() < link.drop_rate):
                self.dropped += 1
                return
            delay = link.delay_ms

        def deliver():
            if dst.alive:
                self.delivered += 1
                dst.node.receive(src_ip, json.loads(wire))

        self.queue.schedule(self.now() + delay, deliver)

    def resolve(self, node, hostname, callback):
        host = self.hosts[node.name]
        if not host.dns:
            self.queue.schedule(self.now(), lambda: callback(None))
            return
        master = self.live_master()
        rtt = 2 * (self.link(node.name, master.name).delay_ms if master else self.default_delay)

        def answer():
            live = self.live_master()
            try:
                ips = live.node.store.resolve_alias(hostname, live.node.cluster) if live else None
            except EdgeKeeperError:
                ips = None
            callback(ips)

        self.queue.schedule(self.now() + self.resolver_delay + rtt, answer)

    # -- fabric --------------------------------------------------------------

    def link(self, a: str, b: str) -> SimLink:
        key = tuple(sorted((a, b)))
        link = self.links.get(key)
        if link is None:
            link = self.links[key] = SimLink(key, self.default_delay, self.default_drop)
        return link

    def set_link(self, a, b, delay_ms=None, drop=None, up=None):
        link = self.link(a, b)
        if delay_ms is not None:
            link.delay_ms = float(delay_ms)
        if drop is not None:
            link.drop_rate = float(drop)
        if up is not None:
            link.up = bool(up)
        link.__post_init__()

    def partition(self, groups):
        self.groups = {}
        for i, group in enumerate(groups):
            for name in group:
                self.groups[name] = i

    def heal(self):
        self.groups = None
        for link in self.links.values():
            link.up = True

    def _partitioned(self, a, b) -> bool:
        if self.groups is None:
            return False
        return self.groups.get(a, -1) != self.groups.get(b, -1)

    # -- hosts -----------------------------------------------------------------

    def authority(self, org: str) -> CertificateAuthority:
        ca = self.cas.get(org)
        if ca is None:
            ca = self.cas[org] = CertificateAuthority(
                f"ca.{org}", org, seed=f"{self.seed}:ca:{org}".encode()
            )
        return ca

    def spawn(self, name, master_mode=False, gateway=None, ips=None, org="edge", config=None,
              cloud=False, gns=False, alias=None) -> SimHost:
        if name in self.hosts and self.hosts[name].alive:
            raise ValueError(f"node {name!r} is already running")
        previous = self.hosts.get(name)
        if previous is not None:
            index, ips = previous.index, ips or list(previous.node.ips)
        else:
            index = self._next_ip
            self._next_ip += 1
            ips = ips or [f"10.0.0.{index}"]
        cred = self.authority(org).issue(name, seed=f"{self.seed}:{name}".encode())
        merged = {**self.config, **(config or {}), "master_mode": bool(master_mode)}
        gateway_ip = None
        if gateway:
            gateway_ip = self.hosts[gateway].node.ips[0] if gateway in self.hosts else gateway
        node = EdgeNode(
            self,
            cred,
            ips,
            NodeConfig.from_dict(merged),
            gateway=gateway_ip,
            gns=self.gns if gns else None,
            cloud=self.cloud if cloud else None,
            device_sampler=synthetic_sampler(index),
            alias=alias,
            name=name,
        )
        host = SimHost(name, node, index, dns=gateway is None)
        self.hosts[name] = host
        for ip in ips:
            self.by_ip[ip] = host
        self._guid_names[node.guid] = name
        self.events.append({"t": self.now(), "node": name, "kind": "spawn", "master": bool(master_mode)})
        node.start()
        return host

    def kill(self, name):
        host = self.hosts[name]
        host.alive = False
        host.node.stop()
        self.events.append({"t": self.now(), "node": name, "kind": "kill"})

    def node(self, name) -> EdgeNode:
        return self.hosts[name].node

    def live_master(self) -> Optional[SimHost]:
        for host in self.hosts.values():
            if host.alive and host.node.is_master:
                return host
        return None

    def name_of(self, guid) -> str:
        return self._guid_names.get(guid, guid)

    def _names(self, value):
        if isinstance(value, str):
            return self._guid_names.get(value, value)
        if isinstance(value, dict):
            return {k: self._names(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [self._names(v) for v in value]
        return value

    # -- client calls ----------------------------------------------------------

    def call(self, node_name, method, params=None, client=None, on_done=None) -> Call:
        """Issue an API request at ``node_name`` now; the Call fills in when answered."""
        from ..api import dispatch

        record = Call(client or node_name, node_name, method, dict(params or {}), self.now())
        self.calls.append(record)

        def respond(response):
            record.response = self.now()
            if "error" in response:
                record.error = response["error"]
            else:
                record.result = response["result"]
            self.events.append({
                "t": self.now(), "node": node_name, "kind": "call", "method": method,
                "outcome": record.error["code"] if record.error else "ok",
            })
            if on_done is not None:
                on_done(record)

        dispatch({"id": len(self.calls), "method": method, "params": record.params},
                 self.hosts[node_name].node, respond)
        return record

    def run_until(self, horizon_ms):
        self.queue.run_until(horizon_ms)

    def run_for(self, ms):
        self.queue.run_until(self.now() + ms)
