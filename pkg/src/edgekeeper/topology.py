"""Two-hop topology graph built from pings and distance vectors.

Every node measures the links to its direct neighbours (RTT moving average,
packet drop rate over a ping window, ETx) and merges the distance vectors its
neighbours broadcast, so it sees each remote node as one hop behind some
neighbour.

Vector entries carry the age of the last direct observation of each
destination. An advertised edge inherits that observation time, so a route
that two neighbours keep re-advertising to each other still ages out once
nobody hears the destination itself.
"""

from __future__ import annotations

import copy
import heapq
from collections import deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Optional

from .errors import DomainError, Unreachable

DEFAULT_ALPHA = 0.125
DEFAULT_WINDOW = 20
DV_LINK = "dv"
SESSION_LINK = "session"


def compute_etx(pdr_forward: float, pdr_reverse: float) -> float:
    """Expected transmissions for one delivered packet plus its acknowledgement."""
    for pdr in (pdr_forward, pdr_reverse):
        if not 0.0 <= pdr < 1.0:
            raise DomainError(f"drop rate must be in [0, 1), got {pdr}")
    return 1.0 / ((1.0 - pdr_forward) * (1.0 - pdr_reverse))


def update_rtt_ema(previous: Optional[float], sample: float, alpha: float = DEFAULT_ALPHA) -> float:
    if sample < 0:
        raise DomainError(f"negative RTT sample {sample}")
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must be in (0, 1], got {alpha}")
    if previous is None:
        return float(sample)
    return (1.0 - alpha) * previous + alpha * sample


def clamp_pdr(pdr: float, window: int = DEFAULT_WINDOW) -> float:
    # a fully lost window reports 1 - 1/W so ETx stays finite
    return min(max(float(pdr), 0.0), 1.0 - 1.0 / window)


@dataclass
class LinkQuality:
    rtt_ema_ms: Optional[float] = None
    pdr_forward: float = 0.0
    pdr_reverse: float = 0.0
    etx: float = 1.0
    last_heard_ms: Optional[float] = None
    channel: str = "direct"
    # True for neighbour-to-remote edges learned from a distance vector;
    # their etx is the advertised path cost rather than a measured link
    advertised: bool = False

    def to_dict(self) -> dict:
        return {
            "rtt_ema_ms": self.rtt_ema_ms,
            "pdr_forward": self.pdr_forward,
            "pdr_reverse": self.pdr_reverse,
            "etx": self.etx,
            "last_heard_ms": self.last_heard_ms,
            "channel": self.channel,
            "advertised": self.advertised,
        }


class PingWindow:
    """Ring buffer of the last ``size`` resolved ping outcomes."""

    def __init__(self, size: int = DEFAULT_WINDOW):
        self.size = size
        self.outcomes: deque = deque(maxlen=size)
        self.last_seq: Optional[int] = None

    def record(self, seq: int, acked: bool) -> bool:
        if self.last_seq is not None and seq <= self.last_seq:
            return False
        self.last_seq = seq
        self.outcomes.append((seq, acked))
        return True

    def __len__(self):
        return len(self.outcomes)

    def pdr(self) -> float:
        if not self.outcomes:
            return 0.0
        lost = sum(1 for _, acked in self.outcomes if not acked)
        return clamp_pdr(lost / len(self.outcomes), self.size)


@dataclass
class DistanceVector:
    origin: str
    entries: dict
    seq: int
    ages: dict = field(default_factory=dict)  # destination -> ms since last heard directly

    def to_message(self) -> dict:
        return {"type": "dv", "origin": self.origin, "seq": self.seq, "entries": dict(self.entries),
                "ages": dict(self.ages)}

    @classmethod
    def from_message(cls, msg: dict) -> "DistanceVector":
        return cls(origin=msg["origin"], entries=dict(msg["entries"]), seq=int(msg["seq"]),
                   ages=dict(msg.get("ages") or {}))


def advertised_link(origin: str) -> str:
    """Link id for the edges a neighbour's distance vector contributes."""
    return f"{DV_LINK}:{origin}"


def _key(a, b, link_id):
    return (a, b, link_id) if a <= b else (b, a, link_id)


class TopologyGraph:
    def __init__(self, self_guid: str, window: int = DEFAULT_WINDOW, alpha: float = DEFAULT_ALPHA):
        self.self = self_guid
        self.nodes: set = {self_guid}
        self.edges: dict = {}
        self.window = window
        self.alpha = alpha
        self.ping_windows: dict = {}
        self.dv_seen: dict = {}
        self.departed_at: dict = {}

    # -- structure ---------------------------------------------------------

    def add_edge(self, a, b, link_id, quality: LinkQuality) -> LinkQuality:
        self.nodes.update((a, b))
        self.departed_at.pop(a, None)
        self.departed_at.pop(b, None)
        self.edges[_key(a, b, link_id)] = quality
        return quality

    def edge(self, a, b, link_id) -> Optional[LinkQuality]:
        return self.edges.get(_key(a, b, link_id))

    def remove_edge(self, key):
        self.edges.pop(key, None)
        self.ping_windows.pop(key, None)

    def direct_links(self, peer) -> list:
        """Links self measured itself towards ``peer``."""
        return [
            q
            for (a, b, _), q in self.edges.items()
            if not q.advertised and {a, b} == {self.self, peer}
        ]

    def neighbours(self) -> set:
        out = set()
        for (a, b, _), q in self.edges.items():
            if not q.advertised and self.self in (a, b):
                out.add(b if a == self.self else a)
        return out

    def last_heard(self, peer) -> Optional[float]:
        heard = [q.last_heard_ms for q in self.direct_links(peer) if q.last_heard_ms is not None]
        return max(heard) if heard else None

    def best_etx(self, peer) -> Optional[float]:
        links = [q.etx for q in self.direct_links(peer) if q.channel == "direct"]
        return min(links) if links else None

    def touch(self, peer, link_id, now) -> LinkQuality:
        """Note traffic received from ``peer`` without changing drop statistics."""
        quality = self.edge(self.self, peer, link_id)
        if quality is None:
            quality = self.add_edge(self.self, peer, link_id, LinkQuality())
        quality.last_heard_ms = now
        return quality

    def weights(self) -> dict:
        """Adjacency map with the cheapest parallel link between each pair."""
        adj: dict = {n: {} for n in self.nodes}
        for (a, b, _), q in self.edges.items():
            if a == b:
                continue
            best = adj[a].get(b)
            if best is None or q.etx < best:
                adj[a][b] = q.etx
                adj[b][a] = q.etx
        return adj

    # -- measurement -------------------------------------------------------

    def record_ping_outcome(self, peer, link_id, seq, rtt_sample=None, now=None, pdr_reverse=None):
        if peer == self.self:
            raise DomainError("cannot ping self")
        key = _key(self.self, peer, link_id)
        quality = self.edges.get(key)
        if quality is None:
            if rtt_sample is None:
                return None  # a lost ping is no evidence the peer exists
            quality = self.add_edge(self.self, peer, link_id, LinkQuality())
        window = self.ping_windows.get(key)
        if window is None:
            window = self.ping_windows[key] = PingWindow(self.window)
        if not window.record(seq, rtt_sample is not None):
            return quality
        quality.pdr_forward = window.pdr()
        if pdr_reverse is not None:
            quality.pdr_reverse = clamp_pdr(pdr_reverse, self.window)
        if rtt_sample is not None:
            quality.rtt_ema_ms = update_rtt_ema(quality.rtt_ema_ms, rtt_sample, self.alpha)
            quality.last_heard_ms = now
        quality.etx = compute_etx(quality.pdr_forward, quality.pdr_reverse)
        return quality

    def pdr_towards(self, peer, link_id) -> float:
        window = self.ping_windows.get(_key(self.self, peer, link_id))
        return window.pdr() if window else 0.0

    def heard_at(self, node) -> Optional[float]:
        """Latest time ``node`` was heard directly, by self or by the neighbour behind it."""
        best = None
        for (a, b, link_id), q in self.edges.items():
            if node not in (a, b) or q.last_heard_ms is None:
                continue
            if q.advertised:
                if link_id == advertised_link(node):
                    continue
            elif self.self not in (a, b):
                continue
            if best is None or q.last_heard_ms > best:
                best = q.last_heard_ms
        return best

    def build_distance_vector(self, seq: int = 0, now=None) -> DistanceVector:
        adj = self.weights()
        dist = {self.self: 0.0}
        heap = [(0.0, self.self)]
        done = set()
        while heap:
            d, node = heapq.heappop(heap)
            if node in done:
                continue
            done.add(node)
            for nxt, w in adj[node].items():
                nd = d + w
                if nd < dist.get(nxt, float("inf")):
                    dist[nxt] = nd
                    heapq.heappush(heap, (nd, nxt))
        ages = {}
        if now is not None:
            for node in dist:
                heard = now if node == self.self else self.heard_at(node)
                if heard is not None:
                    ages[node] = max(0.0, now - heard)
        return DistanceVector(origin=self.self, entries=dist, seq=seq, ages=ages)

    def merge_distance_vector(self, dv: DistanceVector, now=None) -> bool:
        """Attach every node ``dv.origin`` can reach as a remote node behind it.

        Returns False when the vector is a replay (seq not newer) or the origin
        is not a direct neighbour.
        """
        if dv.origin == self.self or dv.origin not in self.neighbours():
            return False
        if dv.seq <= self.dv_seen.get(dv.origin, -1):
            return False
        self.dv_seen[dv.origin] = dv.seq
        link_id = advertised_link(dv.origin)
        for key in [k for k in self.edges if k[2] == link_id]:
            self.edges.pop(key)
        for remote, cost in sorted(dv.entries.items()):
            if remote in (self.self, dv.origin):
                continue
            heard = None if now is None else now - float(dv.ages.get(remote, 0.0))
            gone = self.departed_at.get(remote)
            if gone is not None and (heard is None or heard <= gone):
                continue  # evidence predates the departure
            self.add_edge(
                dv.origin,
                remote,
                link_id,
                LinkQuality(etx=float(cost), last_heard_ms=heard, advertised=True),
            )
        self._prune_isolated(now)
        return True

    def expire_links(self, now, timeout_ms, advertised_timeout_ms=None) -> list:
        """Drop links silent for ``timeout_ms``; advertised ones get twice that by default,
        since their observation time lags by one vector interval per hop."""
        if timeout_ms <= 0:
            raise DomainError("timeout must be positive")
        slack = 2 * timeout_ms if advertised_timeout_ms is None else advertised_timeout_ms
        removed = []
        for key, q in list(self.edges.items()):
            limit = slack if q.advertised else timeout_ms
            if q.last_heard_ms is None or now - q.last_heard_ms > limit:
                self.remove_edge(key)
                removed.append(key)
        self._prune_isolated(now)
        return removed

    def _prune_isolated(self, now):
        linked = {self.self}
        for a, b, _ in self.edges:
            linked.update((a, b))
        for node in self.nodes - linked:
            self.departed_at[node] = now
        self.nodes &= linked

    def probe_cloud(self, cloud, now) -> LinkQuality:
        """Measure the session channel to a cloud endpoint (master only).

        ``cloud`` needs a ``guid`` attribute and a ``probe()`` method returning
        the round-trip time in ms or raising Unreachable.
        """
        key = _key(self.self, cloud.guid, SESSION_LINK)
        try:
            rtt = cloud.probe()
        except Unreachable:
            self.remove_edge(key)
            self._prune_isolated(now)
            raise
        quality = self.edges.get(key)
        if quality is None:
            quality = self.add_edge(self.self, cloud.guid, SESSION_LINK, LinkQuality(channel="session"))
        quality.rtt_ema_ms = update_rtt_ema(quality.rtt_ema_ms, rtt, self.alpha)
        quality.last_heard_ms = now
        quality.etx = compute_etx(quality.pdr_forward, quality.pdr_reverse)
        return quality

    def get_network_info(self) -> "NetworkSnapshot":
        edges = tuple(
            sorted(
                (a, b, link, MappingProxyType(copy.deepcopy(q.to_dict())))
                for (a, b, link), q in self.edges.items()
            )
        )
        return NetworkSnapshot(self=self.self, nodes=tuple(sorted(self.nodes)), edges=edges)


@dataclass(frozen=True)
class NetworkSnapshot:
    self: str
    nodes: tuple
    edges: tuple = field(default=())

    def to_dict(self) -> dict:
        return {
            "self": self.self,
            "nodes": list(self.nodes),
            "edges": [dict(a=a, b=b, link_id=link, **dict(q)) for a, b, link, q in self.edges],
        }


def ping_message(guid, ips, seq, ts, master=False) -> dict:
    return {"type": "ping", "guid": guid, "ips": list(ips), "seq": seq, "ts": ts, "master": master}


def pong_message(guid, ips, seq, ts_echo, pdr_reverse, master=False) -> dict:
    return {
        "type": "pong",
        "guid": guid,
        "ips": list(ips),
        "seq": seq,
        "ts_echo": ts_echo,
        "pdr_reverse": pdr_reverse,
        "master": master,
    }
