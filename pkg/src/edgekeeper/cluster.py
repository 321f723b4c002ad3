"""Edge lifecycle decisions made by the master.

These are pure functions over a ClusterState and the master's topology graph:
who the master is, which neighbours serve as replicas, when a silent replica
gets replaced, when the quorum must be rebuilt from scratch, and how records
from a neighbouring edge are folded in. The node runtime applies the results.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

from .errors import MasterNotFound, NotFound, StaleUpdate, Unauthenticated, Unreachable
from .naming import MASTER_HOSTNAME, GuidRecord, RecordStore

LOOKING = "looking"
FORMED = "formed"
MASTER, REPLICA, SLAVE = "master", "replica", "slave"

DEFAULT_TARGET_R = 3
DEFAULT_PING_INTERVAL_MS = 10_000
DEFAULT_FAILURE_MULTIPLIER = 4


def majority(n: int) -> int:
    return n // 2 + 1


def phase_for(replica_count: int, target_r: int) -> str:
    return FORMED if replica_count >= majority(target_r) else LOOKING


@dataclass(frozen=True)
class ClusterState:
    master: str
    master_addresses: tuple = ()
    replicas: tuple = ()
    target_r: int = DEFAULT_TARGET_R
    phase: str = LOOKING
    epoch: int = 0
    role_of_self: str = SLAVE

    def __post_init__(self):
        if self.target_r < 1:
            raise ValueError("target_r must be a positive integer")
        if len(self.replicas) > self.target_r:
            raise ValueError(f"{len(self.replicas)} replicas exceed target {self.target_r}")
        if self.replicas and self.master not in self.replicas:
            raise ValueError("the master must be one of the replicas")


@dataclass(frozen=True)
class JoinResponse:
    replica_status: str
    replica_addresses: tuple
    become_replica: bool
    master: Optional[str] = None
    epoch: int = 0

    def to_message(self) -> dict:
        return {
            "type": "join_resp",
            "phase": self.replica_status,
            "replicas": [{"guid": g, "ip": ip} for g, ip in self.replica_addresses],
            "become_replica": self.become_replica,
            "master": self.master,
            "epoch": self.epoch,
        }


@dataclass(frozen=True)
class ReplicaAction:
    remove: str
    add: Optional[str] = None


@dataclass(frozen=True)
class EdgeDigest:
    origin_master: str
    records: tuple = ()
    metadata_paths: tuple = ()

    def to_message(self) -> dict:
        return {
            "type": "digest",
            "origin": self.origin_master,
            "records": [r.to_wire() for r in self.records],
            "paths": list(self.metadata_paths),
        }

    @classmethod
    def from_message(cls, msg: dict) -> "EdgeDigest":
        return cls(
            origin_master=msg["origin"],
            records=tuple(GuidRecord.from_wire(r) for r in msg.get("records", [])),
            metadata_paths=tuple(msg.get("paths", [])),
        )


@dataclass
class MergeReport:
    added: list = field(default_factory=list)
    updated: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    paths: list = field(default_factory=list)


def discover_master(gateway_ip: Optional[str] = None, resolver: Optional[Callable] = None) -> str:
    """Find the master: the well-known hostname first, then the default gateway."""
    if resolver is not None:
        try:
            answer = resolver(MASTER_HOSTNAME)
        except (NotFound, Unreachable, OSError):
            answer = None
        if answer:
            return answer[0] if isinstance(answer, (list, tuple)) else answer
    if gateway_ip:
        return gateway_ip
    raise MasterNotFound("no resolver answer and no gateway to fall back on")


def is_eligible(graph, guid, master, now=None, fresh_ms=None, candidates=None) -> bool:
    if guid == master or (candidates is not None and guid not in candidates):
        return False
    if graph.best_etx(guid) is None:
        return False
    if now is not None and fresh_ms is not None:
        heard = graph.last_heard(guid)
        if heard is None or now - heard > fresh_ms:
            return False
    return True


def rank_candidates(graph, master, exclude=(), now=None, fresh_ms=None, candidates=None) -> list:
    """Eligible one-hop neighbours, cheapest ETx to the master first, ties by GUID."""
    pool = [
        g
        for g in graph.neighbours()
        if g not in exclude and is_eligible(graph, g, master, now, fresh_ms, candidates)
    ]
    return sorted(pool, key=lambda g: (graph.best_etx(g), g))


def select_replicas(state: ClusterState, graph, now=None, fresh_ms=None, candidates=None):
    if state.target_r == 1:
        return (state.master,), FORMED
    chosen = rank_candidates(graph, state.master, now=now, fresh_ms=fresh_ms, candidates=candidates)
    replicas = (state.master, *chosen[: state.target_r - 1])
    return replicas, phase_for(len(replicas), state.target_r)


def top_up_replicas(state: ClusterState, graph, now=None, fresh_ms=None, candidates=None) -> ClusterState:
    """Fill free replica slots without disturbing the replicas already serving."""
    missing = state.target_r - len(state.replicas)
    replicas = state.replicas or (state.master,)
    if missing > 0:
        extra = rank_candidates(graph, state.master, replicas, now, fresh_ms, candidates)
        replicas = (*replicas, *extra[: state.target_r - len(replicas)])
    return replace(state, replicas=replicas, phase=phase_for(len(replicas), state.target_r))


def handle_join(state: ClusterState, new_node: dict, graph, authenticated=True, addresses=None,
                now=None, fresh_ms=None) -> JoinResponse:
    if not authenticated:
        raise Unauthenticated(f"{new_node.get('guid')} has not passed authentication")
    guid = new_node["guid"]
    become = guid in state.replicas or (
        len(state.replicas) < state.target_r and is_eligible(graph, guid, state.master, now, fresh_ms)
    )
    addresses = addresses or {}
    replica_addresses = tuple(
        (g, (addresses.get(g) or [None])[0]) for g in state.replicas
    )
    return JoinResponse(
        replica_status=state.phase,
        replica_addresses=replica_addresses,
        become_replica=become,
        master=state.master,
        epoch=state.epoch,
    )


def add_replica(state: ClusterState, guid: str) -> ClusterState:
    if guid in state.replicas:
        return state
    replicas = (*(state.replicas or (state.master,)), guid)
    return replace(state, replicas=replicas, phase=phase_for(len(replicas), state.target_r))


def evaluate_replica_health(state: ClusterState, graph, now, ping_interval_ms,
                            failure_multiplier=DEFAULT_FAILURE_MULTIPLIER, candidates=None) -> list:
    """Replace every replica not heard from for ``failure_multiplier`` ping intervals."""
    timeout = failure_multiplier * ping_interval_ms
    silent = []
    for g in state.replicas:
        if g == state.master:
            continue
        heard = graph.last_heard(g)
        if heard is None or now - heard > timeout:
            silent.append(g)
    if not silent:
        return []
    spares = rank_candidates(graph, state.master, state.replicas, now, timeout, candidates)
    return [ReplicaAction(remove=g, add=spares[i] if i < len(spares) else None) for i, g in enumerate(silent)]


def needs_reset(state: ClusterState, actions: Iterable[ReplicaAction]) -> bool:
    """True when a majority of the replica set departed within one health check."""
    removed = sum(1 for a in actions)
    return len(state.replicas) > 1 and removed >= majority(len(state.replicas))


def apply_health_actions(state: ClusterState, actions: Iterable[ReplicaAction]) -> ClusterState:
    replicas = list(state.replicas)
    for action in actions:
        if action.remove in replicas:
            replicas.remove(action.remove)
        if action.add is not None and action.add not in replicas:
            replicas.append(action.add)
    return replace(state, replicas=tuple(replicas), phase=phase_for(len(replicas), state.target_r))


def reset_quorum(state: ClusterState, graph, now=None, fresh_ms=None, candidates=None) -> ClusterState:
    """Rebuild the replica set from scratch under a new epoch (data is not carried over)."""
    replicas, phase = select_replicas(state, graph, now, fresh_ms, candidates)
    return replace(state, replicas=replicas, phase=phase, epoch=state.epoch + 1)


def merge_edges(local_state: ClusterState, digest: EdgeDigest, store: RecordStore,
                trusted=None) -> MergeReport:
    """Fold a neighbouring master's records into the local store, last writer wins."""
    report = MergeReport()
    if digest.origin_master == local_state.master:
        return report
    if trusted is not None and digest.origin_master not in trusted:
        raise Unauthenticated(f"digest from unauthenticated master {digest.origin_master}")
    for record in digest.records:
        known = record.guid in store
        if known and store.get(record.guid) == record:
            continue
        try:
            store.upsert_record(record)
        except StaleUpdate:
            report.rejected.append(record.guid)
            continue
        (report.updated if known else report.added).append(record.guid)
    report.paths = sorted(digest.metadata_paths)
    return report


def expire_departed_nodes(state: ClusterState, store: RecordStore, graph, now, grace_ms) -> list:
    """Drop records of non-replica nodes missing from the topology for ``grace_ms``."""
    removed = []
    for guid in store.guids():
        if guid == state.master or guid in state.replicas or guid in graph.nodes:
            continue
        absent_since = graph.departed_at.get(guid, store.get(guid).last_update)
        if now - absent_since > grace_ms:
            store.remove(guid)
            removed.append(guid)
    return removed
