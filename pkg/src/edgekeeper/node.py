"""An EdgeKeeper node: the event-driven glue between the protocol modules.

A node never reads the wall clock or starts threads; everything goes through
its runtime, which provides

    now() -> float ms
    call_later(delay_ms, fn) -> handle with .cancel()
    send(node, dst_ip, message_dict)
    resolve(node, hostname, callback)   # callback(list_of_ips or None)
    token_bytes(n) -> bytes
    emit(node, kind, **fields)          # observability hook

The discrete-event simulator and the asyncio daemon both implement it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields, replace
from typing import Optional

from . import api
from .auth import (
    Certificate,
    Challenge,
    Response,
    TrustStore,
    VouchPolicy,
    admit_node,
    b64d,
    issue_challenge,
    recheck_vouched,
    respond_challenge,
    verify_response,
    vouch,
)
from .cluster import (
    FORMED,
    LOOKING,
    MASTER,
    REPLICA,
    SLAVE,
    ClusterState,
    EdgeDigest,
    add_replica,
    apply_health_actions,
    discover_master,
    evaluate_replica_health,
    expire_departed_nodes,
    handle_join,
    merge_edges,
    needs_reset,
    phase_for,
    reset_quorum,
    top_up_replicas,
)
from .consensus import PUT, Leader, ReplicaLog, apply_message
from .errors import EdgeKeeperError, MasterNotFound, NoQuorum, Unreachable
from .naming import MASTER_HOSTNAME, GuidRecord, RecordStore
from .topology import DistanceVector, TopologyGraph, ping_message, pong_message

log = logging.getLogger(__name__)


@dataclass
class NodeConfig:
    target_r: int = 3
    ping_interval_ms: float = 10_000
    failure_multiplier: int = 4
    master_mode: bool = False
    gateway_fallback: bool = True
    ema_alpha: float = 0.125
    pdr_window: int = 20
    grace_ms: Optional[float] = None
    ack_timeout_ms: Optional[float] = None
    forward_timeout_ms: Optional[float] = None
    challenge_window_ms: float = 30_000
    auth_required: bool = True
    vouch_policy: str = VouchPolicy.ANY_AUTHENTICATED.value
    store_port: int = 2181

    @classmethod
    def from_dict(cls, data: dict) -> "NodeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def failure_timeout_ms(self) -> float:
        return self.failure_multiplier * self.ping_interval_ms

    @property
    def record_grace_ms(self) -> float:
        return self.grace_ms if self.grace_ms is not None else 3 * self.failure_timeout_ms

    @property
    def put_timeout_ms(self) -> float:
        return self.ack_timeout_ms if self.ack_timeout_ms is not None else 2 * self.ping_interval_ms

    @property
    def fwd_timeout_ms(self) -> float:
        if self.forward_timeout_ms is not None:
            return self.forward_timeout_ms
        return self.put_timeout_ms + self.ping_interval_ms


class EdgeNode:
    def __init__(self, runtime, credential, ips, config: Optional[NodeConfig] = None, *,
                 gateway=None, gns=None, cloud=None, device_sampler=None, alias=None, name=None):
        self.rt = runtime
        self.credential = credential
        self.guid = credential.guid
        self.ips = tuple(ips)
        self.cfg = config or NodeConfig()
        self.gateway = gateway
        self.gns = gns
        self.cloud = cloud
        self.device_sampler = device_sampler
        self.alias = alias
        self.name = name or self.guid[:8]

        self.alive = False
        self.store = RecordStore()
        self.graph = TopologyGraph(self.guid, window=self.cfg.pdr_window, alpha=self.cfg.ema_alpha)
        self.trust = TrustStore()
        self.cluster: Optional[ClusterState] = None
        self.leader: Optional[Leader] = None
        self.log: Optional[ReplicaLog] = None

        self.master_ip: Optional[str] = None
        self.master_guid: Optional[str] = None
        self.peers: dict = {}
        self.outstanding: dict = {}
        self.ping_seq = 0
        self.dv_seq = 0
        self.req_seq = 0
        self.auth_denied = False

        # master-only bookkeeping
        self.joined: set = set()
        self.verified: set = set()
        self.challenges: dict = {}
        self.pending_puts: dict = {}
        self.device_status: dict = {}
        self.peer_masters: set = set()
        self.merged_paths: dict = {}

        self.pending_fwd: dict = {}
        self._tick_handle = None

    # -- helpers ------------------------------------------------------------

    @property
    def is_master(self) -> bool:
        return self.leader is not None

    def now(self) -> float:
        return self.rt.now()

    def emit(self, kind, **data):
        self.rt.emit(self, kind, **data)

    def send(self, ip, msg: dict):
        if self.alive and ip is not None:
            self.rt.send(self, ip, msg)

    def ip_of(self, guid) -> Optional[str]:
        if guid == self.guid:
            return self.ips[0]
        ips = self.peers.get(guid)
        return ips[0] if ips else None

    def send_to(self, guid, msg: dict):
        self.send(self.ip_of(guid), msg)

    def learn_peer(self, guid, ips):
        if guid and guid != self.guid and ips:
            self.peers[guid] = tuple(ips)

    def own_record(self) -> GuidRecord:
        return self.store.get(self.guid)

    def serving(self) -> bool:
        """Whether client calls other than identity lookups are answered."""
        if self.cluster is None or self.auth_denied:
            return False
        if self.cluster.phase != FORMED:
            return False
        if not self.is_master:
            heard = self.graph.last_heard(self.master_guid) if self.master_guid else None
            if heard is None or self.now() - heard > self.cfg.failure_timeout_ms:
                return False
        return True

    # -- lifecycle ----------------------------------------------------------

    def start(self):
        self.alive = True
        now = self.now()
        self.store.upsert_record(
            GuidRecord(
                guid=self.guid,
                alias=self.alias,
                account_name=self.credential.account_name,
                net_addresses=self.ips,
                last_update=int(now),
            )
        )
        if self.cfg.master_mode:
            self._become_master()
            self._schedule_tick(0)
        else:
            self._discover()

    def stop(self):
        self.alive = False
        if self._tick_handle is not None:
            self._tick_handle.cancel()

    def _become_master(self):
        self.master_guid = self.guid
        self.master_ip = self.ips[0]
        self.log = ReplicaLog()
        self.leader = Leader(self.guid, self.log)
        if self.credential.ca_certificate is not None:
            self.trust.add_ca(self.credential.ca_certificate)
        self.trust.client_certs[self.guid] = self.credential.certificate
        self.verified.add(self.guid)
        self.cluster = ClusterState(
            master=self.guid,
            master_addresses=self.ips,
            replicas=(self.guid,),
            target_r=self.cfg.target_r,
            phase=phase_for(1, self.cfg.target_r),
            role_of_self=MASTER,
        )
        self.emit("master_start")
        self._announce_phase(force=True)

    def _discover(self):
        use_gateway = self.gateway if self.cfg.gateway_fallback else None

        def answered(ips):
            if not self.alive:
                return
            try:
                ip = discover_master(use_gateway, (lambda _h: ips) if ips else None)
            except MasterNotFound:
                self.rt.call_later(self.cfg.ping_interval_ms, self._discover)
                return
            self.master_ip = ip
            self.emit("master_found", ip=ip)
            self._schedule_tick(0)

        self.rt.resolve(self, MASTER_HOSTNAME, answered)

    def _schedule_tick(self, delay):
        self._tick_handle = self.rt.call_later(delay, self._tick)

    def _tick(self):
        if not self.alive:
            return
        now = self.now()
        self._resolve_lost_pings(now)
        if self.is_master:
            self._master_tick(now)
        else:
            self._slave_tick(now)
        self._send_pings(now)
        self._send_distance_vector()
        self._schedule_tick(self.cfg.ping_interval_ms)

    # -- topology -----------------------------------------------------------

    def ping_targets(self) -> list:
        targets = set()
        if self.master_ip and self.master_ip not in self.ips:
            targets.add(self.master_ip)
        for guid, ips in self.peers.items():
            targets.update(ips)
        return sorted(targets - set(self.ips))

    def _resolve_lost_pings(self, now):
        owners = {ip: g for g, ips in self.peers.items() for ip in ips}
        for ip, (seq, _sent) in sorted(self.outstanding.items()):
            peer = owners.get(ip)
            if peer is not None:
                self.graph.record_ping_outcome(peer, ip, seq, None, now)
        self.outstanding.clear()

    def _send_pings(self, now):
        for ip in self.ping_targets():
            self.ping_seq += 1
            self.outstanding[ip] = (self.ping_seq, now)
            self.send(ip, ping_message(self.guid, self.ips, self.ping_seq, now, self.is_master))

    def _send_distance_vector(self):
        self.dv_seq += 1
        msg = self.graph.build_distance_vector(self.dv_seq, self.now()).to_message()
        for guid in sorted(self.graph.neighbours()):
            if self.graph.best_etx(guid) is not None:
                self.send_to(guid, msg)

    def _on_ping(self, src, msg):
        peer = msg["guid"]
        self.learn_peer(peer, msg.get("ips") or [src])
        self.graph.touch(peer, src, self.now())
        if msg.get("master") and self.is_master:
            self.peer_masters.add(peer)
        self.send(
            src,
            pong_message(self.guid, self.ips, msg["seq"], msg.get("ts"),
                         self.graph.pdr_towards(peer, src), self.is_master),
        )

    def _on_pong(self, src, msg):
        pending = self.outstanding.get(src)
        if pending is None or pending[0] != msg.get("seq"):
            return
        del self.outstanding[src]
        now = self.now()
        peer = msg["guid"]
        self.learn_peer(peer, msg.get("ips") or [src])
        if src == self.master_ip and not self.is_master:
            self.master_guid = peer
        if msg.get("master") and self.is_master and peer != self.guid:
            self.peer_masters.add(peer)
        self.graph.record_ping_outcome(peer, src, msg["seq"], now - pending[1], now, msg.get("pdr_reverse"))

    def _on_dv(self, src, msg):
        self.graph.merge_distance_vector(DistanceVector.from_message(msg), self.now())

    # -- master duties --------------------------------------------------------

    def _master_tick(self, now):
        timeout = self.cfg.failure_timeout_ms
        actions = evaluate_replica_health(
            self.cluster, self.graph, now, self.cfg.ping_interval_ms,
            self.cfg.failure_multiplier, self.joined,
        )
        if actions:
            reset = needs_reset(self.cluster, actions)
            self.emit(
                "health_decision",
                actions=[{"remove": a.remove, "add": a.add} for a in actions],
                reset=reset,
            )
            if reset:
                self._reset_quorum(now)
            else:
                self._set_cluster(apply_health_actions(self.cluster, actions))
        topped = top_up_replicas(self.cluster, self.graph, now, timeout, self.joined)
        if topped.replicas != self.cluster.replicas:
            self._set_cluster(topped)
        self.graph.expire_links(now, timeout)
        for guid in expire_departed_nodes(self.cluster, self.store, self.graph, now, self.cfg.record_grace_ms):
            self.joined.discard(guid)
            self.emit("record_expired", guid=guid)
        if self.cloud is not None:
            try:
                self.graph.probe_cloud(self.cloud, now)
            except Unreachable:
                pass
        for guid, msg in self.leader.heartbeat():
            self.send_to(guid, msg)
        if self.gns is not None and self.store.dirty:
            self.store.sync_to_gns(self.gns)
        if self.gns is not None and self.gns.reachable and self.trust.vouched:
            for guid in recheck_vouched(self.trust, self.gns):
                log.warning("%s: vouched node %s has a CA unknown to the GNS; keeping it", self.name, guid)
                self.emit("vouch_unverified", guid=guid)
        self._sample_device(now)
        records = {"type": "records", "records": [self.store.get(g).to_wire() for g in self.store.guids()]}
        for guid in sorted(self.joined):
            self.send_to(guid, records)
        if self.peer_masters:
            digest = EdgeDigest(
                origin_master=self.guid,
                records=tuple(self.store.get(g) for g in self.store.guids()),
                metadata_paths=tuple(self._directory_paths()),
            ).to_message()
            digest["cert"] = self.credential.certificate.to_dict()
            for guid in sorted(self.peer_masters):
                self.send_to(guid, digest)

    def _directory_paths(self) -> list:
        return [p for p in sorted(self.log.state) if not p.startswith(("/status/", "/edges/"))]

    def _set_cluster(self, new: ClusterState):
        old = self.cluster
        self.cluster = new
        for guid, msg in self.leader.apply_membership(new.replicas, new.epoch):
            self.send_to(guid, msg)
        notice = {
            "type": "replica_set",
            "epoch": new.epoch,
            "replicas": [{"guid": g, "ip": self.ip_of(g)} for g in new.replicas],
        }
        for guid in sorted(set(new.replicas) | set(old.replicas if old else ())):
            if guid != self.guid:
                self.send_to(guid, notice)
        self._announce_phase()

    def _announce_phase(self, force=False):
        prior = (self.cluster.phase, self.cluster.replicas, getattr(self, "_synced_seen", None))
        synced = tuple(g for g in self.cluster.replicas if g in self.leader.synced_members())
        phase = phase_for(len(synced), self.cluster.target_r)
        self.cluster = replace(self.cluster, phase=phase)
        self._synced_seen = synced
        if force or prior != (phase, self.cluster.replicas, synced):
            self.emit(
                "phase",
                phase=phase,
                epoch=self.cluster.epoch,
                replicas=list(self.cluster.replicas),
                synced=list(synced),
            )

    def _reset_quorum(self, now):
        new = reset_quorum(self.cluster, self.graph, now, self.cfg.failure_timeout_ms, self.joined)
        for index in sorted(self.pending_puts):
            self._finish_put(index, error=NoQuorum("quorum reset; uncommitted write discarded"))
        self.emit("reset", epoch=new.epoch)
        self._set_cluster(new)

    def _gate(self, guid, cert_obj, src, action, on_deny):
        """Run ``action`` once ``guid`` proved key ownership and is trusted."""
        if not self.cfg.auth_required:
            action()
            return
        cert = Certificate.from_dict(cert_obj) if cert_obj else None
        if guid not in self.verified:
            if cert is None:
                on_deny()
                return
            ch = issue_challenge(src, self.now(), self.rt.token_bytes, self.cfg.challenge_window_ms)
            self.challenges[guid] = (ch, cert, action, on_deny)
            msg = ch.to_message()
            msg["guid"] = self.guid
            self.send(src, msg)
            return
        if guid in self.trust.client_certs:
            action()
            return
        if cert is not None and cert.guid == guid and admit_node(self.trust, cert, self.gns).admitted:
            self.emit("admitted", guid=guid)
            action()
            return
        on_deny()

    def _on_chalresp(self, src, msg):
        entry = self.challenges.pop(msg.get("guid"), None)
        if entry is None:
            return
        ch, cert, action, on_deny = entry
        guid = msg["guid"]
        if cert.guid != guid or not verify_response(guid, ch, Response.from_message(msg), self.now()):
            self.emit("auth_failed", guid=guid)
            on_deny()
            return
        self.verified.add(guid)
        self._gate(guid, cert.to_dict(), src, action, on_deny)

    def _on_join(self, src, msg):
        guid = msg["guid"]
        self.learn_peer(guid, msg.get("ips") or [src])

        def accept():
            self.joined.add(guid)
            if msg.get("record"):
                try:
                    self.store.merge_record(GuidRecord.from_wire(msg["record"]))
                except EdgeKeeperError:
                    pass
            resp = handle_join(self.cluster, {"guid": guid, "ips": msg.get("ips")}, self.graph, True,
                               self.peers, self.now(), self.cfg.failure_timeout_ms)
            if resp.become_replica and guid not in self.cluster.replicas:
                self._set_cluster(add_replica(self.cluster, guid))
                resp = handle_join(self.cluster, {"guid": guid}, self.graph, True, self.peers)
            out = resp.to_message()
            out["replicas"] = [{"guid": g, "ip": self.ip_of(g)} for g in self.cluster.replicas]
            out["target_r"] = self.cluster.target_r
            self.send(src, out)

        def deny():
            self.send(src, {"type": "join_resp", "phase": LOOKING, "replicas": [],
                            "become_replica": False, "error": "EAUTH"})

        self._gate(guid, msg.get("cert"), src, accept, deny)

    def _on_ack(self, src, msg):
        if not self.is_master:
            return
        committed = self.leader.on_ack(msg["guid"], int(msg["epoch"]), int(msg["index"]))
        for index in committed:
            self._finish_put(index)
        self._announce_phase()

    def _on_nack(self, src, msg):
        if not self.is_master:
            return
        for guid, out in self.leader.on_nack(msg["guid"], int(msg["epoch"]), int(msg["expected"])):
            self.send_to(guid, out)

    def _finish_put(self, index, error=None):
        pending = self.pending_puts.pop(index, None)
        if pending is None:
            return
        respond, timer, epoch = pending
        timer.cancel()
        if error is None:
            respond({"epoch": epoch, "index": index})
        else:
            respond(error)

    def _on_record(self, src, msg):
        if self.is_master:
            try:
                self.store.merge_record(GuidRecord.from_wire(msg["record"]))
            except EdgeKeeperError:
                pass

    def _on_devstatus(self, src, msg):
        if self.is_master:
            self._store_device_status(msg["status"])

    def _store_device_status(self, status: dict):
        current = self.device_status.get(status["guid"])
        if current is None or status["reported_at"] >= current["reported_at"]:
            self.device_status[status["guid"]] = status

    def _sample_device(self, now):
        if self.device_sampler is None:
            return
        status = api.DeviceStatus.from_sample(self.guid, self.device_sampler(now), now).to_dict()
        if self.is_master:
            self._store_device_status(status)
        elif self.master_ip:
            self.send(self.master_ip, {"type": "devstatus", "guid": self.guid, "status": status})

    def _on_digest(self, src, msg):
        if not self.is_master:
            return
        origin = msg["origin"]

        def accept():
            report = merge_edges(self.cluster, EdgeDigest.from_message(msg), self.store,
                                 self.trust.client_certs if self.cfg.auth_required else None)
            if report.added or report.updated:
                self.emit("merge", origin=origin, added=report.added, updated=report.updated)
            if report.paths != self.merged_paths.get(origin) and self.serving():
                value = json.dumps(report.paths).encode()
                self.put_metadata(f"/edges/{origin}/paths", value, lambda _r: None)
                self.merged_paths[origin] = report.paths

        self._gate(origin, msg.get("cert"), src, accept, lambda: None)

    def _on_vouch(self, src, msg):
        if not self.is_master:
            return
        voucher = msg["voucher_guid"]
        cert = Certificate.from_dict(msg["cert"])

        def accept():
            result = admit_node(self.trust, cert, self.gns)
            gns_up = self.gns is not None and self.gns.reachable
            if not result.admitted and cert.issuer not in self.trust.ca_certs and not gns_up:
                result = vouch(self.trust, voucher, cert, self.cfg.vouch_policy,
                               self.credential.certificate.issuer)
            self.emit("vouch", voucher=voucher, guid=cert.guid, via=result.via.value)
            self.send(src, {"type": "vouch_resp", "guid": cert.guid, "admitted": result.admitted,
                            "via": result.via.value})

        def deny():
            self.send(src, {"type": "vouch_resp", "guid": cert.guid, "admitted": False, "via": "denied"})

        if voucher in self.verified and voucher in self.trust.client_certs:
            accept()
        else:
            deny()

    # -- slave duties ---------------------------------------------------------

    def _slave_tick(self, now):
        self.graph.expire_links(now, self.cfg.failure_timeout_ms)
        if self.cluster is not None and not self.serving() and self.cluster.phase == FORMED:
            self.cluster = replace(self.cluster, phase=LOOKING)
            self.emit("phase", phase=LOOKING, epoch=self.cluster.epoch, replicas=list(self.cluster.replicas))
        self.send(self.master_ip, self._join_message())
        self._sample_device(now)

    def _join_message(self) -> dict:
        return {
            "type": "join",
            "guid": self.guid,
            "ips": list(self.ips),
            "cert": self.credential.certificate.to_dict(),
            "record": self.own_record().to_wire(),
        }

    def _on_chal(self, src, msg):
        ch = Challenge(nonce=b64d(msg["nonce_b64"]), issued_to=self.ips[0], issued_at=self.now())
        out = respond_challenge(ch, self.credential).to_message()
        out["guid"] = self.guid
        self.send(src, out)

    def _on_join_resp(self, src, msg):
        if self.is_master:
            return
        if msg.get("error"):
            if not self.auth_denied:
                self.emit("auth_denied")
            self.auth_denied = True
            return
        self.auth_denied = False
        master = msg.get("master") or self.master_guid
        self.master_guid = master
        self._mirror(msg.get("replicas", []), msg.get("phase", LOOKING), int(msg.get("epoch", 0)),
                     int(msg.get("target_r", self.cfg.target_r)))

    def _on_replica_set(self, src, msg):
        if self.is_master or src != self.master_ip:
            return
        phase = self.cluster.phase if self.cluster else LOOKING
        target = self.cluster.target_r if self.cluster else self.cfg.target_r
        self._mirror(msg.get("replicas", []), phase, int(msg.get("epoch", 0)), target)

    def _mirror(self, replicas, phase, epoch, target_r):
        guids = tuple(r["guid"] for r in replicas)
        for r in replicas:
            if r.get("ip"):
                self.learn_peer(r["guid"], [r["ip"]] if r["guid"] not in self.peers else self.peers[r["guid"]])
        role = REPLICA if self.guid in guids else SLAVE
        if role == SLAVE and self.log is not None:
            self.log = None
        before = self.cluster
        self.cluster = ClusterState(
            master=self.master_guid,
            master_addresses=(self.master_ip,),
            replicas=guids if self.master_guid in guids else (),
            target_r=max(target_r, len(guids)),
            phase=phase,
            epoch=epoch,
            role_of_self=role,
        )
        if before is None or (before.phase, before.role_of_self) != (phase, role):
            self.emit("phase", phase=phase, epoch=epoch, replicas=list(guids), role=role)

    def _on_replication(self, src, msg):
        if self.is_master:
            if src not in self.ips:
                return
            reply = apply_message(self.log, msg)
        else:
            if src != self.master_ip:
                return
            if self.log is None:
                if msg["type"] != "snap":
                    self.send(src, {"type": "nack", "epoch": msg["epoch"], "expected": 1, "guid": self.guid})
                    return
                self.log = ReplicaLog()
            reply = apply_message(self.log, msg)
        reply["guid"] = self.guid
        self.send(src, reply)

    def _on_records(self, src, msg):
        if self.is_master or src != self.master_ip:
            return
        seen = {self.guid}
        for wire in msg.get("records", []):
            try:
                record = GuidRecord.from_wire(wire)
            except EdgeKeeperError:
                continue
            seen.add(record.guid)
            self.store.merge_record(record)
        for guid in self.store.guids():
            if guid not in seen:
                self.store.remove(guid)

    def publish_own_record(self):
        if not self.is_master and self.master_ip:
            self.send(self.master_ip, {"type": "record", "guid": self.guid, "record": self.own_record().to_wire()})

    def request_vouch(self, cert: Certificate):
        self.send(self.master_ip, {"type": "vouch", "guid": self.guid, "voucher_guid": self.guid,
                                   "cert": cert.to_dict()})

    # -- client-facing primitives --------------------------------------------

    def forward(self, method, params, respond):
        """Send a client call to the master and answer when it replies or times out."""
        self.req_seq += 1
        req = self.req_seq

        def expire():
            if self.pending_fwd.pop(req, None) is not None:
                respond(NoQuorum(f"{method}: no answer from the master"))

        timer = self.rt.call_later(self.cfg.fwd_timeout_ms, expire)
        self.pending_fwd[req] = (respond, timer)
        self.send(self.master_ip, {"type": "fwd", "guid": self.guid, "req": req,
                                   "method": method, "params": params})

    def _on_fwd(self, src, msg):
        if not self.is_master:
            return
        req = msg["req"]

        def reply(outcome):
            out = {"type": "fwd_resp", "req": req}
            if isinstance(outcome, EdgeKeeperError):
                out["error"] = {"code": outcome.code, "message": str(outcome)}
            else:
                out["result"] = outcome
            self.send(src, out)

        api.execute(self, msg["method"], msg.get("params") or {}, reply)

    def _on_fwd_resp(self, src, msg):
        pending = self.pending_fwd.pop(msg.get("req"), None)
        if pending is None:
            return
        respond, timer = pending
        timer.cancel()
        if "error" in msg:
            respond(api.error_from_code(msg["error"]["code"], msg["error"].get("message", "")))
        else:
            respond(msg["result"])

    def put_metadata(self, path, value: bytes, respond):
        """Master side of putMetadata; ``respond`` gets a version dict or an exception."""
        index, messages = self.leader.propose(PUT, path, value)
        epoch = self.leader.epoch
        timer = self.rt.call_later(
            self.cfg.put_timeout_ms,
            lambda: self._finish_put(index, error=NoQuorum(f"write {index} not acknowledged in time")),
        )
        self.pending_puts[index] = (respond, timer, epoch)
        for guid, msg in messages:
            self.send_to(guid, msg)

    # -- message entry point --------------------------------------------------

    HANDLERS = {
        "ping": "_on_ping",
        "pong": "_on_pong",
        "dv": "_on_dv",
        "join": "_on_join",
        "join_resp": "_on_join_resp",
        "chal": "_on_chal",
        "chalresp": "_on_chalresp",
        "replica_set": "_on_replica_set",
        "append": "_on_replication",
        "snap": "_on_replication",
        "ack": "_on_ack",
        "nack": "_on_nack",
        "records": "_on_records",
        "record": "_on_record",
        "devstatus": "_on_devstatus",
        "digest": "_on_digest",
        "vouch": "_on_vouch",
        "fwd": "_on_fwd",
        "fwd_resp": "_on_fwd_resp",
    }

    def receive(self, src: str, msg: dict):
        if not self.alive:
            return
        handler = self.HANDLERS.get(msg.get("type"))
        if handler is None:
            return
        try:
            getattr(self, handler)(src, msg)
        except (KeyError, TypeError, ValueError, EdgeKeeperError) as exc:
            log.debug("%s dropped malformed %s from %s: %s", self.name, msg.get("type"), src, exc)
