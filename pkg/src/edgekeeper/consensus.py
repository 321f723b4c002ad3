"""Majority-quorum replicated metadata log.

The cluster master is the only leader. It appends put/delete records to its
log, replicates them to the current replica set and commits an index once a
majority of caught-up members (itself included) acknowledged it. A quorum
reset starts a new epoch whose log is seeded with a single wipe record, so
everything committed in earlier epochs is gone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .auth import b64d, b64e
from .errors import InvalidPath, NoQuorum, NotFound, StaleEpoch, ValueTooLarge

MAX_VALUE_BYTES = 1 << 20
PUT, DELETE, WIPE = "put", "delete", "wipe"


def normalize_path(path: str) -> str:
    if not isinstance(path, str):
        raise InvalidPath("path must be a string")
    parts = [p for p in path.split("/") if p]
    if not parts:
        raise InvalidPath(f"empty path {path!r}")
    if any(p == ".." for p in parts):
        raise InvalidPath(f"'..' not allowed in {path!r}")
    return "/" + "/".join(parts)


def quorum_size(members: int) -> int:
    return members // 2 + 1


@dataclass(frozen=True)
class LogRecord:
    index: int
    epoch: int
    op: str
    path: Optional[str] = None
    value: Optional[bytes] = None

    def to_dict(self) -> dict:
        out = {"index": self.index, "epoch": self.epoch, "op": self.op}
        if self.path is not None:
            out["path"] = self.path
        if self.value is not None:
            out["value_b64"] = b64e(self.value)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "LogRecord":
        value = obj.get("value_b64")
        return cls(
            index=int(obj["index"]),
            epoch=int(obj["epoch"]),
            op=obj["op"],
            path=obj.get("path"),
            value=b64d(value) if value is not None else None,
        )


@dataclass(frozen=True)
class QuorumConfig:
    members: tuple
    leader: str

    @property
    def quorum_size(self) -> int:
        return quorum_size(len(self.members))


class ReplicaLog:
    """One member's copy of the log and the state folded from its committed prefix."""

    def __init__(self, epoch: int = 0):
        self.epoch = epoch
        self.entries: list = []
        self.committed_index = 0
        self.state: dict = {}

    @property
    def last_index(self) -> int:
        return len(self.entries)

    def _apply(self, rec: LogRecord):
        if rec.op == PUT:
            self.state[rec.path] = (rec.value, (rec.epoch, rec.index))
        elif rec.op == DELETE:
            self.state.pop(rec.path, None)
        elif rec.op == WIPE:
            self.state.clear()

    def commit_to(self, index: int) -> list:
        index = min(index, self.last_index)
        newly = []
        while self.committed_index < index:
            self.committed_index += 1
            self._apply(self.entries[self.committed_index - 1])
            newly.append(self.committed_index)
        return newly

    def _reset(self, epoch):
        self.epoch = epoch
        self.entries = []
        self.committed_index = 0
        self.state = {}

    def append_entries(self, epoch, prev_index, entries, leader_commit=0) -> dict:
        """Follower side of replication; returns the ack or nack message."""
        if epoch < self.epoch:
            return {"type": "nack", "epoch": epoch, "expected": 1}
        if epoch > self.epoch:
            if prev_index != 0:
                return {"type": "nack", "epoch": epoch, "expected": 1}
            self._reset(epoch)
        if prev_index > self.last_index:
            return {"type": "nack", "epoch": epoch, "expected": self.last_index + 1}
        for offset, rec in enumerate(entries):
            index = prev_index + offset + 1
            if index <= self.last_index:
                continue  # already held; within an epoch the leader never rewrites
            self.entries.append(rec)
        self.commit_to(leader_commit)
        return {"type": "ack", "epoch": epoch, "index": self.last_index}

    def install_snapshot(self, epoch, committed_index, entries) -> dict:
        self._reset(epoch)
        self.entries = list(entries)
        self.commit_to(committed_index)
        return {"type": "ack", "epoch": epoch, "index": self.last_index}

    def wipe(self, epoch: int):
        if epoch <= self.epoch:
            raise StaleEpoch(f"epoch {epoch} is not newer than {self.epoch}")
        self._reset(epoch)
        self.entries.append(LogRecord(index=1, epoch=epoch, op=WIPE))
        self.commit_to(1)

    def get(self, path: str):
        try:
            return self.state[normalize_path(path)]
        except KeyError:
            raise NotFound(f"no metadata at {path}") from None

    def state_bytes(self) -> bytes:
        """Canonical encoding of the applied state, for equality checks."""
        return json.dumps(
            {p: [b64e(v), list(ver)] for p, (v, ver) in sorted(self.state.items())},
            separators=(",", ":"),
        ).encode()

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "epoch": self.epoch,
                    "committed_index": self.committed_index,
                    "entries": [e.to_dict() for e in self.entries],
                },
                fh,
                indent=2,
            )


@dataclass
class Progress:
    next_index: int = 1
    match_index: int = 0
    synced: bool = False


class Leader:
    """Leader-side replication state held by the cluster master.

    Methods return ``(destination_guid, message)`` pairs for the caller to
    send; the leader itself is a member and is reached over loopback like any
    other, so its own durable acknowledgement travels the same path.
    """

    def __init__(self, self_guid: str, log: Optional[ReplicaLog] = None):
        self.self = self_guid
        self.log = log if log is not None else ReplicaLog()
        self.progress: dict = {self_guid: Progress(self.log.last_index + 1, self.log.last_index, True)}

    @property
    def epoch(self) -> int:
        return self.log.epoch

    @property
    def members(self) -> tuple:
        return tuple(self.progress)

    @property
    def config(self) -> QuorumConfig:
        return QuorumConfig(members=self.members, leader=self.self)

    def synced_members(self) -> list:
        return [g for g, p in self.progress.items() if p.synced]

    def has_quorum(self) -> bool:
        return len(self.synced_members()) >= self.config.quorum_size

    # -- client operations --------------------------------------------------

    def propose(self, op: str, path: str, value: Optional[bytes] = None):
        path = normalize_path(path)
        if op == PUT:
            if not isinstance(value, (bytes, bytearray)):
                raise TypeError("metadata values are bytes")
            if len(value) > MAX_VALUE_BYTES:
                raise ValueTooLarge(f"{len(value)} bytes exceeds {MAX_VALUE_BYTES}")
            value = bytes(value)
        if not self.has_quorum():
            raise NoQuorum(f"{len(self.synced_members())} synced of quorum {self.config.quorum_size}")
        rec = LogRecord(index=self.log.last_index + 1, epoch=self.epoch, op=op, path=path, value=value)
        self.log.entries.append(rec)
        return rec.index, [(g, self.replicate_step(g)) for g in self.synced_members()]

    def get(self, path: str):
        if not self.has_quorum():
            raise NoQuorum("leader lacks a synced quorum")
        return self.log.get(path)

    get_metadata = get

    # -- replication --------------------------------------------------------

    def replicate_step(self, member: str) -> dict:
        p = self.progress[member]
        if not p.synced:
            return self.snapshot_message()
        prev = p.next_index - 1
        return {
            "type": "append",
            "epoch": self.epoch,
            "prev_index": prev,
            "entries": [e.to_dict() for e in self.log.entries[prev:]],
            "commit": self.log.committed_index,
        }

    def snapshot_message(self) -> dict:
        return {
            "type": "snap",
            "epoch": self.epoch,
            "committed_index": self.log.committed_index,
            "state": {p: b64e(v) for p, (v, _) in sorted(self.log.state.items())},
            "entries": [e.to_dict() for e in self.log.entries],
        }

    def heartbeat(self) -> list:
        return [(g, self.replicate_step(g)) for g in self.progress if g != self.self]

    def on_ack(self, member: str, epoch: int, index: int) -> list:
        """Record an acknowledgement; returns the indices it newly committed."""
        p = self.progress.get(member)
        if p is None or epoch != self.epoch:
            return []
        p.synced = True
        p.match_index = max(p.match_index, min(index, self.log.last_index))
        p.next_index = p.match_index + 1
        return self._advance()

    def on_nack(self, member: str, epoch: int, expected: int) -> list:
        p = self.progress.get(member)
        if p is None or epoch != self.epoch or not p.synced:
            return []
        p.next_index = max(1, min(expected, self.log.last_index + 1))
        p.match_index = min(p.match_index, p.next_index - 1)
        return [(member, self.replicate_step(member))]

    def _advance(self) -> list:
        need = self.config.quorum_size
        for n in range(self.log.last_index, self.log.committed_index, -1):
            acked = sum(1 for p in self.progress.values() if p.synced and p.match_index >= n)
            if acked >= need:
                return self.log.commit_to(n)
        return []

    def apply_membership(self, members, epoch: int) -> list:
        """Move to a new replica set; a newer epoch wipes the log first."""
        members = list(dict.fromkeys([self.self, *members]))
        if epoch < self.epoch:
            raise StaleEpoch(f"epoch {epoch} older than {self.epoch}")
        if epoch > self.epoch:
            self.log.wipe(epoch)
            self.progress = {
                g: Progress(1, 0, False) if g != self.self else Progress(2, 1, True) for g in members
            }
        elif members == list(self.progress):
            return []
        else:
            old = self.progress
            self.progress = {g: old.get(g) or Progress(1, 0, False) for g in members}
        return [(g, self.snapshot_message()) for g, p in self.progress.items() if not p.synced]


def apply_message(log: ReplicaLog, msg: dict) -> dict:
    """Dispatch an append or snap message to a follower log."""
    if msg["type"] == "append":
        return log.append_entries(
            int(msg["epoch"]),
            int(msg["prev_index"]),
            [LogRecord.from_dict(e) for e in msg.get("entries", [])],
            int(msg.get("commit", 0)),
        )
    if msg["type"] == "snap":
        return log.install_snapshot(
            int(msg["epoch"]),
            int(msg["committed_index"]),
            [LogRecord.from_dict(e) for e in msg.get("entries", [])],
        )
    raise ValueError(f"not a replication message: {msg['type']}")
