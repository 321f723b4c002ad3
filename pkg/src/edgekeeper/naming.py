"""GUID name records, the local edge record cache, and the GNS stub.

The record cache answers every name-resolution and service-discovery query
locally; changes are marked dirty and pushed to the global name service when
it is reachable.
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .errors import InvalidAddress, InvalidRecord, NotFound, StaleUpdate, Unreachable

MASTER_HOSTNAME = "master.anonymous.org"
ANY_ROLE = "*"

_GUID_RE = re.compile(r"^[0-9a-f]{64}$")
_LABEL_RE = re.compile(r"^[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?$")

# Wire keys that cannot double as service names.
RESERVED_KEYS = frozenset({"GUID", "alias", "netaddress", "last-update", "account-name"})


def is_guid(value) -> bool:
    return isinstance(value, str) and bool(_GUID_RE.match(value))


def check_guid(value) -> str:
    if not is_guid(value):
        raise InvalidRecord(f"not a GUID: {value!r}")
    return value


def check_ip(value) -> str:
    try:
        ipaddress.ip_address(value)
    except (ValueError, TypeError):
        raise InvalidAddress(f"not an IP address literal: {value!r}") from None
    return value


def normalize_alias(hostname: str) -> str:
    """Lowercase a hostname and check it against RFC 1123 label rules."""
    if not isinstance(hostname, str) or not hostname:
        raise InvalidRecord("hostname must be a non-empty string")
    name = hostname.lower().rstrip(".")
    if len(name) > 253 or not all(_LABEL_RE.match(label) for label in name.split(".")):
        raise InvalidRecord(f"invalid hostname: {hostname!r}")
    return name


@dataclass(frozen=True)
class GuidRecord:
    guid: str
    alias: Optional[str] = None
    account_name: Optional[str] = None
    net_addresses: tuple = ()
    services: dict = field(default_factory=dict)
    last_update: int = 0

    def validate(self) -> "GuidRecord":
        check_guid(self.guid)
        try:
            for ip in self.net_addresses:
                check_ip(ip)
        except InvalidAddress as exc:
            raise InvalidRecord(str(exc)) from None
        if self.alias is not None:
            normalize_alias(self.alias)
        if self.account_name is not None and not isinstance(self.account_name, str):
            raise InvalidRecord("account_name must be a string")
        for name, role in self.services.items():
            _check_service(name, role)
        if not isinstance(self.last_update, int) or isinstance(self.last_update, bool):
            raise InvalidRecord("last_update must be integer milliseconds")
        return self

    def to_wire(self) -> dict:
        obj = {"GUID": self.guid, "netaddress": list(self.net_addresses)}
        if self.alias is not None:
            obj["alias"] = self.alias
        if self.account_name is not None:
            obj["account-name"] = self.account_name
        obj.update(self.services)
        obj["last-update"] = self.last_update
        return obj

    @classmethod
    def from_wire(cls, obj: dict) -> "GuidRecord":
        try:
            services = {k: v for k, v in obj.items() if k not in RESERVED_KEYS}
            record = cls(
                guid=obj["GUID"],
                alias=obj.get("alias"),
                account_name=obj.get("account-name"),
                net_addresses=tuple(obj.get("netaddress", ())),
                services=services,
                last_update=obj.get("last-update", 0),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidRecord(f"malformed record: {exc}") from None
        return record.validate()


def _check_service(name, role):
    if not isinstance(name, str) or not name:
        raise InvalidRecord("service name must be a non-empty string")
    if name in RESERVED_KEYS:
        raise InvalidRecord(f"service name {name!r} is reserved")
    if not isinstance(role, str) or not role:
        raise InvalidRecord("service role must be a non-empty string")


def _newest(records: Iterable[GuidRecord]) -> GuidRecord:
    # last-writer-wins; equal timestamps go to the larger guid
    return max(records, key=lambda r: (r.last_update, r.guid))


@dataclass
class SyncReport:
    pushed: int = 0
    failed: int = 0


class StubGns:
    """In-process stand-in for the federated global name service.

    ``fail_after`` makes the stub go unreachable after that many successful
    calls, which lets tests script a connection dropping mid-sync.
    """

    def __init__(self, endpoint="gns.local", reachable=True, fail_after=None):
        self.endpoint = endpoint
        self.reachable = reachable
        self.fail_after = fail_after
        self.records: dict = {}
        self.public_keys: dict = {}
        self.ca_certs: dict = {}
        self.calls = 0

    def _check(self):
        if self.fail_after is not None and self.calls >= self.fail_after:
            self.reachable = False
        if not self.reachable:
            raise Unreachable(f"GNS {self.endpoint} unreachable")
        self.calls += 1

    def push_record(self, wire: dict):
        self._check()
        self.records[wire["GUID"]] = dict(wire)

    def lookup_alias(self, hostname: str) -> list:
        self._check()
        name = normalize_alias(hostname)
        hits = [r for r in self.records.values() if r.get("alias") and r["alias"].lower() == name]
        if not hits:
            raise NotFound(hostname)
        best = max(hits, key=lambda r: (r.get("last-update", 0), r["GUID"]))
        return list(best.get("netaddress", []))

    def public_key(self, guid: str) -> bytes:
        self._check()
        try:
            return self.public_keys[guid]
        except KeyError:
            raise NotFound(guid) from None

    def ca_certificate(self, issuer: str):
        self._check()
        try:
            return self.ca_certs[issuer]
        except KeyError:
            raise NotFound(issuer) from None


class RecordStore:
    """Edge-local cache of GUID records keyed by GUID."""

    def __init__(self):
        self.records: dict = {}
        self.versions: dict = {}
        self.dirty: set = set()

    def __contains__(self, guid):
        return guid in self.records

    def __len__(self):
        return len(self.records)

    def get(self, guid: str) -> GuidRecord:
        try:
            return self.records[guid]
        except KeyError:
            raise NotFound(f"no record for {guid}") from None

    def version(self, guid: str) -> int:
        return self.versions.get(guid, 0)

    def guids(self) -> list:
        return sorted(self.records)

    def _store(self, record: GuidRecord) -> int:
        self.records[record.guid] = record
        self.versions[record.guid] = self.versions.get(record.guid, 0) + 1
        self.dirty.add(record.guid)
        return self.versions[record.guid]

    def upsert_record(self, record: GuidRecord) -> int:
        record.validate()
        current = self.records.get(record.guid)
        if current is not None and current.last_update > record.last_update:
            raise StaleUpdate(
                f"{record.guid}: stored last_update {current.last_update} is newer "
                f"than {record.last_update}"
            )
        return self._store(record)

    def merge_record(self, record: GuidRecord) -> bool:
        """Apply a replicated copy of a record; identical or older copies are ignored."""
        current = self.records.get(record.guid)
        if current == record:
            return False
        try:
            self.upsert_record(record)
        except StaleUpdate:
            return False
        return True

    def remove(self, guid: str):
        self.records.pop(guid, None)
        self.dirty.discard(guid)

    def get_ip_by_guid(self, guid: str) -> list:
        return list(self.get(guid).net_addresses)

    def get_guid_by_ip(self, ip: str) -> str:
        check_ip(ip)
        hits = [r for r in self.records.values() if ip in r.net_addresses]
        if not hits:
            raise NotFound(f"no record lists {ip}")
        return _newest(hits).guid

    def get_guid_by_account(self, account_name: str) -> str:
        hits = [r for r in self.records.values() if r.account_name == account_name]
        if not hits:
            raise NotFound(f"no record for account {account_name!r}")
        return _newest(hits).guid

    def get_account_by_guid(self, guid: str) -> str:
        record = self.get(guid)
        if record.account_name is None:
            raise NotFound(f"{guid} has no account name")
        return record.account_name

    def add_service(self, guid: str, service: str, role: str, now_ms: int) -> int:
        record = self.get(guid)
        _check_service(service, role)
        services = dict(record.services)
        services[service] = role
        return self._store(replace(record, services=services, last_update=now_ms))

    def remove_service(self, guid: str, service: str, now_ms: int) -> int:
        record = self.get(guid)
        services = {k: v for k, v in record.services.items() if k != service}
        return self._store(replace(record, services=services, last_update=now_ms))

    def get_peer_guids(self, service: str, role: str) -> list:
        return sorted(
            r.guid
            for r in self.records.values()
            if service in r.services and (role == ANY_ROLE or r.services[service] == role)
        )

    def resolve_alias(self, hostname: str, self_state=None, gns=None) -> list:
        """Resolve a DNS-style hostname against the local records, then the GNS.

        ``self_state`` supplies the master's addresses for the well-known
        master hostname. An unreachable GNS degrades to local-only answers.
        """
        name = normalize_alias(hostname)
        if name == MASTER_HOSTNAME:
            addresses = list(getattr(self_state, "master_addresses", None) or [])
            if not addresses:
                raise NotFound("master address unknown")
            return addresses
        hits = [r for r in self.records.values() if r.alias and r.alias.lower() == name]
        if hits:
            return list(_newest(hits).net_addresses)
        if gns is not None:
            try:
                return gns.lookup_alias(name)
            except Unreachable:
                pass
        raise NotFound(hostname)

    def sync_to_gns(self, gns) -> SyncReport:
        report = SyncReport()
        for guid in sorted(self.dirty):
            try:
                gns.push_record(self.records[guid].to_wire())
            except Unreachable:
                break
            self.dirty.discard(guid)
            report.pushed += 1
        report.failed = len(self.dirty)
        return report
