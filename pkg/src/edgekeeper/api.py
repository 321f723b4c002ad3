"""Client-facing RPC: method table, request dispatch and the local socket server.

Requests and responses are single-line JSON objects::

    {"id": 1, "method": "getOwnGUID", "params": {}}
    {"id": 1, "result": {"guid": "..."}}
    {"id": 2, "error": {"code": "ELOOKING", "message": "..."}}

Every call is answered by the node the client is connected to; slaves
forward what they cannot answer from their own cache to the master.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from dataclasses import asdict, dataclass
from typing import Callable, Optional

from . import errors
from .auth import b64d, b64e
from .consensus import normalize_path
from .errors import EdgeKeeperError, Looking, NotFound

DEFAULT_PORT = 23456


class NoMethod(EdgeKeeperError):
    code = "ENOMETHOD"


class ParseError(EdgeKeeperError, ValueError):
    code = "EPARSE"


class BadParams(EdgeKeeperError, ValueError):
    code = "EINVAL"


def _error_classes() -> dict:
    table = {}
    for obj in list(vars(errors).values()) + [NoMethod, ParseError, BadParams]:
        if isinstance(obj, type) and issubclass(obj, EdgeKeeperError):
            table.setdefault(obj.code, obj)
    return table


_BY_CODE = _error_classes()


def error_from_code(code: str, message: str = "") -> EdgeKeeperError:
    """Rebuild an exception that crossed the wire; the code is preserved exactly."""
    cls = _BY_CODE.get(code, EdgeKeeperError)
    err = cls.__new__(cls)
    EdgeKeeperError.__init__(err, message)
    if err.code != code:
        err.code = code
    return err


@dataclass(frozen=True)
class DeviceStatus:
    guid: str
    processors: int
    memory_free_bytes: int
    battery_pct: float
    storage_free_bytes: int
    reported_at: float

    def __post_init__(self):
        if not 0 <= self.battery_pct <= 100:
            raise BadParams(f"battery_pct {self.battery_pct} outside [0, 100]")
        for name in ("processors", "memory_free_bytes", "storage_free_bytes"):
            if getattr(self, name) < 0:
                raise BadParams(f"{name} must be non-negative")

    @classmethod
    def from_sample(cls, guid, sample: dict, now) -> "DeviceStatus":
        return cls(guid=guid, reported_at=now, **sample)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AppStatus:
    guid: str
    app_name: str
    status: dict
    reported_at: float

    def __post_init__(self):
        if not isinstance(self.app_name, str) or not self.app_name:
            raise BadParams("app_name must be a non-empty string")

    def encode(self) -> bytes:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def decode(cls, data: bytes) -> "AppStatus":
        return cls(**json.loads(data))


def app_status_path(guid: str, app_name: str) -> str:
    return normalize_path(f"/status/app/{guid}/{app_name}")


def local_device_sampler(_now=None) -> dict:
    """DeviceStatus fields measured on this machine."""
    import os
    import shutil

    import psutil

    battery = psutil.sensors_battery() if hasattr(psutil, "sensors_battery") else None
    return {
        "processors": os.cpu_count() or 1,
        "memory_free_bytes": int(psutil.virtual_memory().available),
        "battery_pct": float(battery.percent) if battery else 100.0,
        "storage_free_bytes": int(shutil.disk_usage("/").free),
    }


# -- method implementations -------------------------------------------------
#
# Each handler is ``fn(node, params, respond)``; it calls ``respond`` exactly
# once with a result dict or an EdgeKeeperError, possibly later.

UNGATED = frozenset({"getOwnGUID", "getOwnAccountName"})


def _param(params, name, kind=str):
    value = params.get(name)
    if not isinstance(value, kind) or (kind is str and not value):
        raise BadParams(f"missing or invalid parameter {name!r}")
    return value


def _local_or_forward(lookup, wrap, method):
    """Answer from the local record cache; a slave forwards misses to the master."""

    def handler(node, params, respond):
        try:
            respond(wrap(lookup(node.store, params)))
        except NotFound:
            if node.is_master:
                raise
            node.forward(method, params, respond)

    return handler


def _own_guid(node, params, respond):
    respond({"guid": node.guid})


def _own_account(node, params, respond):
    respond({"account_name": node.credential.account_name})


def _edit_service(node, params, respond, remove=False):
    now = int(node.now())
    if remove:
        version = node.store.remove_service(node.guid, _param(params, "service"), now)
    else:
        version = node.store.add_service(node.guid, _param(params, "service"), _param(params, "role"), now)
    node.publish_own_record()
    respond({"version": version})


def _peer_guids(node, params, respond):
    respond({"guids": node.store.get_peer_guids(_param(params, "service"), _param(params, "role"))})


def get_store_endpoints(node) -> list:
    """(guid, "ip:port") for every replica whose address is known."""
    out = []
    for guid in node.cluster.replicas:
        ip = node.ip_of(guid)
        if ip is not None:
            out.append((guid, f"{ip}:{node.cfg.store_port}"))
    return out


def _connection_string(node, params, respond):
    endpoints = [{"guid": g, "address": a} for g, a in get_store_endpoints(node)]
    respond({
        "connection_string": ",".join(e["address"] for e in endpoints),
        "endpoints": endpoints,
    })


def _decode_value(params) -> bytes:
    if "value_b64" in params:
        try:
            return b64d(params["value_b64"])
        except (ValueError, TypeError, AttributeError):
            raise BadParams("value_b64 is not valid base64") from None
    if isinstance(params.get("value"), str):
        return params["value"].encode()
    raise BadParams("putMetadata needs 'value_b64' or a string 'value'")


def _put_metadata(node, params, respond):
    path = normalize_path(_param(params, "path"))
    value = _decode_value(params)
    if not node.is_master:
        node.forward("putMetadata", {"path": path, "value_b64": b64e(value)}, respond)
        return
    node.put_metadata(path, value, respond)


def _get_metadata(node, params, respond):
    path = normalize_path(_param(params, "path"))
    if not node.is_master:
        node.forward("getMetadata", {"path": path}, respond)
        return
    value, version = node.leader.get(path)
    respond({"path": path, "value_b64": b64e(value), "version": list(version)})


def put_app_status(node, app_name: str, status: dict, respond):
    """Store ``status`` for this node's ``app_name`` in the replicated metadata."""
    record = AppStatus(node.guid, app_name, status, node.now())
    _put_metadata(node, {"path": app_status_path(node.guid, app_name),
                         "value_b64": b64e(record.encode())}, respond)


def get_app_status(node, target_guid: str, app_name: str, respond):
    def decoded(outcome):
        if isinstance(outcome, EdgeKeeperError):
            respond(outcome)
        else:
            respond(asdict(AppStatus.decode(b64d(outcome["value_b64"]))))

    _get_metadata(node, {"path": app_status_path(target_guid, app_name)}, decoded)


def get_device_status(node, target_guid: str, respond):
    """Latest device report held by the master for ``target_guid``."""
    if not node.is_master:
        node.forward("getDeviceStatus", {"guid": target_guid}, respond)
        return
    status = node.device_status.get(target_guid)
    if status is None:
        raise NotFound(f"no device status reported by {target_guid}")
    respond(dict(status))


def _put_app_status(node, params, respond):
    status = params.get("status")
    if not isinstance(status, dict):
        raise BadParams("status must be a JSON object")
    put_app_status(node, _param(params, "app_name"), status, respond)


def _get_app_status(node, params, respond):
    get_app_status(node, params.get("guid") or node.guid, _param(params, "app_name"), respond)


def _device_status(node, params, respond):
    get_device_status(node, params.get("guid") or node.guid, respond)


def _network_info(node, params, respond):
    respond(node.graph.get_network_info().to_dict())


def _all_local_guids(node, params, respond):
    respond({"guids": node.store.guids()})


METHODS: dict = {
    "getOwnGUID": _own_guid,
    "getOwnAccountName": _own_account,
    "getIPbyGUID": _local_or_forward(
        lambda s, p: s.get_ip_by_guid(_param(p, "guid")), lambda ips: {"ips": ips}, "getIPbyGUID"),
    "getGUIDbyIP": _local_or_forward(
        lambda s, p: s.get_guid_by_ip(_param(p, "ip")), lambda g: {"guid": g}, "getGUIDbyIP"),
    "getGUIDbyAccountName": _local_or_forward(
        lambda s, p: s.get_guid_by_account(_param(p, "account_name")), lambda g: {"guid": g},
        "getGUIDbyAccountName"),
    "getAccountNamebyGUID": _local_or_forward(
        lambda s, p: s.get_account_by_guid(_param(p, "guid")), lambda a: {"account_name": a},
        "getAccountNamebyGUID"),
    "addService": _edit_service,
    "removeService": lambda n, p, r: _edit_service(n, p, r, remove=True),
    "getPeerGUIDs": _peer_guids,
    "getZooKeeperConnectionString": _connection_string,
    "putMetadata": _put_metadata,
    "getMetadata": _get_metadata,
    "getNetworkInfo": _network_info,
    "getAllLocalGUID": _all_local_guids,
    "putAppStatus": _put_app_status,
    "getAppStatus": _get_app_status,
    "getDeviceStatus": _device_status,
}


def execute(node, method: str, params: dict, respond: Callable):
    """Run one API method on ``node``; ``respond`` receives a dict or an exception."""
    handler = METHODS.get(method)
    if handler is None:
        respond(NoMethod(f"unknown method {method!r}"))
        return
    if method not in UNGATED and not node.serving():
        respond(Looking("edge is not formed; retry later"))
        return
    done = []

    def once(outcome):
        if not done:
            done.append(True)
            respond(outcome)

    try:
        handler(node, params or {}, once)
    except EdgeKeeperError as exc:
        once(exc)


def parse_request(line) -> dict:
    try:
        request = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if not isinstance(request, dict) or not isinstance(request.get("method"), str):
        raise ParseError("request must be an object with a string 'method'")
    if not isinstance(request.get("params", {}), dict):
        raise ParseError("'params' must be an object")
    return request


def dispatch(request, node, respond: Callable[[dict], None]):
    """Answer one request (dict or raw line) with exactly one response dict."""
    req_id = request.get("id") if isinstance(request, dict) else None
    try:
        if not isinstance(request, dict):
            request = parse_request(request)
            req_id = request.get("id")
        elif not isinstance(request.get("method"), str):
            raise ParseError("request must carry a string 'method'")
    except ParseError as exc:
        respond({"id": req_id, "error": {"code": exc.code, "message": str(exc)}})
        return

    def reply(outcome):
        if isinstance(outcome, EdgeKeeperError):
            respond({"id": req_id, "error": {"code": outcome.code, "message": str(outcome)}})
        else:
            respond({"id": req_id, "result": outcome})

    execute(node, request["method"], request.get("params") or {}, reply)


# -- socket server and command-line client ------------------------------------


class RpcServer:
    """Newline-delimited JSON over TCP, answered on the node's asyncio loop."""

    def __init__(self, node, host="127.0.0.1", port=DEFAULT_PORT):
        self.node = node
        self.host = host
        self.port = port
        self._server = None

    async def start(self):
        self._server = await asyncio.start_server(self._serve, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        return self

    async def close(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _serve(self, reader, writer):
        lock = asyncio.Lock()

        async def write(response):
            async with lock:
                writer.write(json.dumps(response).encode() + b"\n")
                await writer.drain()

        def respond(response):
            asyncio.ensure_future(write(response))

        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                if line.strip():
                    dispatch(line.decode("utf-8", "replace"), self.node, respond)
        except ConnectionError:
            pass
        finally:
            writer.close()


def call(method: str, params: Optional[dict] = None, host="127.0.0.1", port=DEFAULT_PORT,
         timeout=30.0, req_id=1) -> dict:
    """Blocking single request, for scripts and the ekctl command."""
    import socket

    with socket.create_connection((host, port), timeout=timeout) as sock:
        sock.sendall(json.dumps({"id": req_id, "method": method, "params": params or {}}).encode() + b"\n")
        with sock.makefile("rb") as fh:
            line = fh.readline()
    if not line:
        raise ConnectionError("server closed the connection without answering")
    return json.loads(line)


def ekctl_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ekctl", description="Call a local edgekeeper daemon.")
    parser.add_argument("method")
    parser.add_argument("params", nargs="?", default="{}", help="JSON object of parameters")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=DEFAULT_PORT)
    args = parser.parse_args(argv)
    try:
        params = json.loads(args.params)
    except json.JSONDecodeError as exc:
        parser.error(f"params are not valid JSON: {exc}")
    try:
        response = call(args.method, params, args.host, args.port)
    except OSError as exc:
        print(f"ekctl: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(response, indent=2, sort_keys=True))
    return 1 if "error" in response else 0
