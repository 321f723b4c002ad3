"""ekd: run an EdgeNode on a real network.

Peer messages travel as JSON datagrams over UDP; local clients use the
newline-delimited JSON RPC socket from the api module.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import secrets
import socket
import sys
import time

import yaml

from .api import DEFAULT_PORT, RpcServer, local_device_sampler
from .auth import CertificateAuthority, load_bundle, save_bundle
from .node import EdgeNode, NodeConfig

DEFAULT_PEER_PORT = 23457
MAX_DATAGRAM = 65507  # largest UDP payload over IPv4

log = logging.getLogger("edgekeeper.daemon")


class _Handle:
    def __init__(self, handle):
        self._handle = handle

    def cancel(self):
        self._handle.cancel()


class _PeerProtocol(asyncio.DatagramProtocol):
    def __init__(self, runtime):
        self.runtime = runtime

    def datagram_received(self, data, addr):
        try:
            msg = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError):
            return
        if isinstance(msg, dict) and self.runtime.node is not None:
            self.runtime.node.receive(addr[0], msg)


class AsyncRuntime:
    """EdgeNode runtime on an asyncio loop with a UDP socket per local address."""

    def __init__(self, peer_port=DEFAULT_PEER_PORT, loop=None):
        self.peer_port = peer_port
        self.loop = loop or asyncio.get_event_loop()
        self.node = None
        self.transports: dict = {}

    async def bind(self, ips):
        for ip in ips:
            transport, _ = await self.loop.create_datagram_endpoint(
                lambda: _PeerProtocol(self), local_addr=(ip, self.peer_port)
            )
            self.transports[ip] = transport

    def close(self):
        for transport in self.transports.values():
            transport.close()

    def now(self) -> float:
        return time.time() * 1000.0

    def call_later(self, delay_ms, fn):
        return _Handle(self.loop.call_later(max(0.0, delay_ms) / 1000.0, fn))

    def token_bytes(self, n):
        return secrets.token_bytes(n)

    def emit(self, node, kind, **data):
        log.info("%s %s %s", node.name, kind, json.dumps(data, sort_keys=True))

    def send(self, node, dst_ip, msg):
        if dst_ip in node.ips:
            copy = json.loads(json.dumps(msg))
            self.loop.call_soon(node.receive, dst_ip, copy)
            return
        transport = self.transports.get(node.ips[0])
        if transport is None:
            return
        data = json.dumps(msg).encode()
        if len(data) > MAX_DATAGRAM:
            log.warning("dropping %s message to %s: %d bytes exceeds one datagram",
                        msg.get("type"), dst_ip, len(data))
            return
        try:
            transport.sendto(data, (dst_ip, self.peer_port))
        except OSError as exc:
            log.debug("send to %s failed: %s", dst_ip, exc)

    def resolve(self, node, hostname, callback):
        async def lookup():
            try:
                infos = await self.loop.getaddrinfo(hostname, None, type=socket.SOCK_DGRAM)
                ips = sorted({info[4][0] for info in infos})
            except OSError:
                ips = None
            callback(ips or None)

        self.loop.create_task(lookup())


async def start_node(credential, ips, config: NodeConfig, *, gateway=None, peer_port=DEFAULT_PEER_PORT,
                     rpc_host="127.0.0.1", rpc_port=DEFAULT_PORT, sampler=local_device_sampler):
    runtime = AsyncRuntime(peer_port, asyncio.get_running_loop())
    await runtime.bind(ips)
    node = EdgeNode(runtime, credential, ips, config, gateway=gateway, device_sampler=sampler,
                    name=credential.account_name)
    runtime.node = node
    server = await RpcServer(node, rpc_host, rpc_port).start()
    node.start()
    return node, runtime, server


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise SystemExit(f"ekd: {path} must hold a mapping of config keys")
    return data


def _passphrase(args) -> str:
    value = args.passphrase or os.environ.get("EK_PASSPHRASE")
    if not value:
        raise SystemExit("ekd: pass --passphrase or set EK_PASSPHRASE")
    return value


def cmd_issue(args) -> int:
    ca = CertificateAuthority(f"ca.{args.org}", args.org, seed=args.ca_secret.encode())
    cred = ca.issue(args.account)
    save_bundle(args.out, cred, _passphrase(args))
    print(f"{args.out}: account {args.account}, guid {cred.guid}")
    return 0


def cmd_run(args) -> int:
    cred = load_bundle(args.bundle, _passphrase(args))
    overrides = _load_config(args.config)
    if args.master:
        overrides["master_mode"] = True
    if args.target_r is not None:
        overrides["target_r"] = args.target_r
    if args.ping_interval_ms is not None:
        overrides["ping_interval_ms"] = args.ping_interval_ms
    config = NodeConfig.from_dict(overrides)

    async def serve():
        node, runtime, server = await start_node(
            cred, args.ip, config, gateway=args.gateway, peer_port=args.peer_port,
            rpc_host=args.rpc_host, rpc_port=args.rpc_port,
        )
        log.info("node %s serving RPC on %s:%d", node.guid, args.rpc_host, server.port)
        try:
            await asyncio.Event().wait()
        finally:
            node.stop()
            runtime.close()
            await server.close()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        pass
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ekd", description="edgekeeper node daemon")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    issue = sub.add_parser("issue", help="create a CA-signed credential bundle")
    issue.add_argument("--org", required=True)
    issue.add_argument("--account", required=True)
    issue.add_argument("--ca-secret", required=True, help="secret the organisation CA key is derived from")
    issue.add_argument("--out", required=True)
    issue.add_argument("--passphrase")
    issue.set_defaults(fn=cmd_issue)

    run = sub.add_parser("run", help="run a node")
    run.add_argument("--bundle", required=True)
    run.add_argument("--passphrase")
    run.add_argument("--ip", action="append", required=True, help="local address (repeatable)")
    run.add_argument("--master", action="store_true")
    run.add_argument("--gateway", help="fallback master address when DNS has no answer")
    run.add_argument("--config", help="YAML/JSON file of node config keys")
    run.add_argument("--target-r", type=int)
    run.add_argument("--ping-interval-ms", type=float)
    run.add_argument("--peer-port", type=int, default=DEFAULT_PEER_PORT)
    run.add_argument("--rpc-host", default="127.0.0.1")
    run.add_argument("--rpc-port", type=int, default=DEFAULT_PORT)
    run.set_defaults(fn=cmd_run)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
