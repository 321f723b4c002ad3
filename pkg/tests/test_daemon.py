"""Two real daemons on loopback addresses talking UDP, queried over TCP."""

import asyncio
import json

import pytest

from edgekeeper import api
from edgekeeper.auth import CertificateAuthority, load_bundle
from edgekeeper.daemon import main as ekd, start_node
from edgekeeper.node import NodeConfig


async def rpc(port, method, params=None):
    reader, writer = await asyncio.open_connection("127.0.0.1", port)
    writer.write(json.dumps({"id": 7, "method": method, "params": params or {}}).encode() + b"\n")
    await writer.drain()
    line = await reader.readline()
    writer.close()
    return json.loads(line)


async def wait_serving(node, seconds=5.0):
    for _ in range(int(seconds / 0.05)):
        if node.serving():
            return
        await asyncio.sleep(0.05)
    raise AssertionError(f"{node.name} never started serving")


def test_loopback_pair():
    async def scenario():
        ca = CertificateAuthority("ca.t", "t", seed=b"daemon-test")
        cfg = dict(target_r=2, ping_interval_ms=100)
        try:
            m = await start_node(ca.issue("m"), ["127.0.0.1"], NodeConfig(master_mode=True, **cfg),
                                 peer_port=40111, rpc_port=0)
            s = await start_node(ca.issue("s"), ["127.0.0.2"], NodeConfig(**cfg), gateway="127.0.0.1",
                                 peer_port=40111, rpc_port=0)
        except OSError as exc:
            pytest.skip(f"loopback aliases unavailable: {exc}")
        try:
            await wait_serving(s[0])
            port = s[2].port
            assert (await rpc(port, "getOwnGUID"))["result"]["guid"] == s[0].guid
            put = await rpc(port, "putMetadata", {"path": "/x", "value": "hi"})
            assert put["result"]["epoch"] == 0
            got = await rpc(port, "getMetadata", {"path": "/x"})
            assert got["result"]["value_b64"] == "aGk="
            conn = await rpc(port, "getZooKeeperConnectionString")
            assert sorted(conn["result"]["connection_string"].split(",")) == ["127.0.0.1:2181", "127.0.0.2:2181"]
            await asyncio.sleep(0.3)
            dev = await rpc(port, "getDeviceStatus", {"guid": m[0].guid})
            assert dev["result"]["processors"] >= 1

            # the blocking client and ekctl run in a worker thread against this loop
            out = await asyncio.to_thread(api.call, "getOwnAccountName", None, "127.0.0.1", port)
            assert out["result"] == {"account_name": "s"}
            code = await asyncio.to_thread(api.ekctl_main, ["--port", str(port), "getMetadata", '{"path": "/nope"}'])
            assert code == 1
        finally:
            for node, runtime, server in (m, s):
                node.stop()
                runtime.close()
                await server.close()

    asyncio.run(scenario())


def test_rpc_server_handles_garbage_line():
    async def scenario():
        ca = CertificateAuthority("ca.g", "g", seed=b"g")
        node, runtime, server = await start_node(ca.issue("solo"), ["127.0.0.1"],
                                                 NodeConfig(master_mode=True, target_r=1, ping_interval_ms=100),
                                                 peer_port=40113, rpc_port=0)
        try:
            reader, writer = await asyncio.open_connection("127.0.0.1", server.port)
            writer.write(b"garbage\n{\"id\": 2, \"method\": \"getOwnGUID\"}\n")
            await writer.drain()
            first = json.loads(await reader.readline())
            second = json.loads(await reader.readline())
            writer.close()
            assert first["error"]["code"] == "EPARSE"
            assert second == {"id": 2, "result": {"guid": node.guid}}
        finally:
            node.stop()
            runtime.close()
            await server.close()

    asyncio.run(scenario())


def test_issue_writes_loadable_bundle(tmp_path, capsys):
    out = tmp_path / "n.bundle"
    assert ekd(["issue", "--org", "o", "--account", "n1", "--ca-secret", "s3", "--out", str(out),
                "--passphrase", "pw"]) == 0
    cred = load_bundle(out, "pw")
    assert cred.account_name == "n1" and cred.guid in capsys.readouterr().out
    with pytest.raises(Exception):
        load_bundle(out, "wrong")


def test_ekctl_reports_connection_failure(capsys):
    assert api.ekctl_main(["--port", "1", "getOwnGUID"]) == 2


def test_oversized_message_dropped(caplog):
    from edgekeeper.daemon import MAX_DATAGRAM, AsyncRuntime

    class Sink:
        def __init__(self):
            self.sent = []

        def sendto(self, data, addr):
            self.sent.append(data)

    class Holder:
        ips = ("127.0.0.1",)

    loop = asyncio.new_event_loop()
    try:
        rt = AsyncRuntime(40115, loop)
        rt.transports["127.0.0.1"] = sink = Sink()
        rt.send(Holder(), "127.0.0.9", {"type": "snap", "blob": "x" * MAX_DATAGRAM})
        rt.send(Holder(), "127.0.0.9", {"type": "ping"})
    finally:
        loop.close()
    assert len(sink.sent) == 1 and "exceeds one datagram" in caplog.text
