import asyncio
import base64
import hashlib
import json
import os
import time

import pytest

from telefleet.protocol import decode_robot_state
from telefleet.scenario import BehaviorSpec, FleetRobot, ScriptedUser, TrajectorySpec
from telefleet.server import FleetServer, ServerConfig, run_scripted_client
from telefleet.session import TeleopConfig

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def quick_cfg(n_robots=1, hb=2.0, limit=60.0, rate=25.0):
    return ServerConfig(
        robots=[FleetRobot(f"r{i}", "object_search", seed=i) for i in range(n_robots)],
        teleop=TeleopConfig(rate_hz=rate),
        heartbeat_timeout_s=hb,
        time_limit_s=limit,
    )


def scripted(uid, behavior, after, arrival=0.0, kind="random_walk"):
    return ScriptedUser(
        uid, arrival, "object_search", TrajectorySpec(kind), BehaviorSpec(behavior, after)
    )


async def start_server(tmp_path, cfg=None, **kw):
    server = FleetServer(cfg or quick_cfg(), log_dir=tmp_path, **kw)
    await server.start()
    return server


class TestLoopback:
    def test_single_client_completes(self, tmp_path):
        async def main():
            server = await start_server(tmp_path)
            res = await run_scripted_client(
                "127.0.0.1", server.port, scripted("alice", "complete_after", 0.6),
                rate_hz=25.0, timeout_s=10.0,
            )
            await server.stop()
            return server, res

        server, res = asyncio.run(main())
        assert res["end_reason"] == "user_quit"
        assert res["states_received"] > 5
        assert server.coord.robot_counts()["locked"] == 0
        logs = list((tmp_path / "sessions").glob("*.rtlg"))
        assert len(logs) == 1

    def test_second_client_queues_then_runs(self, tmp_path):
        async def main():
            server = await start_server(tmp_path)
            first = asyncio.create_task(run_scripted_client(
                "127.0.0.1", server.port, scripted("a", "complete_after", 0.8),
                rate_hz=25.0, timeout_s=10.0,
            ))
            await asyncio.sleep(0.2)
            second = asyncio.create_task(run_scripted_client(
                "127.0.0.1", server.port, scripted("b", "complete_after", 0.4),
                rate_hz=25.0, timeout_s=10.0,
            ))
            r1, r2 = await asyncio.gather(first, second)
            await server.stop()
            return server, r1, r2

        server, r1, r2 = asyncio.run(main())
        assert r1["end_reason"] == "user_quit"
        assert r2["queued_positions"] and r2["queued_positions"][0] == 0
        assert r2["end_reason"] == "user_quit"
        from telefleet.scenario import count_fifo_violations, count_mutex_violations

        assert count_mutex_violations(server.coord.events) == 0
        assert count_fifo_violations(server.coord.events) == 0

    def test_disconnect_frees_robot(self, tmp_path):
        async def main():
            server = await start_server(tmp_path, quick_cfg(hb=0.6))
            res = await run_scripted_client(
                "127.0.0.1", server.port, scripted("ghost", "disconnect_after", 0.4),
                rate_hz=25.0, timeout_s=5.0,
            )
            await asyncio.sleep(1.2)  # expiry loop notices the silence
            counts = server.coord.robot_counts()
            await server.stop()
            return res, counts

        res, counts = asyncio.run(main())
        assert counts["locked"] == 0

    def test_injected_delay_visible_in_latency(self, tmp_path):
        async def main():
            server = await start_server(tmp_path, inject_delay_ms=200.0)
            res = await run_scripted_client(
                "127.0.0.1", server.port, scripted("alice", "complete_after", 1.0),
                rate_hz=25.0, timeout_s=10.0,
            )
            await server.stop()
            return res

        res = asyncio.run(main())
        assert res["states_received"] > 3
        assert abs(res["latency_ms_median"] - 200.0) <= 50.0

    def test_violator_gets_safety_abort(self, tmp_path):
        async def main():
            server = await start_server(tmp_path)
            res = await run_scripted_client(
                "127.0.0.1", server.port, scripted("bad", "violate_safety_after", 0.3),
                rate_hz=25.0, timeout_s=10.0,
            )
            await server.stop()
            return server, res

        server, res = asyncio.run(main())
        assert res["end_reason"] == "safety_abort"
        assert server.safety_rejects >= 5

    def test_duplicate_join_rejected(self, tmp_path):
        async def main():
            server = await start_server(tmp_path)
            reader, writer = await asyncio.open_connection("127.0.0.1", server.port)
            writer.write(b'{"type": "join", "user_id": "dup", "task": "object_search"}\n')
            r2, w2 = await asyncio.open_connection("127.0.0.1", server.port)
            w2.write(b'{"type": "join", "user_id": "dup", "task": "object_search"}\n')
            line = await asyncio.wait_for(r2.readline(), timeout=5)
            writer.close()
            w2.close()
            await server.stop()
            return json.loads(line)

        msg = asyncio.run(main())
        assert msg["type"] == "error"
        assert msg["code"] == "already_present"

    def test_state_payload_decodes(self, tmp_path):
        async def main():
            server = await start_server(tmp_path)
            reader, writer = await asyncio.open_connection("127.0.0.1", server.port)
            writer.write(b'{"type": "join", "user_id": "u", "task": "any"}\n')
            payload = None
            deadline = time.monotonic() + 5
            while time.monotonic() < deadline:
                line = await asyncio.wait_for(reader.readline(), timeout=5)
                obj = json.loads(line)
                if obj["type"] == "state":
                    payload = base64.b64decode(obj["payload"])
                    assert "server_ms" in obj
                    break
            writer.write(b'{"type": "quit"}\n')
            writer.close()
            await server.stop()
            return payload

        payload = asyncio.run(main())
        msg = decode_robot_state(payload)
        assert len(msg.joints) == 7


async def ws_connect(host, port, path="/ws"):
    reader, writer = await asyncio.open_connection(host, port)
    key = base64.b64encode(os.urandom(16)).decode()
    writer.write(
        (
            f"GET {path} HTTP/1.1\r\nHost: {host}\r\nUpgrade: websocket\r\n"
            f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        ).encode()
    )
    status = await reader.readline()
    assert b"101" in status
    accept_expected = base64.b64encode(
        hashlib.sha1((key + WS_GUID).encode()).digest()
    ).decode()
    ok = False
    while True:
        line = await reader.readline()
        if line in (b"\r\n", b""):
            break
        if line.lower().startswith(b"sec-websocket-accept"):
            ok = accept_expected in line.decode()
    assert ok
    return reader, writer


def ws_send_text(writer, obj):
    payload = json.dumps(obj).encode()
    mask = os.urandom(4)
    masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    n = len(payload)
    if n < 126:
        head = bytes([0x81, 0x80 | n])
    else:
        head = bytes([0x81, 0x80 | 126]) + n.to_bytes(2, "big")
    writer.write(head + mask + masked)


async def ws_read_text(reader):
    head = await reader.readexactly(2)
    opcode = head[0] & 0x0F
    ln = head[1] & 0x7F
    if ln == 126:
        ln = int.from_bytes(await reader.readexactly(2), "big")
    elif ln == 127:
        ln = int.from_bytes(await reader.readexactly(8), "big")
    payload = await reader.readexactly(ln)
    return opcode, payload


class TestWebSocket:
    def test_handshake_join_and_queued_over_ws(self, tmp_path):
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html>ok</html>")

        async def main():
            server = await start_server(tmp_path, ui_dir=ui)
            # occupy the robot over TCP
            tcp_task = asyncio.create_task(run_scripted_client(
                "127.0.0.1", server.port, scripted("occupant", "complete_after", 1.2),
                rate_hz=25.0, timeout_s=10.0,
            ))
            await asyncio.sleep(0.3)
            reader, writer = await ws_connect("127.0.0.1", server.ui_port)
            ws_send_text(writer, {"type": "join", "user_id": "webuser", "task": "any"})
            opcode, payload = await asyncio.wait_for(ws_read_text(reader), timeout=5)
            queued = json.loads(payload)
            # wait for promotion to a session once the occupant finishes
            started = None
            deadline = time.monotonic() + 8
            while time.monotonic() < deadline:
                opcode, payload = await asyncio.wait_for(ws_read_text(reader), timeout=8)
                msg = json.loads(payload)
                if msg["type"] == "session_start":
                    started = msg
                    break
            ws_send_text(writer, {"type": "quit"})
            writer.close()
            await tcp_task
            await server.stop()
            return queued, started

        queued, started = asyncio.run(main())
        assert queued == {"type": "queued", "position": 0}
        assert started is not None and started["robot_id"] == "r0"

    def test_static_and_fleet_json(self, tmp_path):
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html>fleet</html>")

        async def fetch(port, path):
            reader, writer = await asyncio.open_connection("127.0.0.1", port)
            writer.write(f"GET {path} HTTP/1.1\r\nHost: x\r\n\r\n".encode())
            data = await reader.read(65536)
            writer.close()
            return data

        async def main():
            server = await start_server(tmp_path, ui_dir=ui)
            index = await fetch(server.ui_port, "/")
            fleet = await fetch(server.ui_port, "/fleet.json")
            missing = await fetch(server.ui_port, "/nope.js")
            evil = await fetch(server.ui_port, "/../secrets")
            await server.stop()
            return index, fleet, missing, evil

        index, fleet, missing, evil = asyncio.run(main())
        assert b"200 OK" in index and b"fleet" in index
        assert b"200 OK" in fleet
        body = fleet.split(b"\r\n\r\n", 1)[1]
        geometry = json.loads(body)
        assert geometry["robots"][0]["id"] == "r0"
        assert len(geometry["robots"][0]["chain"]) == 7
        assert b"404" in missing
        assert b"404" in evil
