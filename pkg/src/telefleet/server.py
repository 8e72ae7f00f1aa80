"""Live coordination service and its network clients.

The control channel is a persistent bidirectional stream of line-delimited
JSON envelopes, each carrying a "type" field:

    client -> server   join{user_id,task}  heartbeat{}
                       control{payload: base64 controller sample}  quit{}
    server -> client   queued{position}
                       session_start{session_id,robot_id,task}
                       state{payload: base64 robot state, server_ms}
                       session_end{reason}  error{code,detail}

The same envelopes travel unchanged over the WebSocket endpoint that backs
the browser client; `--serve-ui` additionally serves static assets and the
fleet geometry at /fleet.json. All coordinator mutations happen on the event
loop, which is the single ordering point the coordination model requires.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .coordination import Coordinator, Queued
from .errors import AlreadyPresentError, DecodeError, NotFoundError
from .protocol import NANOS_PER_SEC, decode_phone_sample, encode_phone_sample, PhoneSample
from .scenario import (
    FleetRobot,
    ScenarioConfig,
    ScenarioReport,
    ScriptedUser,
    UserOutcome,
    _Motion,
    count_fifo_violations,
    count_mutex_violations,
    derive_seed,
)
from .session import SessionEngine, TeleopConfig

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


@dataclass
class ServerConfig:
    robots: list[FleetRobot]
    teleop: TeleopConfig = field(default_factory=TeleopConfig)
    heartbeat_timeout_s: float = 10.0
    time_limit_s: float = 300.0

    @classmethod
    def from_dict(cls, d: dict) -> "ServerConfig":
        return cls(
            robots=[FleetRobot.from_dict(r) for r in d["robots"]],
            teleop=TeleopConfig.from_dict(d),
            heartbeat_timeout_s=float(
                d.get("coordination", {}).get("heartbeat_timeout_s", 10.0)
            ),
            time_limit_s=float(d.get("coordination", {}).get("time_limit_s", 300.0)),
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ServerConfig":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))


class _Conn:
    """One connected client, over TCP or WebSocket."""

    def __init__(self, writer: asyncio.StreamWriter, ws: bool = False):
        self.writer = writer
        self.ws = ws
        self.user_id: str | None = None
        self.closed = False

    def send(self, obj: dict) -> None:
        if self.closed:
            return
        data = json.dumps(obj, sort_keys=True).encode("utf-8")
        try:
            if self.ws:
                self.writer.write(_ws_frame(data))
            else:
                self.writer.write(data + b"\n")
        except (ConnectionError, RuntimeError):
            self.closed = True

    def close(self) -> None:
        self.closed = True
        try:
            self.writer.close()
        except RuntimeError:
            pass


def _ws_frame(payload: bytes) -> bytes:
    n = len(payload)
    if n < 126:
        head = bytes([0x81, n])
    elif n < 1 << 16:
        head = bytes([0x81, 126]) + n.to_bytes(2, "big")
    else:
        head = bytes([0x81, 127]) + n.to_bytes(8, "big")
    return head + payload


async def _ws_read_message(reader: asyncio.StreamReader) -> bytes | None:
    """One complete text message from a client; None on close."""
    parts = []
    while True:
        head = await reader.readexactly(2)
        fin = head[0] & 0x80
        opcode = head[0] & 0x0F
        masked = head[1] & 0x80
        ln = head[1] & 0x7F
        if ln == 126:
            ln = int.from_bytes(await reader.readexactly(2), "big")
        elif ln == 127:
            ln = int.from_bytes(await reader.readexactly(8), "big")
        mask = await reader.readexactly(4) if masked else b"\x00" * 4
        payload = bytearray(await reader.readexactly(ln))
        if masked:
            for i in range(ln):
                payload[i] ^= mask[i % 4]
        if opcode == 0x8:  # close
            return None
        if opcode == 0x9:  # ping -> pong
            continue
        if opcode in (0x1, 0x0):
            parts.append(bytes(payload))
            if fin:
                return b"".join(parts)


class FleetServer:
    def __init__(
        self,
        cfg: ServerConfig,
        log_dir: str | Path = "logs",
        inject_delay_ms: float = 0.0,
        ui_dir: str | Path | None = None,
    ):
        self.cfg = cfg
        self.log_dir = Path(log_dir)
        self.inject_delay_ms = inject_delay_ms
        self.ui_dir = Path(ui_dir) if ui_dir is not None else None
        self.coord = Coordinator(
            heartbeat_timeout_s=cfg.heartbeat_timeout_s, time_limit_s=cfg.time_limit_s
        )
        self.robots = {r.robot_id: r for r in cfg.robots}
        for r in cfg.robots:
            self.coord.register_robot(r.robot_id, r.task)
        self.engines: dict[str, SessionEngine] = {}
        self.conns: dict[str, _Conn] = {}
        self._session_tasks: dict[str, asyncio.Task] = {}
        self._t0 = time.monotonic_ns()
        self._server: asyncio.AbstractServer | None = None
        self._ui_server: asyncio.AbstractServer | None = None
        self._misc_tasks: set[asyncio.Task] = set()
        self.port: int | None = None
        self.ui_port: int | None = None
        self.started = asyncio.Event()
        self.records_per_topic: dict[str, int] = {}
        self.safety_rejects = 0

    def now(self) -> int:
        return time.monotonic_ns() - self._t0

    # -- lifecycle --------------------------------------------------------------

    async def start(self, host: str = "127.0.0.1", port: int = 0, ui_port: int | None = None):
        self.log_dir.joinpath("sessions").mkdir(parents=True, exist_ok=True)
        self._server = await asyncio.start_server(self._handle_tcp, host, port)
        self.port = self._server.sockets[0].getsockname()[1]
        if self.ui_dir is not None:
            self._ui_server = await asyncio.start_server(
                self._handle_http, host, ui_port if ui_port is not None else 0
            )
            self.ui_port = self._ui_server.sockets[0].getsockname()[1]
        task = asyncio.create_task(self._expiry_loop())
        self._misc_tasks.add(task)
        self.started.set()

    async def serve(self, host: str, port: int, ui_port: int | None = None):
        await self.start(host, port, ui_port)
        assert self._server is not None
        async with self._server:
            await self._server.serve_forever()

    async def stop(self):
        for sid in list(self.engines):
            self._finish_session(sid, "disconnect")
        self._pump_actions()
        for t in list(self._misc_tasks):
            t.cancel()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._ui_server is not None:
            self._ui_server.close()
            await self._ui_server.wait_closed()

    # -- connection handling -------------------------------------------------------

    async def _handle_tcp(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        conn = _Conn(writer)
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    conn.send({"type": "error", "code": "bad_json", "detail": "unparseable line"})
                    continue
                self._handle_message(conn, obj)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self._drop(conn)
            conn.close()

    def _handle_message(self, conn: _Conn, obj: dict) -> None:
        now = self.now()
        mtype = obj.get("type")
        if mtype == "join":
            user_id = obj.get("user_id")
            task = obj.get("task", "any")
            if not user_id:
                conn.send({"type": "error", "code": "bad_request", "detail": "join needs user_id"})
                return
            try:
                res = self.coord.join(user_id, task, now)
            except AlreadyPresentError as e:
                conn.send({"type": "error", "code": "already_present", "detail": str(e)})
                return
            except ValueError as e:
                conn.send({"type": "error", "code": "bad_task", "detail": str(e)})
                return
            conn.user_id = user_id
            self.conns[user_id] = conn
            if isinstance(res, Queued):
                conn.send({"type": "queued", "position": res.position})
        elif mtype == "heartbeat":
            if conn.user_id:
                self.coord.heartbeat(conn.user_id, now)
        elif mtype == "control":
            self._handle_control(conn, obj, now)
        elif mtype == "quit":
            self._handle_quit(conn, now)
        else:
            conn.send({"type": "error", "code": "bad_type", "detail": f"unknown type {mtype!r}"})
        self._pump_actions()

    def _handle_control(self, conn: _Conn, obj: dict, now: int) -> None:
        if not conn.user_id:
            conn.send({"type": "error", "code": "not_joined", "detail": "join first"})
            return
        self.coord.heartbeat(conn.user_id, now)
        sid = self.coord.active_by_user.get(conn.user_id)
        engine = self.engines.get(sid) if sid else None
        if engine is None:
            return  # not in a session; stale control messages are dropped
        try:
            sample = decode_phone_sample(base64.b64decode(obj.get("payload", "")))
        except (DecodeError, ValueError) as e:
            conn.send({"type": "error", "code": "bad_payload", "detail": str(e)})
            return
        engine.on_sample(sample, now)
        if engine.aborted:
            self.coord.end_session(sid, "safety_abort", now)

    def _handle_quit(self, conn: _Conn, now: int) -> None:
        if not conn.user_id:
            return
        sid = self.coord.active_by_user.get(conn.user_id)
        if sid is not None:
            self.coord.end_session(sid, "user_quit", now)
        else:
            try:
                self.coord.leave(conn.user_id, now)
            except NotFoundError:
                pass

    def _drop(self, conn: _Conn) -> None:
        """Connection went away: abort its session or leave the queue."""
        if not conn.user_id:
            return
        now = self.now()
        sid = self.coord.active_by_user.get(conn.user_id)
        if sid is not None:
            self.coord.end_session(sid, "disconnect", now)
        else:
            try:
                self.coord.leave(conn.user_id, now)
            except NotFoundError:
                pass
        self.conns.pop(conn.user_id, None)
        self._pump_actions()

    # -- session machinery ------------------------------------------------------------

    def _pump_actions(self) -> None:
        for action in self.coord.drain_actions():
            conn = self.conns.get(action.user_id)
            if action.kind == "session_start":
                session = action.session
                robot = self.robots[session.robot_id]
                path = self.log_dir / "sessions" / f"{session.session_id}.rtlg"
                engine = SessionEngine(
                    session, robot.chain, self.cfg.teleop, robot.delay, robot.streams, path
                )
                self.engines[session.session_id] = engine
                task = asyncio.create_task(self._session_loop(session.session_id))
                self._session_tasks[session.session_id] = task
                if conn:
                    conn.send({
                        "type": "session_start",
                        "session_id": session.session_id,
                        "robot_id": session.robot_id,
                        "task": session.task,
                    })
            elif action.kind == "session_end":
                self._finish_session(action.session.session_id, action.reason)
                if conn:
                    conn.send({"type": "session_end", "reason": action.reason})
            elif action.kind == "queue_update":
                if conn:
                    conn.send({"type": "queued", "position": action.position})

    def _finish_session(self, session_id: str, reason: str) -> None:
        engine = self.engines.pop(session_id, None)
        if engine is not None:
            engine.end(reason, self.now())
            self.safety_rejects += engine.safety_rejects
            for name, n in engine.records_per_topic.items():
                self.records_per_topic[name] = self.records_per_topic.get(name, 0) + n
        task = self._session_tasks.pop(session_id, None)
        if task is not None:
            task.cancel()

    async def _session_loop(self, session_id: str) -> None:
        period = 1.0 / self.cfg.teleop.rate_hz
        try:
            while True:
                await asyncio.sleep(period)
                engine = self.engines.get(session_id)
                if engine is None or engine.ended:
                    return
                engine.tick(self.now())
                conn = self.conns.get(engine.session.user_id)
                if conn is None or conn.closed:
                    continue
                msg = {
                    "type": "state",
                    "payload": base64.b64encode(engine.current_state_payload()).decode(),
                    "server_ms": time.time() * 1000.0,
                }
                if self.inject_delay_ms > 0:
                    t = asyncio.create_task(self._delayed_send(conn, msg))
                    self._misc_tasks.add(t)
                    t.add_done_callback(self._misc_tasks.discard)
                else:
                    conn.send(msg)
        except asyncio.CancelledError:
            pass

    async def _delayed_send(self, conn: _Conn, msg: dict) -> None:
        await asyncio.sleep(self.inject_delay_ms / 1000.0)
        conn.send(msg)

    async def _expiry_loop(self) -> None:
        interval = max(0.05, min(0.5, self.cfg.heartbeat_timeout_s / 4))
        try:
            while True:
                await asyncio.sleep(interval)
                now = self.now()
                self.coord.expire(now)
                self.coord.enforce_time_limits(now)
                self._pump_actions()
        except asyncio.CancelledError:
            pass

    # -- UI endpoint -------------------------------------------------------------------

    def fleet_geometry(self) -> dict:
        from .simrobot import READY_Q, default_workspace

        out = {"robots": [], "teleop": {"rate_hz": self.cfg.teleop.rate_hz}}
        for r in self.cfg.robots:
            lo, hi = default_workspace(r.chain)
            out["robots"].append({
                "id": r.robot_id,
                "task": r.task,
                "chain": r.chain.to_config(),
                "ready_q": list(READY_Q),
                "workspace": {"min": lo.as_tuple(), "max": hi.as_tuple()},
            })
        return out

    async def _handle_http(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        try:
            request = await reader.readline()
            parts = request.decode("latin-1").split()
            if len(parts) < 2:
                writer.close()
                return
            method, path = parts[0], parts[1]
            headers = {}
            while True:
                line = await reader.readline()
                if line in (b"\r\n", b"\n", b""):
                    break
                k, _, v = line.decode("latin-1").partition(":")
                headers[k.strip().lower()] = v.strip()

            if path == "/ws" and headers.get("upgrade", "").lower() == "websocket":
                await self._handle_ws(reader, writer, headers)
                return

            if method != "GET":
                writer.write(b"HTTP/1.1 405 Method Not Allowed\r\nContent-Length: 0\r\n\r\n")
                await writer.drain()
                writer.close()
                return
            self._serve_static(writer, path)
            await writer.drain()
            writer.close()
        except (ConnectionError, asyncio.IncompleteReadError):
            writer.close()

    def _serve_static(self, writer: asyncio.StreamWriter, path: str) -> None:
        if path == "/fleet.json":
            body = json.dumps(self.fleet_geometry()).encode()
            writer.write(
                b"HTTP/1.1 200 OK\r\nContent-Type: application/json\r\n"
                + f"Content-Length: {len(body)}\r\n\r\n".encode()
                + body
            )
            return
        if self.ui_dir is None:
            writer.write(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n")
            return
        rel = path.lstrip("/") or "index.html"
        target = (self.ui_dir / rel).resolve()
        root = self.ui_dir.resolve()
        if not (target.is_relative_to(root) and target.is_file()):
            writer.write(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n")
            return
        ctype = {
            ".html": "text/html", ".js": "text/javascript", ".mjs": "text/javascript",
            ".css": "text/css", ".json": "application/json", ".map": "application/json",
        }.get(target.suffix, "application/octet-stream")
        body = target.read_bytes()
        writer.write(
            f"HTTP/1.1 200 OK\r\nContent-Type: {ctype}\r\n"
            f"Content-Length: {len(body)}\r\n\r\n".encode() + body
        )

    async def _handle_ws(self, reader, writer, headers) -> None:
        key = headers.get("sec-websocket-key", "")
        accept = base64.b64encode(
            hashlib.sha1((key + _WS_GUID).encode()).digest()
        ).decode()
        writer.write(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )
        await writer.drain()
        conn = _Conn(writer, ws=True)
        try:
            while True:
                data = await _ws_read_message(reader)
                if data is None:
                    break
                try:
                    obj = json.loads(data)
                except json.JSONDecodeError:
                    conn.send({"type": "error", "code": "bad_json", "detail": "unparseable frame"})
                    continue
                self._handle_message(conn, obj)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self._drop(conn)
            conn.close()


# -- scripted network client -------------------------------------------------------


async def run_scripted_client(
    host: str,
    port: int,
    spec: ScriptedUser,
    rate_hz: float = 50.0,
    timeout_s: float = 120.0,
    seed: int = 0,
) -> dict:
    """Drive one scripted operator over a real socket; returns a summary."""
    reader, writer = await asyncio.open_connection(host, port)
    motion = _Motion(spec.trajectory, derive_seed(seed, spec.user_id), v_cap=0.5)
    summary: dict = {
        "user_id": spec.user_id,
        "queued_positions": [],
        "end_reason": None,
        "states_received": 0,
        "latency_ms": [],
    }
    state = {"session_start_ts": None, "seq": 0, "sender": None}

    def send(obj: dict) -> None:
        writer.write(json.dumps(obj).encode() + b"\n")

    if spec.arrival_time_s > 0:
        await asyncio.sleep(spec.arrival_time_s)
    send({"type": "join", "user_id": spec.user_id, "task": spec.task})

    async def queue_heartbeats() -> None:
        # Keep the queue entry alive until a session starts.
        try:
            while state["session_start_ts"] is None:
                await asyncio.sleep(0.5)
                send({"type": "heartbeat"})
        except (asyncio.CancelledError, ConnectionError):
            pass

    hb_task = asyncio.create_task(queue_heartbeats())

    async def sender() -> None:
        period = 1.0 / rate_hz
        t_start = time.monotonic()
        last_hb = t_start
        try:
            while True:
                await asyncio.sleep(period)
                t_rel = time.monotonic() - t_start
                b = spec.behavior
                if b.kind == "complete_after" and t_rel >= b.after_s:
                    send({"type": "quit"})
                    return
                if b.kind == "disconnect_after" and t_rel >= b.after_s:
                    writer.close()
                    return
                if b.kind == "violate_safety_after" and t_rel >= b.after_s:
                    motion.violating = True
                delta, orient = motion.sample(t_rel, period)
                sample = PhoneSample(
                    state["seq"], round(t_rel * NANOS_PER_SEC), delta, orient, True
                )
                state["seq"] += 1
                send({
                    "type": "control",
                    "payload": base64.b64encode(encode_phone_sample(sample)).decode(),
                })
                if time.monotonic() - last_hb >= 1.0:
                    send({"type": "heartbeat"})
                    last_hb = time.monotonic()
        except (asyncio.CancelledError, ConnectionError):
            pass

    try:
        while True:
            line = await asyncio.wait_for(reader.readline(), timeout=timeout_s)
            if not line:
                summary["end_reason"] = summary["end_reason"] or "disconnect"
                break
            obj = json.loads(line)
            mtype = obj.get("type")
            if mtype == "queued":
                summary["queued_positions"].append(obj["position"])
                send({"type": "heartbeat"})
            elif mtype == "session_start":
                summary["session_id"] = obj["session_id"]
                summary["robot_id"] = obj["robot_id"]
                state["session_start_ts"] = time.monotonic()
                state["sender"] = asyncio.create_task(sender())
            elif mtype == "state":
                summary["states_received"] += 1
                summary["latency_ms"].append(time.time() * 1000.0 - obj["server_ms"])
            elif mtype == "session_end":
                summary["end_reason"] = obj["reason"]
                break
            elif mtype == "error":
                summary.setdefault("errors", []).append(obj)
    except (asyncio.TimeoutError, ConnectionError):
        pass
    finally:
        hb_task.cancel()
        if state["sender"] is not None:
            state["sender"].cancel()
        writer.close()
    lat = summary.pop("latency_ms")
    if lat:
        lat.sort()
        summary["latency_ms_median"] = lat[len(lat) // 2]
    return summary


async def _run_wall_clock(cfg: ScenarioConfig, out_dir: Path) -> ScenarioReport:
    server = FleetServer(
        ServerConfig(
            robots=cfg.robots,
            teleop=cfg.teleop,
            heartbeat_timeout_s=cfg.heartbeat_timeout_s,
            time_limit_s=cfg.time_limit_s,
        ),
        log_dir=out_dir,
    )
    await server.start()
    try:
        results = await asyncio.gather(*[
            run_scripted_client(
                "127.0.0.1", server.port, u, rate_hz=cfg.teleop.rate_hz, seed=cfg.seed
            )
            for u in cfg.users
        ])
    finally:
        await server.stop()

    outcomes = []
    for u, res in zip(cfg.users, results):
        outcomes.append(UserOutcome(
            user_id=u.user_id,
            queue_wait_s=None,
            session_duration_s=None,
            end_reason=res.get("end_reason"),
        ))
    logs = sorted(p.relative_to(out_dir) for p in (out_dir / "sessions").glob("*.rtlg"))
    report = ScenarioReport(
        users=outcomes,
        mutex_violations=count_mutex_violations(server.coord.events),
        fifo_violations=count_fifo_violations(server.coord.events),
        records_per_topic=dict(sorted(server.records_per_topic.items())),
        safety_rejects=server.safety_rejects,
        sessions_started=len(logs),
        logs=[str(p) for p in logs],
        orphaned_locks=server.coord.robot_counts()["locked"],
        sim_duration_s=server.now() / NANOS_PER_SEC,
    )
    (out_dir / "report.json").write_text(report.to_json())
    return report


def run_wall_clock_scenario(cfg: ScenarioConfig, out_dir: str | Path | None) -> ScenarioReport:
    out = Path(out_dir) if out_dir is not None else Path("wall-clock-run")
    out.joinpath("sessions").mkdir(parents=True, exist_ok=True)
    return asyncio.run(_run_wall_clock(cfg, out))
