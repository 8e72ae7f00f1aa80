"""Scripted multi-user scenarios over the whole stack.

A scenario file describes a robot fleet and a cast of synthetic operators;
the simulated runner interleaves them deterministically on a logical clock,
producing one session log per teleoperation session plus a report whose
fairness and mutual-exclusion counters come from an independent replay of
the coordination audit log, not from the coordinator's own bookkeeping.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .coordination import ANY_TASK, Coordinator, CoordEvent, Queued, compatible
from .protocol import NANOS_PER_SEC, PhoneSample, UnitQuat, Vec3
from .session import SessionEngine, TeleopConfig
from .simrobot import DelayModel, KinematicChain, StreamSet
import random

ENV_SEED = "TELEFLEET_SEED"


# -- scripted inputs -------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str  # lissajous | step | random_walk
    amplitude_m: float = 0.05
    freq_hz: float = 0.2
    offset: tuple[float, float, float] = (0.05, 0.0, 0.0)
    step_m: float = 0.002

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySpec":
        kind = d["kind"]
        if kind not in ("lissajous", "step", "random_walk"):
            raise ValueError(f"unknown trajectory kind {kind!r}")
        out = {k: v for k, v in d.items() if k != "kind"}
        if "offset" in out:
            out["offset"] = tuple(float(v) for v in out["offset"])
        return cls(kind=kind, **out)


@dataclass(frozen=True)
class BehaviorSpec:
    kind: str  # complete_after | disconnect_after | violate_safety_after
    after_s: float

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorSpec":
        if d["kind"] not in ("complete_after", "disconnect_after", "violate_safety_after"):
            raise ValueError(f"unknown behavior kind {d['kind']!r}")
        return cls(d["kind"], float(d["after_s"]))


@dataclass(frozen=True)
class ScriptedUser:
    user_id: str
    arrival_time_s: float
    task: str
    trajectory: TrajectorySpec
    behavior: BehaviorSpec

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptedUser":
        return cls(
            user_id=d["user_id"],
            arrival_time_s=float(d.get("arrival_time_s", 0.0)),
            task=d.get("task", ANY_TASK),
            trajectory=TrajectorySpec.from_dict(d.get("trajectory", {"kind": "step"})),
            behavior=BehaviorSpec.from_dict(
                d.get("behavior", {"kind": "complete_after", "after_s": 10.0})
            ),
        )


@dataclass(frozen=True)
class FleetRobot:
    robot_id: str
    task: str
    seed: int = 0
    delay: DelayModel = field(default_factory=DelayModel)
    streams: StreamSet = field(default_factory=StreamSet)
    chain: KinematicChain = field(default_factory=KinematicChain.default)

    @classmethod
    def from_dict(cls, d: dict) -> "FleetRobot":
        seed = int(d.get("seed", 0))
        delay_d = d.get("delay", {})
        delay = DelayModel(
            base_ms=float(delay_d.get("base_ms", 0.0)),
            jitter_median_ms=float(delay_d.get("jitter_median_ms", 0.0)),
            jitter_sigma=float(delay_d.get("jitter_sigma", 0.0)),
            seed=int(delay_d.get("seed", seed)),
        )
        st = d.get("streams", {})
        streams = StreamSet(
            rgb_front_hz=float(st.get("rgb_front", 30.0)),
            rgb_top_hz=float(st.get("rgb_top", 30.0)),
            depth_top_hz=float(st.get("depth_top", 30.0)),
            robot_state_hz=float(st.get("robot_state", 100.0)),
        )
        chain = (
            KinematicChain.from_config(d["chain"]) if "chain" in d
            else KinematicChain.default()
        )
        return cls(d["id"], d["task"], seed, delay, streams, chain)


@dataclass
class ScenarioConfig:
    robots: list[FleetRobot]
    users: list[ScriptedUser]
    teleop: TeleopConfig = field(default_factory=TeleopConfig)
    heartbeat_timeout_s: float = 10.0
    heartbeat_interval_s: float = 2.0
    time_limit_s: float = 300.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(
            robots=[FleetRobot.from_dict(r) for r in d["robots"]],
            users=[ScriptedUser.from_dict(u) for u in d.get("users", [])],
            teleop=TeleopConfig.from_dict(d),
            heartbeat_timeout_s=float(
                d.get("coordination", {}).get("heartbeat_timeout_s", 10.0)
            ),
            heartbeat_interval_s=float(
                d.get("coordination", {}).get("heartbeat_interval_s", 2.0)
            ),
            time_limit_s=float(d.get("coordination", {}).get("time_limit_s", 300.0)),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ScenarioConfig":
        with open(path) as f:
            data = yaml.safe_load(f)
        cfg = cls.from_dict(data)
        env = os.environ.get(ENV_SEED)
        if env is not None:
            cfg.seed = int(env)
        return cfg


def derive_seed(base: int, name: str) -> int:
    digest = hashlib.blake2b(f"{base}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def random_scenario(
    seed: int,
    n_users: int = 100,
    n_robots: int = 3,
    rate_hz: float = 20.0,
    arrival_span_s: float = 15.0,
    time_limit_s: float = 6.0,
) -> ScenarioConfig:
    """A randomized churn scenario: staggered arrivals, mixed tasks, and a
    blend of completions, disconnects, and safety violators. Coarse stream
    rates keep large sweeps fast; the coordination invariants under test do
    not depend on them."""
    rng = random.Random(seed)
    tasks = ["object_search", "tower_creation", "laundry_layout"]
    robots = [
        FleetRobot(
            f"r{i}", tasks[i % len(tasks)], seed=derive_seed(seed, f"robot{i}"),
            streams=StreamSet(2.0, 2.0, 2.0, 10.0),
        )
        for i in range(n_robots)
    ]
    robot_tasks = sorted({r.task for r in robots})
    users = []
    for i in range(n_users):
        r = rng.random()
        if r < 0.6:
            behavior = BehaviorSpec("complete_after", rng.uniform(1.0, 3.0))
        elif r < 0.85:
            behavior = BehaviorSpec("disconnect_after", rng.uniform(0.5, 3.0))
        else:
            behavior = BehaviorSpec("violate_safety_after", rng.uniform(0.5, 2.0))
        task = rng.choice(robot_tasks + [ANY_TASK])
        users.append(ScriptedUser(
            user_id=f"u{i:03d}",
            arrival_time_s=rng.uniform(0.0, arrival_span_s),
            task=task,
            trajectory=TrajectorySpec("random_walk", step_m=0.002),
            behavior=behavior,
        ))
    return ScenarioConfig(
        robots=robots,
        users=users,
        teleop=TeleopConfig(rate_hz=rate_hz),
        heartbeat_timeout_s=2.0,
        heartbeat_interval_s=0.5,
        time_limit_s=time_limit_s,
        seed=seed,
    )


# -- trajectory generators ----------------------------------------------------------


class _Motion:
    """Produces per-tick deltas and absolute orientations for one operator."""

    def __init__(self, spec: TrajectorySpec, seed: int, v_cap: float):
        self.spec = spec
        self.rng = random.Random(seed)
        self.v_cap = v_cap
        self.prev_pos = (0.0, 0.0, 0.0)
        self.first = True
        self.violating = False

    def _lissajous_pos(self, t_s: float) -> tuple[float, float, float]:
        a, f = self.spec.amplitude_m, self.spec.freq_hz
        w = 2 * math.pi * f * t_s
        return (a * math.sin(w), 0.5 * a * math.sin(2 * w), 0.5 * a * math.cos(w) - 0.5 * a)

    def sample(self, t_s: float, dt_s: float) -> tuple[Vec3, UnitQuat]:
        if self.violating:
            return Vec3(10.0, 0.0, 0.0), UnitQuat.identity()
        kind = self.spec.kind
        if kind == "step":
            if self.first:
                self.first = False
                return Vec3(*self.spec.offset), UnitQuat.identity()
            return Vec3.zero(), UnitQuat.identity()
        if kind == "lissajous":
            pos = self._lissajous_pos(t_s)
            delta = tuple(c - p for c, p in zip(pos, self.prev_pos))
            self.prev_pos = pos
            yaw = 0.2 * math.sin(2 * math.pi * 0.1 * t_s)
            return Vec3(*delta), UnitQuat.from_axis_angle(Vec3(0, 0, 1), yaw)
        # random_walk: bounded step, kept under the velocity limit
        cap = min(self.spec.step_m, 0.9 * self.v_cap * dt_s)
        d = [self.rng.uniform(-1, 1) for _ in range(3)]
        n = math.sqrt(sum(x * x for x in d)) or 1.0
        k = self.rng.uniform(0, cap) / n
        return Vec3(d[0] * k, d[1] * k, d[2] * k), UnitQuat.identity()


# -- independent violation checkers ----------------------------------------------------


def count_mutex_violations(events: list[CoordEvent]) -> int:
    """Replays the audit log; counts assignments onto a busy robot or user."""
    busy_robot: set[str] = set()
    busy_user: set[str] = set()
    violations = 0
    for ev in events:
        if ev.kind == "assigned":
            if ev.robot_id in busy_robot or ev.user_id in busy_user:
                violations += 1
            busy_robot.add(ev.robot_id)
            busy_user.add(ev.user_id)
        elif ev.kind == "ended":
            busy_robot.discard(ev.robot_id)
            busy_user.discard(ev.user_id)
    return violations


def count_fifo_violations(events: list[CoordEvent]) -> int:
    """Counts assignments that bypassed an older compatible waiter."""
    robot_task: dict[str, str] = {}
    waiting: dict[str, tuple[int, str]] = {}
    violations = 0
    for ev in events:
        if ev.kind == "robot_registered":
            robot_task[ev.robot_id] = ev.task
        elif ev.kind == "joined":
            waiting[ev.user_id] = (ev.t, ev.task)
        elif ev.kind == "assigned":
            joined_at, _ = waiting.pop(ev.user_id)
            for other, (ot, otask) in waiting.items():
                if (ot, other) < (joined_at, ev.user_id) and compatible(
                    otask, robot_task[ev.robot_id]
                ):
                    violations += 1
        elif ev.kind in ("evicted", "left"):
            waiting.pop(ev.user_id, None)
    return violations


# -- report -----------------------------------------------------------------------


@dataclass
class UserOutcome:
    user_id: str
    queue_wait_s: float | None = None
    session_duration_s: float | None = None
    end_reason: str | None = None


@dataclass
class ScenarioReport:
    users: list[UserOutcome]
    mutex_violations: int
    fifo_violations: int
    records_per_topic: dict[str, int]
    safety_rejects: int
    sessions_started: int
    logs: list[str]
    orphaned_locks: int
    sim_duration_s: float
    traces: dict[str, list] | None = None

    @property
    def ok(self) -> bool:
        return (
            self.mutex_violations == 0
            and self.fifo_violations == 0
            and self.orphaned_locks == 0
        )

    def to_dict(self) -> dict:
        return {
            "users": [
                {
                    "user_id": u.user_id,
                    "queue_wait_s": u.queue_wait_s,
                    "session_duration_s": u.session_duration_s,
                    "end_reason": u.end_reason,
                }
                for u in self.users
            ],
            "mutex_violations": self.mutex_violations,
            "fifo_violations": self.fifo_violations,
            "records_per_topic": dict(sorted(self.records_per_topic.items())),
            "safety_rejects": self.safety_rejects,
            "sessions_started": self.sessions_started,
            "logs": self.logs,
            "orphaned_locks": self.orphaned_locks,
            "sim_duration_s": self.sim_duration_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- the simulated runner ------------------------------------------------------------


class _Actor:
    def __init__(self, spec: ScriptedUser, seed: int, v_cap: float):
        self.spec = spec
        self.state = "pending"  # pending | queued | active | done
        self.silent = False
        self.motion = _Motion(spec.trajectory, seed, v_cap)
        self.seq = 0
        self.joined_at: int | None = None
        self.assigned_at: int | None = None
        self.last_heartbeat = -(10**18)
        self.outcome = UserOutcome(spec.user_id)


class _Live:
    def __init__(self, engine: SessionEngine, actor: _Actor):
        self.engine = engine
        self.actor = actor


def run_scenario(
    cfg: ScenarioConfig,
    out_dir: str | Path | None = None,
    keep_traces: bool = False,
    mode: str = "simulated",
) -> ScenarioReport:
    if mode != "simulated":
        raise ValueError(
            "run_scenario drives the simulated clock; use telefleet.server for live mode"
        )
    tmp_holder = None
    if out_dir is None:
        import tempfile

        tmp_holder = tempfile.TemporaryDirectory(prefix="telefleet-scenario-")
        out_dir = tmp_holder.name
    out = Path(out_dir)
    (out / "sessions").mkdir(parents=True, exist_ok=True)

    coord = Coordinator(
        heartbeat_timeout_s=cfg.heartbeat_timeout_s,
        time_limit_s=cfg.time_limit_s,
        emit_queue_updates=False,
    )
    robots = {r.robot_id: r for r in cfg.robots}
    for r in cfg.robots:
        coord.register_robot(r.robot_id, r.task)

    actors = {
        u.user_id: _Actor(u, derive_seed(cfg.seed, u.user_id), cfg.teleop.v_max)
        for u in cfg.users
    }
    arrival_order = sorted(
        cfg.users, key=lambda u: (u.arrival_time_s, u.user_id)
    )
    live: dict[str, _Live] = {}
    traces: dict[str, list] = {}
    logs: list[Path] = []
    all_records: dict[str, int] = {}
    total_rejects = 0
    sessions_started = 0

    tick_ns = round(NANOS_PER_SEC / cfg.teleop.rate_hz)
    hb_ns = round(cfg.heartbeat_interval_s * NANOS_PER_SEC)
    clock = 0
    horizon = round(
        (max((u.arrival_time_s for u in cfg.users), default=0.0)
         + (len(cfg.users) + 2) * (cfg.time_limit_s + cfg.heartbeat_timeout_s + 1))
        * NANOS_PER_SEC
    )

    def finish_engine(session_id: str, reason: str, now: int) -> None:
        nonlocal total_rejects
        entry = live.pop(session_id, None)
        if entry is None:
            return
        entry.engine.end(reason, now)
        total_rejects += entry.engine.safety_rejects
        for name, n in entry.engine.records_per_topic.items():
            all_records[name] = all_records.get(name, 0) + n
        if keep_traces:
            traces[session_id] = entry.engine.trace
        entry.actor.state = "done"
        entry.actor.outcome.session_duration_s = (
            now - entry.engine.session.started_at
        ) / NANOS_PER_SEC
        entry.actor.outcome.end_reason = reason

    def process_actions(now: int) -> None:
        nonlocal sessions_started
        for action in coord.drain_actions():
            if action.kind == "session_start":
                actor = actors[action.user_id]
                actor.state = "active"
                actor.assigned_at = now
                actor.outcome.queue_wait_s = (now - actor.joined_at) / NANOS_PER_SEC
                sessions_started += 1
                session = action.session
                robot = robots[session.robot_id]
                path = out / "sessions" / f"{session.session_id}.rtlg"
                engine = SessionEngine(
                    session, robot.chain, cfg.teleop, robot.delay, robot.streams,
                    path, keep_trace=keep_traces,
                )
                logs.append(path)
                live[session.session_id] = _Live(engine, actor)
            elif action.kind == "session_end":
                finish_engine(action.session.session_id, action.reason, now)

    pending = list(arrival_order)
    while True:
        # arrivals
        while pending and round(pending[0].arrival_time_s * NANOS_PER_SEC) <= clock:
            spec = pending.pop(0)
            actor = actors[spec.user_id]
            actor.joined_at = clock
            actor.last_heartbeat = clock
            res = coord.join(spec.user_id, spec.task, clock)
            if isinstance(res, Queued):
                actor.state = "queued"
            process_actions(clock)

        # behaviors and controller samples
        for sid in sorted(live):
            entry = live.get(sid)
            if entry is None:
                continue
            engine, actor = entry.engine, entry.actor
            elapsed_s = (clock - engine.session.started_at) / NANOS_PER_SEC
            b = actor.spec.behavior
            if b.kind == "complete_after" and elapsed_s >= b.after_s:
                coord.end_session(sid, "user_quit", clock)
                process_actions(clock)
                continue
            if b.kind == "disconnect_after" and elapsed_s >= b.after_s:
                actor.silent = True
            if b.kind == "violate_safety_after" and elapsed_s >= b.after_s:
                actor.motion.violating = True
            if not actor.silent:
                t_rel = engine.rel(clock)
                delta, orient = actor.motion.sample(
                    t_rel / NANOS_PER_SEC, tick_ns / NANOS_PER_SEC
                )
                sample = PhoneSample(actor.seq, t_rel, delta, orient, True)
                actor.seq += 1
                engine.on_sample(sample, clock)
                if engine.aborted:
                    coord.end_session(sid, "safety_abort", clock)
                    process_actions(clock)

        # advance the clock and run engines
        clock += tick_ns
        for sid in sorted(live):
            live[sid].engine.tick(clock)

        # heartbeats
        for actor in actors.values():
            if actor.state in ("queued", "active") and not actor.silent:
                if clock - actor.last_heartbeat >= hb_ns:
                    coord.heartbeat(actor.spec.user_id, clock)
                    actor.last_heartbeat = clock

        # liveness bookkeeping
        evicted, _aborted = coord.expire(clock)
        for user_id in evicted:
            actors[user_id].state = "done"
        coord.enforce_time_limits(clock)
        process_actions(clock)

        if not pending and not coord.queue and not live:
            break
        if clock > horizon:
            raise RuntimeError("scenario exceeded its horizon; runner wedged")

    report = ScenarioReport(
        users=[actors[u.user_id].outcome for u in cfg.users],
        mutex_violations=count_mutex_violations(coord.events),
        fifo_violations=count_fifo_violations(coord.events),
        records_per_topic=all_records,
        safety_rejects=total_rejects,
        sessions_started=sessions_started,
        logs=[str(p.relative_to(out)) for p in logs],
        orphaned_locks=coord.robot_counts()["locked"],
        sim_duration_s=clock / NANOS_PER_SEC,
        traces=traces if keep_traces else None,
    )
    (out / "report.json").write_text(report.to_json())
    if tmp_holder is not None:
        tmp_holder.cleanup()
    return report
