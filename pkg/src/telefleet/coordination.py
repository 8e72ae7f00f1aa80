"""Fleet coordination: robot registry, per-robot locks, and the user queue.

One user controls at most one robot, one robot serves at most one user, and
waiting users are served oldest-first among those compatible with a freed
robot. All mutations run through a single Coordinator instance, which the
hosting server serializes; every transition is recorded in an append-only
event list so an external checker can audit fairness and mutual exclusion
without trusting this implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AlreadyPresentError, NotFoundError
from .protocol import NANOS_PER_SEC

TASKS = ("object_search", "tower_creation", "laundry_layout")
ANY_TASK = "any"

END_REASONS = ("user_quit", "time_limit", "safety_abort", "disconnect")

DEFAULT_TIME_LIMIT_S = 300.0
DEFAULT_HEARTBEAT_TIMEOUT_S = 10.0


def validate_task(task: str, allow_any: bool = False) -> str:
    if task in TASKS or (allow_any and task == ANY_TASK):
        return task
    raise ValueError(f"unknown task {task!r}")


def compatible(requested: str, robot_task: str) -> bool:
    return requested == ANY_TASK or requested == robot_task


@dataclass
class RobotSlot:
    robot_id: str
    task: str
    status: str = "free"  # free | locked | offline
    session_id: str | None = None


@dataclass
class QueueEntry:
    user_id: str
    joined_at: int
    requested_task: str
    last_heartbeat: int = 0


@dataclass
class Session:
    session_id: str
    user_id: str
    robot_id: str
    task: str
    started_at: int
    max_duration_s: float
    ended_at: int | None = None
    end_reason: str | None = None

    @property
    def active(self) -> bool:
        return self.ended_at is None

    @property
    def duration_s(self) -> float:
        if self.ended_at is None:
            return 0.0
        return (self.ended_at - self.started_at) / NANOS_PER_SEC


@dataclass(frozen=True)
class CoordEvent:
    t: int
    kind: str  # robot_registered | joined | queued | assigned | ended | evicted | left
    user_id: str | None = None
    robot_id: str | None = None
    session_id: str | None = None
    task: str | None = None
    reason: str | None = None


@dataclass(frozen=True)
class Assigned:
    session: Session


@dataclass(frozen=True)
class Queued:
    position: int


@dataclass(frozen=True)
class Action:
    """Pending notification for the hosting server to deliver."""

    kind: str  # session_start | session_end | queue_update
    user_id: str
    session: Session | None = None
    position: int | None = None
    reason: str | None = None


class Coordinator:
    def __init__(
        self,
        heartbeat_timeout_s: float = DEFAULT_HEARTBEAT_TIMEOUT_S,
        time_limit_s: float = DEFAULT_TIME_LIMIT_S,
        task_time_limits: dict[str, float] | None = None,
        emit_queue_updates: bool = True,
    ):
        self.heartbeat_timeout_ns = round(heartbeat_timeout_s * NANOS_PER_SEC)
        self.emit_queue_updates = emit_queue_updates
        self.default_time_limit_s = time_limit_s
        self.task_time_limits = dict(task_time_limits or {})
        self.robots: dict[str, RobotSlot] = {}
        self.queue: list[QueueEntry] = []
        self.sessions: dict[str, Session] = {}
        self.active_by_user: dict[str, str] = {}
        self.events: list[CoordEvent] = []
        self._actions: list[Action] = []
        self._session_counter = 0
        self._last_heartbeat: dict[str, int] = {}

    # -- registry ------------------------------------------------------------

    def register_robot(self, robot_id: str, task: str, now: int = 0) -> RobotSlot:
        validate_task(task)
        if robot_id in self.robots:
            raise AlreadyPresentError(f"robot {robot_id!r} already registered")
        slot = RobotSlot(robot_id, task)
        self.robots[robot_id] = slot
        self.events.append(CoordEvent(now, "robot_registered", robot_id=robot_id, task=task))
        return slot

    def set_robot_offline(self, robot_id: str, now: int) -> None:
        slot = self._slot(robot_id)
        if slot.status == "locked":
            raise ValueError(f"robot {robot_id!r} is locked; end its session first")
        slot.status = "offline"

    def set_robot_online(self, robot_id: str, now: int) -> None:
        slot = self._slot(robot_id)
        if slot.status == "offline":
            slot.status = "free"
            self._drain(now)

    def _slot(self, robot_id: str) -> RobotSlot:
        if robot_id not in self.robots:
            raise NotFoundError(f"robot {robot_id!r} not registered")
        return self.robots[robot_id]

    # -- queue and sessions ----------------------------------------------------

    def join(self, user_id: str, requested_task: str, now: int) -> Assigned | Queued:
        validate_task(requested_task, allow_any=True)
        if user_id in self.active_by_user:
            raise AlreadyPresentError(f"user {user_id!r} already in a session")
        if any(e.user_id == user_id for e in self.queue):
            raise AlreadyPresentError(f"user {user_id!r} already queued")
        entry = QueueEntry(user_id, now, requested_task, last_heartbeat=now)
        self.queue.append(entry)
        self.queue.sort(key=lambda e: (e.joined_at, e.user_id))
        self._last_heartbeat[user_id] = now
        self.events.append(CoordEvent(now, "joined", user_id=user_id, task=requested_task))
        assigned = self._drain(now)
        for session in assigned:
            if session.user_id == user_id:
                return Assigned(session)
        pos = self.queue_position(user_id)
        self.events.append(CoordEvent(now, "queued", user_id=user_id, task=requested_task))
        return Queued(pos)

    def queue_position(self, user_id: str) -> int:
        """0-based position among waiters competing for the same robots."""
        me = next((e for e in self.queue if e.user_id == user_id), None)
        if me is None:
            raise NotFoundError(f"user {user_id!r} not queued")
        mine = self._compat_robots(me.requested_task)
        pos = 0
        for e in self.queue:
            if e.user_id == user_id:
                break
            if self._compat_robots(e.requested_task) & mine:
                pos += 1
        return pos

    def _compat_robots(self, requested_task: str) -> set[str]:
        return {
            r.robot_id
            for r in self.robots.values()
            if r.status != "offline" and compatible(requested_task, r.task)
        }

    def _drain(self, now: int) -> list[Session]:
        """Match waiting users to free robots, oldest compatible user first."""
        started: list[Session] = []
        free = sorted(
            r.robot_id for r in self.robots.values() if r.status == "free"
        )
        if not free:
            return started
        remaining = []
        for entry in self.queue:
            chosen = next(
                (rid for rid in free if compatible(entry.requested_task, self.robots[rid].task)),
                None,
            )
            if chosen is None:
                remaining.append(entry)
                continue
            free.remove(chosen)
            session = self._start_session(entry, chosen, now)
            started.append(session)
        self.queue = remaining
        if started:
            self._queue_update_actions()
        return started

    def _start_session(self, entry: QueueEntry, robot_id: str, now: int) -> Session:
        slot = self.robots[robot_id]
        self._session_counter += 1
        limit = self.task_time_limits.get(slot.task, self.default_time_limit_s)
        session = Session(
            session_id=f"s{self._session_counter:04d}",
            user_id=entry.user_id,
            robot_id=robot_id,
            task=slot.task,
            started_at=now,
            max_duration_s=limit,
        )
        slot.status = "locked"
        slot.session_id = session.session_id
        self.sessions[session.session_id] = session
        self.active_by_user[entry.user_id] = session.session_id
        self.events.append(
            CoordEvent(now, "assigned", user_id=entry.user_id, robot_id=robot_id,
                       session_id=session.session_id, task=slot.task)
        )
        self._actions.append(Action("session_start", entry.user_id, session=session))
        return session

    def end_session(self, session_id: str, reason: str, now: int) -> Session:
        if reason not in END_REASONS:
            raise ValueError(f"unknown end reason {reason!r}")
        session = self.sessions.get(session_id)
        if session is None or not session.active:
            raise NotFoundError(f"no active session {session_id!r}")
        session.ended_at = max(now, session.started_at)
        session.end_reason = reason
        slot = self.robots[session.robot_id]
        slot.session_id = None
        if slot.status == "locked":
            slot.status = "free"
        del self.active_by_user[session.user_id]
        self._last_heartbeat.pop(session.user_id, None)
        self.events.append(
            CoordEvent(now, "ended", user_id=session.user_id, robot_id=session.robot_id,
                       session_id=session_id, reason=reason)
        )
        self._actions.append(
            Action("session_end", session.user_id, session=session, reason=reason)
        )
        self._drain(now)
        return session

    def leave(self, user_id: str, now: int) -> None:
        """Remove a waiting user (quit while queued)."""
        before = len(self.queue)
        self.queue = [e for e in self.queue if e.user_id != user_id]
        if len(self.queue) == before:
            raise NotFoundError(f"user {user_id!r} not queued")
        self._last_heartbeat.pop(user_id, None)
        self.events.append(CoordEvent(now, "left", user_id=user_id))
        self._queue_update_actions()

    # -- liveness --------------------------------------------------------------

    def heartbeat(self, user_id: str, now: int) -> None:
        if user_id in self._last_heartbeat:
            self._last_heartbeat[user_id] = now

    def expire(self, now: int) -> tuple[list[str], list[Session]]:
        """Evict silent queue entries and abort silent sessions."""
        evicted: list[str] = []
        for entry in list(self.queue):
            if now - self._last_heartbeat.get(entry.user_id, entry.joined_at) > self.heartbeat_timeout_ns:
                self.queue.remove(entry)
                self._last_heartbeat.pop(entry.user_id, None)
                evicted.append(entry.user_id)
                self.events.append(CoordEvent(now, "evicted", user_id=entry.user_id))
        aborted: list[Session] = []
        for session_id in list(self.active_by_user.values()):
            session = self.sessions[session_id]
            if now - self._last_heartbeat.get(session.user_id, session.started_at) > self.heartbeat_timeout_ns:
                aborted.append(self.end_session(session_id, "disconnect", now))
        if evicted:
            self._queue_update_actions()
        return evicted, aborted

    def enforce_time_limits(self, now: int) -> list[Session]:
        """End sessions that have used up their budget."""
        ended = []
        for session_id in list(self.active_by_user.values()):
            session = self.sessions[session_id]
            if now - session.started_at >= round(session.max_duration_s * NANOS_PER_SEC):
                ended.append(self.end_session(session_id, "time_limit", now))
        return ended

    def tick(self, now: int) -> None:
        self.expire(now)
        self.enforce_time_limits(now)

    # -- introspection ----------------------------------------------------------

    def _queue_update_actions(self) -> None:
        if not self.emit_queue_updates:
            return
        compat = [self._compat_robots(e.requested_task) for e in self.queue]
        for i, entry in enumerate(self.queue):
            pos = sum(1 for j in range(i) if compat[j] & compat[i])
            self._actions.append(Action("queue_update", entry.user_id, position=pos))

    def drain_actions(self) -> list[Action]:
        out, self._actions = self._actions, []
        return out

    def robot_counts(self) -> dict[str, int]:
        counts = {"free": 0, "locked": 0, "offline": 0}
        for r in self.robots.values():
            counts[r.status] += 1
        return counts

    def active_sessions(self) -> list[Session]:
        return [self.sessions[sid] for sid in self.active_by_user.values()]
