"""Per-session engine: control pipeline, simulated arm, and the session log.

One engine serves exactly one teleoperation session. Controller samples flow
through safety validation and clutch composition; each control tick advances
the low-pass smoother, routes the filtered pose through the actuation delay
line, steps the arm, and appends every due sensor record to the session log.
All timestamps written to the log are relative to the session start (the
epoch), so logs from different sessions are directly comparable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .coordination import Session
from .protocol import (
    NANOS_PER_SEC,
    MsgKind,
    PhoneSample,
    Pose,
    TopicDescriptor,
    encode_phone_sample,
)
from .recorder import LogWriter
from .simrobot import (
    ArmState,
    DelayLine,
    DelayModel,
    KinematicChain,
    StreamEmitter,
    StreamSet,
    default_workspace,
    fk,
    track_step,
)
from .teleop import FilterParams, SafetyConfig, SafetyVerdict, TeleopPipeline

EVENT_TOPIC_ID = 0
PHONE_TOPIC_ID = 1
STREAM_BASE_TOPIC_ID = 2


@dataclass(frozen=True)
class TeleopConfig:
    """Session-level tuning; mirrors the config-file keys."""

    cutoff_hz: float = 2.0
    v_max: float = 0.5
    omega_max: float = 2.0
    violation_limit: int = 5
    gain: float = 1.0
    rate_hz: float = 50.0

    @classmethod
    def from_dict(cls, d: dict) -> "TeleopConfig":
        flt = d.get("filter", {})
        saf = d.get("safety", {})
        tel = d.get("teleop", {})
        return cls(
            cutoff_hz=float(flt.get("cutoff_hz", 2.0)),
            v_max=float(saf.get("v_max", 0.5)),
            omega_max=float(saf.get("omega_max", 2.0)),
            violation_limit=int(saf.get("violation_limit", 5)),
            gain=float(tel.get("gain", 1.0)),
            rate_hz=float(tel.get("rate_hz", 50.0)),
        )

    def safety_config(self, chain: KinematicChain) -> SafetyConfig:
        lo, hi = default_workspace(chain)
        return SafetyConfig(
            workspace_min=lo,
            workspace_max=hi,
            v_max=self.v_max,
            omega_max=self.omega_max,
            violation_limit=self.violation_limit,
        )


class SessionEngine:
    def __init__(
        self,
        session: Session,
        chain: KinematicChain,
        teleop_cfg: TeleopConfig,
        delay_model: DelayModel,
        streams: StreamSet,
        log_path: str | Path,
        keep_trace: bool = False,
    ):
        self.session = session
        self.chain = chain
        self.cfg = teleop_cfg
        self.epoch = session.started_at
        self.arm = ArmState.ready()
        initial_pose = fk(chain, self.arm.q)
        self.pipeline = TeleopPipeline(
            FilterParams(teleop_cfg.cutoff_hz),
            teleop_cfg.safety_config(chain),
            teleop_cfg.gain,
            initial_pose,
            start_t=0,
        )
        self.delay_line = DelayLine(delay_model)
        self.emitter = StreamEmitter(chain, streams, base_topic_id=STREAM_BASE_TOPIC_ID)
        topics = [
            TopicDescriptor(EVENT_TOPIC_ID, "event", MsgKind.EVENT, 1.0),
            TopicDescriptor(PHONE_TOPIC_ID, "phone", MsgKind.PHONE, teleop_cfg.rate_hz),
            *self.emitter.topics,
        ]
        self.writer = LogWriter(log_path, session.session_id, topics, flush_each=False)
        self.log_path = Path(log_path)
        self.records_per_topic = {t.name: 0 for t in topics}
        self.safety_rejects = 0
        self.applied_target: Pose | None = None
        self.last_tick_t = 0
        self.trace: list[tuple[int, Pose]] = [] if keep_trace else None
        self.ended = False
        self._event(0, {
            "event": "session_start",
            "user_id": session.user_id,
            "task": session.task,
            "robot_id": session.robot_id,
            "time_limit_s": session.max_duration_s,
            "started_at": session.started_at,
        })

    # -- helpers ---------------------------------------------------------------

    def _event(self, t_rel: int, payload: dict) -> None:
        data = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.writer.append(EVENT_TOPIC_ID, t_rel, data)
        self.records_per_topic["event"] += 1

    @property
    def aborted(self) -> bool:
        return self.pipeline.aborted

    def rel(self, global_ns: int) -> int:
        return max(0, global_ns - self.epoch)

    # -- inputs ------------------------------------------------------------------

    def on_sample(self, sample: PhoneSample, recv_global_ns: int) -> SafetyVerdict | None:
        """Record and process one controller sample received at server time."""
        if self.ended:
            return None
        t_rel = self.rel(recv_global_ns)
        self.writer.append(PHONE_TOPIC_ID, t_rel, encode_phone_sample(sample))
        self.records_per_topic["phone"] += 1
        # Rate limits compare server receive times, not client stamps.
        verdict = self.pipeline.ingest(replace(sample, t_client=t_rel))
        if verdict is not None and not verdict.accepted:
            self.safety_rejects += 1
        return verdict

    def tick(self, global_now: int) -> None:
        """Advance one control period ending at global_now."""
        if self.ended:
            return
        t_rel = self.rel(global_now)
        if t_rel <= self.last_tick_t:
            return
        # Sensor records for the window carry the state held during it.
        for desc, t, payload in self.emitter.poll(self.arm, t_rel):
            self.writer.append(desc.topic_id, t, payload)
            self.records_per_topic[desc.name] += 1
        due = self.delay_line.pop_due(t_rel)
        if due:
            self.applied_target = due[-1]
        dt = (t_rel - self.last_tick_t) / NANOS_PER_SEC
        if self.applied_target is not None:
            self.arm = track_step(self.arm, self.applied_target, dt, self.chain)
        filtered = self.pipeline.tick(t_rel)
        if self.trace is not None:
            self.trace.append((t_rel, filtered))
        self.delay_line.submit(filtered, t_rel)
        self.last_tick_t = t_rel

    def current_state_payload(self) -> bytes:
        """Encoded arm state as of the last tick, for the live state channel."""
        from .protocol import RobotStateMsg, encode_robot_state
        from .simrobot import _fk_unchecked

        msg = RobotStateMsg(
            self.last_tick_t,
            tuple(self.arm.q),
            tuple(self.arm.qdot),
            _fk_unchecked(self.chain, self.arm.q),
            1.0,
        )
        return encode_robot_state(msg)

    def end(self, reason: str, global_now: int) -> None:
        if self.ended:
            return
        t_rel = max(self.rel(global_now), self.last_tick_t)
        for desc, t, payload in self.emitter.poll(self.arm, t_rel):
            self.writer.append(desc.topic_id, t, payload)
            self.records_per_topic[desc.name] += 1
        self._event(t_rel, {"event": "session_end", "reason": reason})
        self.writer.close()
        self.ended = True
