"""Per-session command shaping.

Incoming controller samples pass through three stages, in order: safety
validation, clutch-relative target composition, and a first-order low-pass
smoother. Rejected samples never advance the clutch accumulation, so a burst
of bad input cannot teleport the target when good input resumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .protocol import (
    NANOS_PER_SEC,
    PhoneSample,
    Pose,
    UnitQuat,
    Vec3,
    quat_compose,
    quat_geodesic_angle,
    quat_inverse,
    quat_slerp,
)


@dataclass(frozen=True, slots=True)
class FilterParams:
    """One-pole smoother tuned by cutoff frequency.

    The step gain adapts to irregular sample spacing: alpha = dt / (tau + dt)
    with tau = 1 / (2*pi*cutoff_hz).
    """

    cutoff_hz: float

    def __post_init__(self):
        if not (math.isfinite(self.cutoff_hz) and self.cutoff_hz > 0):
            raise ValueError("cutoff_hz must be > 0")

    @property
    def tau(self) -> float:
        return 1.0 / (2.0 * math.pi * self.cutoff_hz)

    def alpha(self, dt: float) -> float:
        if dt <= 0:
            raise ValueError("dt must be > 0")
        return dt / (self.tau + dt)


@dataclass(frozen=True, slots=True)
class FilterState:
    y_pos: Vec3
    y_quat: UnitQuat
    last_t: int

    @property
    def pose(self) -> Pose:
        return Pose(self.y_pos, self.y_quat)


def lowpass_step(state: FilterState, target: Pose, t: int, params: FilterParams) -> FilterState:
    """Advance the smoother to time t (nanoseconds), easing toward target."""
    if t <= state.last_t:
        raise ValueError(f"filter time must advance: {t} <= {state.last_t}")
    a = params.alpha((t - state.last_t) / NANOS_PER_SEC)
    y_pos = state.y_pos + (target.position - state.y_pos).scaled(a)
    y_quat = quat_slerp(state.y_quat, target.orientation, a)
    return FilterState(y_pos, y_quat, t)


@dataclass(frozen=True, slots=True)
class SafetyConfig:
    workspace_min: Vec3
    workspace_max: Vec3
    v_max: float = 0.5
    omega_max: float = 2.0
    violation_limit: int = 5

    def __post_init__(self):
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError("v_max and omega_max must be > 0")
        if self.violation_limit < 1:
            raise ValueError("violation_limit must be >= 1")
        lo, hi = self.workspace_min, self.workspace_max
        if not (lo.x < hi.x and lo.y < hi.y and lo.z < hi.z):
            raise ValueError("workspace box min must be < max componentwise")

    def contains(self, p: Vec3) -> bool:
        lo, hi = self.workspace_min, self.workspace_max
        return lo.x <= p.x <= hi.x and lo.y <= p.y <= hi.y and lo.z <= p.z <= hi.z


class RejectReason(Enum):
    VELOCITY = "velocity"
    ANGULAR_VELOCITY = "angular_velocity"
    OUT_OF_WORKSPACE = "out_of_workspace"
    MALFORMED = "malformed"


@dataclass(frozen=True, slots=True)
class SafetyVerdict:
    action: str  # "accept" | "reject" | "abort_session"
    reason: RejectReason | None = None

    @property
    def accepted(self) -> bool:
        return self.action == "accept"

    @classmethod
    def accept(cls) -> "SafetyVerdict":
        return cls("accept")

    @classmethod
    def reject(cls, reason: RejectReason) -> "SafetyVerdict":
        return cls("reject", reason)

    @classmethod
    def abort(cls, reason: RejectReason) -> "SafetyVerdict":
        return cls("abort_session", reason)


def classify_sample(
    s: PhoneSample,
    prev: PhoneSample | None,
    cfg: SafetyConfig,
    target_preview: Pose,
) -> RejectReason | None:
    """Pure classification of one sample; None means acceptable.

    prev is the last accepted sample of the current engagement; rate checks
    are skipped when there is none.
    """
    for v in (*s.delta_pos.as_tuple(), *s.orientation.as_tuple()):
        if not math.isfinite(v):  # unreachable via decode; guards hand-built samples
            return RejectReason.MALFORMED
    if prev is not None:
        if s.seq <= prev.seq:
            return RejectReason.MALFORMED
        dt = (s.t_client - prev.t_client) / NANOS_PER_SEC
        if dt <= 0:
            return RejectReason.MALFORMED
        if s.delta_pos.norm() / dt > cfg.v_max:
            return RejectReason.VELOCITY
        if quat_geodesic_angle(prev.orientation, s.orientation) / dt > cfg.omega_max:
            return RejectReason.ANGULAR_VELOCITY
    if not cfg.contains(target_preview.position):
        return RejectReason.OUT_OF_WORKSPACE
    return None


class SafetyValidator:
    """Stateful wrapper counting consecutive rejects up to the abort limit."""

    def __init__(self, cfg: SafetyConfig):
        self.cfg = cfg
        self.consecutive_rejects = 0

    def reset(self) -> None:
        self.consecutive_rejects = 0

    def validate(
        self, s: PhoneSample, prev: PhoneSample | None, target_preview: Pose
    ) -> SafetyVerdict:
        reason = classify_sample(s, prev, self.cfg, target_preview)
        if reason is None:
            self.consecutive_rejects = 0
            return SafetyVerdict.accept()
        self.consecutive_rejects += 1
        if self.consecutive_rejects >= self.cfg.violation_limit:
            return SafetyVerdict.abort(reason)
        return SafetyVerdict.reject(reason)


@dataclass(slots=True)
class ClutchState:
    """Anchors mapping phone motion onto the robot while engaged."""

    engaged: bool = False
    phone_anchor: UnitQuat | None = None
    robot_anchor: Pose | None = None
    accumulated_translation: Vec3 = field(default_factory=Vec3.zero)
    last_target: Pose | None = None


def clutch_engage(phone_orientation: UnitQuat, robot_pose: Pose) -> ClutchState:
    """Engage control: record both anchors and zero the accumulated motion."""
    return ClutchState(
        engaged=True,
        phone_anchor=phone_orientation,
        robot_anchor=robot_pose,
        accumulated_translation=Vec3.zero(),
        last_target=robot_pose,
    )


def _target_from(clutch: ClutchState, accumulated: Vec3, orientation: UnitQuat) -> Pose:
    anchor = clutch.robot_anchor
    rel = quat_compose(quat_inverse(clutch.phone_anchor), orientation)
    return Pose(anchor.position + accumulated, quat_compose(anchor.orientation, rel))


def preview_target(clutch: ClutchState, s: PhoneSample, gain: float) -> Pose:
    """The pose compose_target would produce, without committing it."""
    if not clutch.engaged:
        return clutch.last_target
    acc = clutch.accumulated_translation + s.delta_pos.scaled(gain)
    return _target_from(clutch, acc, s.orientation)


def compose_target(clutch: ClutchState, s: PhoneSample, gain: float) -> Pose:
    """Fold an accepted sample into the clutch state and return the target.

    With the clutch disengaged this is a no-op returning the last target.
    """
    if not clutch.engaged:
        return clutch.last_target
    clutch.accumulated_translation = clutch.accumulated_translation + s.delta_pos.scaled(gain)
    target = _target_from(clutch, clutch.accumulated_translation, s.orientation)
    clutch.last_target = target
    return target


class TeleopPipeline:
    """validate -> compose -> filter, one instance per session.

    Samples are fed in sequence order by a single caller; `tick` advances the
    smoother on the control-loop clock and yields the pose handed to the arm.
    """

    def __init__(
        self,
        params: FilterParams,
        safety: SafetyConfig,
        gain: float,
        initial_pose: Pose,
        start_t: int = 0,
    ):
        self.params = params
        self.validator = SafetyValidator(safety)
        self.gain = gain
        self.clutch = ClutchState(last_target=initial_pose)
        self.filter_state = FilterState(initial_pose.position, initial_pose.orientation, start_t)
        self.prev_accepted: PhoneSample | None = None
        self.aborted = False
        self.reject_count = 0

    @property
    def current_target(self) -> Pose:
        return self.clutch.last_target

    def ingest(self, s: PhoneSample) -> SafetyVerdict | None:
        """Process one sample; returns the verdict, or None while disengaged."""
        if self.aborted:
            return None
        if s.clutch and not self.clutch.engaged:
            self.clutch = clutch_engage(s.orientation, self.current_target)
            self.validator.reset()
            self.prev_accepted = s  # anchor sample: sets the baseline, moves nothing
            return SafetyVerdict.accept()
        if not s.clutch:
            if self.clutch.engaged:
                self.clutch.engaged = False
            return None
        verdict = self.validator.validate(s, self.prev_accepted, preview_target(self.clutch, s, self.gain))
        if verdict.accepted:
            compose_target(self.clutch, s, self.gain)
            self.prev_accepted = s
        else:
            self.reject_count += 1
            if verdict.action == "abort_session":
                self.aborted = True
        return verdict

    def tick(self, t: int) -> Pose:
        """Advance the smoother to time t and return the filtered pose."""
        self.filter_state = lowpass_step(self.filter_state, self.current_target, t, self.params)
        return self.filter_state.pose
