"""Shared message types, quaternion math, and the binary wire encoding.

All values are immutable; operations are pure functions. Quaternions follow
the Hamilton convention with (w, x, y, z) component order and are
canonicalized to w >= 0 (first nonzero of x, y, z positive when w == 0) at
serialization boundaries. Payload encodings are fixed-layout little-endian.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import IntEnum

from .errors import DecodeError

NANOS_PER_SEC = 1_000_000_000

# Tolerance for the unit-norm invariant on quaternions.
UNIT_NORM_TOL = 1e-9

_U16_MAX = 0xFFFF
_U32_MAX = 0xFFFF_FFFF
_U64_MAX = 0xFFFF_FFFF_FFFF_FFFF


def to_nanos(seconds: float) -> int:
    return round(seconds * NANOS_PER_SEC)


def to_seconds(nanos: int) -> float:
    return nanos / NANOS_PER_SEC


def _check_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True, slots=True)
class Vec3:
    """A 3-vector in meters. Components must be finite."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        _check_finite("Vec3 component", self.x, self.y, self.z)

    @classmethod
    def zero(cls) -> "Vec3":
        return cls(0.0, 0.0, 0.0)

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scaled(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm2(self) -> float:
        return self.dot(self)

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True, slots=True)
class UnitQuat:
    """A unit quaternion (w, x, y, z); norm must be 1 within 1e-9."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        _check_finite("UnitQuat component", self.w, self.x, self.y, self.z)
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if abs(n - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"quaternion norm {n!r} not unit within {UNIT_NORM_TOL}")

    @classmethod
    def identity(cls) -> "UnitQuat":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def normalized(cls, w: float, x: float, y: float, z: float) -> "UnitQuat":
        """Build a unit quaternion from arbitrary non-zero components."""
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n == 0.0 or not math.isfinite(n):
            raise ValueError("cannot normalize zero or non-finite quaternion")
        return cls(w / n, x / n, y / n, z / n)

    @classmethod
    def from_axis_angle(cls, axis: Vec3, angle: float) -> "UnitQuat":
        n = axis.norm()
        if n == 0.0:
            raise ValueError("rotation axis must be non-zero")
        h = 0.5 * angle
        s = math.sin(h) / n
        return cls.normalized(math.cos(h), axis.x * s, axis.y * s, axis.z * s)

    def negated(self) -> "UnitQuat":
        return UnitQuat(-self.w, -self.x, -self.y, -self.z)

    def canonical(self) -> "UnitQuat":
        """The w >= 0 representative of this rotation.

        When w == 0 exactly, the representative with the first nonzero of
        (x, y, z) positive is chosen so canonicalization is a total rule.
        """
        if self.w < 0.0:
            return self.negated()
        if self.w == 0.0:
            for c in (self.x, self.y, self.z):
                if c != 0.0:
                    return self if c > 0.0 else self.negated()
        return self

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)


def quat_dot(a: UnitQuat, b: UnitQuat) -> float:
    return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z


def quat_compose(a: UnitQuat, b: UnitQuat) -> UnitQuat:
    """Hamilton product a*b (apply b, then a), renormalized."""
    return UnitQuat.normalized(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def quat_inverse(a: UnitQuat) -> UnitQuat:
    return UnitQuat(a.w, -a.x, -a.y, -a.z)


def quat_geodesic_angle(a: UnitQuat, b: UnitQuat) -> float:
    """Rotation angle in [0, pi] between two orientations: 2*acos(|<a,b>|)."""
    d = min(1.0, abs(quat_dot(a, b)))
    return 2.0 * math.acos(d)


def quat_slerp(a: UnitQuat, b: UnitQuat, t: float) -> UnitQuat:
    """Spherical interpolation from a toward b along the shorter arc."""
    d = quat_dot(a, b)
    bw, bx, by, bz = b.as_tuple()
    if d < 0.0:  # take the short way around the double cover
        d, bw, bx, by, bz = -d, -bw, -bx, -by, -bz
    if d > 1.0 - 1e-12:
        # Nearly parallel: linear blend is accurate and avoids 0/0.
        return UnitQuat.normalized(
            a.w + t * (bw - a.w),
            a.x + t * (bx - a.x),
            a.y + t * (by - a.y),
            a.z + t * (bz - a.z),
        )
    theta = math.acos(min(1.0, d))
    s = math.sin(theta)
    ka = math.sin((1.0 - t) * theta) / s
    kb = math.sin(t * theta) / s
    return UnitQuat.normalized(
        ka * a.w + kb * bw, ka * a.x + kb * bx, ka * a.y + kb * by, ka * a.z + kb * bz
    )


@dataclass(frozen=True, slots=True)
class Pose:
    position: Vec3
    orientation: UnitQuat

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Vec3.zero(), UnitQuat.identity())


class MsgKind(IntEnum):
    """Topic payload kinds, stable on the wire as a u8."""

    PHONE = 0
    ROBOT_STATE = 1
    RGB_FRAME = 2
    DEPTH_FRAME = 3
    EVENT = 4


@dataclass(frozen=True, slots=True)
class PhoneSample:
    """One 6-DoF controller message: translation delta, absolute orientation,
    and the clutch flag gating whether the motion drives the robot."""

    seq: int
    t_client: int
    delta_pos: Vec3
    orientation: UnitQuat
    clutch: bool

    def __post_init__(self):
        if not 0 <= self.seq <= _U32_MAX:
            raise ValueError(f"seq {self.seq} out of u32 range")
        if not 0 <= self.t_client <= _U64_MAX:
            raise ValueError(f"t_client {self.t_client} out of u64 range")


@dataclass(frozen=True, slots=True)
class RobotStateMsg:
    """Arm sensor reading: joint positions/velocities, end-effector pose,
    gripper opening fraction."""

    t: int
    joints: tuple[float, ...]
    joint_vel: tuple[float, ...]
    ee_pose: Pose
    gripper: float

    def __post_init__(self):
        if len(self.joints) != 7 or len(self.joint_vel) != 7:
            raise ValueError("joints and joint_vel must have exactly 7 entries")
        _check_finite("joint", *self.joints)
        _check_finite("joint_vel", *self.joint_vel)
        if not 0 <= self.t <= _U64_MAX:
            raise ValueError(f"t {self.t} out of u64 range")
        if not (math.isfinite(self.gripper) and 0.0 <= self.gripper <= 1.0):
            raise ValueError(f"gripper {self.gripper!r} outside [0, 1]")


@dataclass(frozen=True, slots=True)
class TopicDescriptor:
    topic_id: int
    name: str
    kind: MsgKind
    declared_rate_hz: float

    def __post_init__(self):
        if not 0 <= self.topic_id <= _U16_MAX:
            raise ValueError(f"topic_id {self.topic_id} out of u16 range")
        if not (math.isfinite(self.declared_rate_hz) and self.declared_rate_hz > 0):
            raise ValueError("declared_rate_hz must be > 0")
        if len(self.name.encode("utf-8")) > _U16_MAX:
            raise ValueError("topic name too long")


# --- wire encoding ---------------------------------------------------------
#
# PhoneSample:    seq u32 | t u64 | delta 3xf64 | quat 4xf64 | clutch u8  (69 B)
# RobotStateMsg:  t u64 | joints 7xf64 | vel 7xf64 | pos 3xf64 quat 4xf64
#                 | gripper f64                                          (184 B)

_PHONE_FMT = struct.Struct("<IQ3d4dB")
_ROBOT_FMT = struct.Struct("<Q7d7d3d4dd")

PHONE_SAMPLE_SIZE = _PHONE_FMT.size
ROBOT_STATE_SIZE = _ROBOT_FMT.size


def _clean(v: float) -> float:
    # +0.0 normalizes signed zero so equal values encode identically.
    return v + 0.0


def encode_phone_sample(s: PhoneSample) -> bytes:
    q = s.orientation.canonical()
    return _PHONE_FMT.pack(
        s.seq,
        s.t_client,
        _clean(s.delta_pos.x),
        _clean(s.delta_pos.y),
        _clean(s.delta_pos.z),
        _clean(q.w),
        _clean(q.x),
        _clean(q.y),
        _clean(q.z),
        1 if s.clutch else 0,
    )


def _unpack(fmt: struct.Struct, data: bytes, what: str, first_field: str):
    if len(data) < fmt.size:
        raise DecodeError(
            f"{what}: truncated at field '{first_field}' "
            f"({len(data)} bytes, need {fmt.size})"
        )
    if len(data) > fmt.size:
        raise DecodeError(f"{what}: {len(data) - fmt.size} trailing bytes")
    return fmt.unpack(data)


def _field_at(offset: int, layout: list[tuple[str, int]]) -> str:
    pos = 0
    for name, size in layout:
        pos += size
        if offset < pos:
            return name
    return layout[-1][0]


_PHONE_LAYOUT = [("seq", 4), ("t_client", 8), ("delta_pos", 24), ("orientation", 32), ("clutch", 1)]
_ROBOT_LAYOUT = [("t", 8), ("joints", 56), ("joint_vel", 56), ("ee_pose", 56), ("gripper", 8)]


def decode_phone_sample(data: bytes) -> PhoneSample:
    if len(data) < _PHONE_FMT.size:
        raise DecodeError(
            f"PhoneSample: truncated at field '{_field_at(len(data), _PHONE_LAYOUT)}' "
            f"({len(data)} bytes, need {_PHONE_FMT.size})"
        )
    vals = _unpack(_PHONE_FMT, data, "PhoneSample", "seq")
    seq, t, dx, dy, dz, qw, qx, qy, qz, clutch = vals
    for name, v in (("delta_pos", dx), ("delta_pos", dy), ("delta_pos", dz),
                    ("orientation", qw), ("orientation", qx), ("orientation", qy),
                    ("orientation", qz)):
        if not math.isfinite(v):
            raise DecodeError(f"PhoneSample: non-finite field '{name}'")
    n = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    if abs(n - 1.0) > UNIT_NORM_TOL:
        raise DecodeError(f"PhoneSample: field 'orientation' not unit (norm {n!r})")
    if clutch not in (0, 1):
        raise DecodeError(f"PhoneSample: field 'clutch' byte {clutch} not 0/1")
    return PhoneSample(seq, t, Vec3(dx, dy, dz), UnitQuat(qw, qx, qy, qz), bool(clutch))


def encode_robot_state(m: RobotStateMsg) -> bytes:
    q = m.ee_pose.orientation.canonical()
    p = m.ee_pose.position
    return _ROBOT_FMT.pack(
        m.t,
        *(_clean(j) for j in m.joints),
        *(_clean(v) for v in m.joint_vel),
        _clean(p.x), _clean(p.y), _clean(p.z),
        _clean(q.w), _clean(q.x), _clean(q.y), _clean(q.z),
        _clean(m.gripper),
    )


def decode_robot_state(data: bytes) -> RobotStateMsg:
    if len(data) < _ROBOT_FMT.size:
        raise DecodeError(
            f"RobotStateMsg: truncated at field '{_field_at(len(data), _ROBOT_LAYOUT)}' "
            f"({len(data)} bytes, need {_ROBOT_FMT.size})"
        )
    vals = _unpack(_ROBOT_FMT, data, "RobotStateMsg", "t")
    t = vals[0]
    joints = vals[1:8]
    vel = vals[8:15]
    px, py, pz, qw, qx, qy, qz, grip = vals[15:]
    for name, group in (("joints", joints), ("joint_vel", vel),
                        ("ee_pose", (px, py, pz, qw, qx, qy, qz)), ("gripper", (grip,))):
        for v in group:
            if not math.isfinite(v):
                raise DecodeError(f"RobotStateMsg: non-finite field '{name}'")
    n = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    if abs(n - 1.0) > UNIT_NORM_TOL:
        raise DecodeError(f"RobotStateMsg: field 'ee_pose' orientation not unit (norm {n!r})")
    if not 0.0 <= grip <= 1.0:
        raise DecodeError(f"RobotStateMsg: field 'gripper' {grip!r} outside [0, 1]")
    return RobotStateMsg(
        t, joints, vel, Pose(Vec3(px, py, pz), UnitQuat(qw, qx, qy, qz)), grip
    )


def encode(msg) -> bytes:
    """Encode a protocol message by type."""
    if isinstance(msg, PhoneSample):
        return encode_phone_sample(msg)
    if isinstance(msg, RobotStateMsg):
        return encode_robot_state(msg)
    raise ValueError(f"no wire encoding for {type(msg).__name__}")


def decode(data: bytes, kind: MsgKind):
    """Decode a payload whose kind is known from its carrying context."""
    if kind == MsgKind.PHONE:
        return decode_phone_sample(data)
    if kind == MsgKind.ROBOT_STATE:
        return decode_robot_state(data)
    raise ValueError(f"no structured decoding for kind {kind!r}")
