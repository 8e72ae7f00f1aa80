import math
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telefleet.errors import DecodeError
from telefleet.protocol import (
    PHONE_SAMPLE_SIZE,
    ROBOT_STATE_SIZE,
    MsgKind,
    PhoneSample,
    Pose,
    RobotStateMsg,
    TopicDescriptor,
    UnitQuat,
    Vec3,
    decode,
    decode_phone_sample,
    decode_robot_state,
    encode,
    encode_phone_sample,
    encode_robot_state,
    quat_compose,
    quat_geodesic_angle,
    quat_inverse,
    quat_slerp,
)

SQ2 = math.sqrt(2.0) / 2.0


def quat_to_matrix(w, x, y, z):
    # Independent of the library: used as the rotation-equality oracle.
    return [
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ]


def same_rotation(a: UnitQuat, b: UnitQuat, tol=1e-12) -> bool:
    ma = quat_to_matrix(*a.as_tuple())
    mb = quat_to_matrix(*b.as_tuple())
    return all(abs(ma[i][j] - mb[i][j]) < tol for i in range(3) for j in range(3))


unit_quats = st.builds(
    lambda w, x, y, z: UnitQuat.normalized(w, x, y, z),
    *(st.floats(-1, 1).filter(lambda v: abs(v) > 1e-3) for _ in range(4)),
)
vec3s = st.builds(Vec3, *(st.floats(-10, 10) for _ in range(3)))


class TestQuatMath:
    def test_geodesic_identity(self):
        assert quat_geodesic_angle(UnitQuat.identity(), UnitQuat.identity()) == 0.0

    def test_geodesic_quarter_turn(self):
        # 2*acos(sqrt(2)/2) = pi/2 by hand.
        rot = UnitQuat(SQ2, 0.0, 0.0, SQ2)
        assert quat_geodesic_angle(UnitQuat.identity(), rot) == pytest.approx(math.pi / 2, abs=1e-12)

    @given(unit_quats)
    def test_geodesic_double_cover(self, q):
        assert quat_geodesic_angle(q, q.negated()) == pytest.approx(0.0, abs=1e-6)

    @given(unit_quats, unit_quats)
    def test_geodesic_symmetric(self, a, b):
        assert quat_geodesic_angle(a, b) == pytest.approx(quat_geodesic_angle(b, a), abs=1e-12)

    @given(unit_quats, unit_quats, unit_quats)
    @settings(max_examples=200)
    def test_geodesic_triangle_inequality(self, a, b, c):
        assert quat_geodesic_angle(a, c) <= (
            quat_geodesic_angle(a, b) + quat_geodesic_angle(b, c) + 1e-9
        )

    @given(unit_quats)
    def test_compose_identity(self, q):
        r = quat_compose(UnitQuat.identity(), q)
        assert same_rotation(r, q)

    @given(unit_quats)
    def test_compose_inverse_is_identity(self, q):
        r = quat_compose(q, quat_inverse(q))
        assert quat_geodesic_angle(r, UnitQuat.identity()) < 1e-9

    def test_compose_two_quarter_turns(self):
        # Hand Hamilton product: two z quarter-turns make a z half-turn.
        qz = UnitQuat(SQ2, 0.0, 0.0, SQ2)
        r = quat_compose(qz, qz).canonical()
        assert r.as_tuple() == pytest.approx((0.0, 0.0, 0.0, 1.0), abs=1e-15)

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            UnitQuat(1.0, 1.0, 0.0, 0.0)

    @given(unit_quats, unit_quats, st.floats(0, 1))
    def test_slerp_stays_unit_and_bounded(self, a, b, t):
        r = quat_slerp(a, b, t)
        assert abs(math.sqrt(sum(c * c for c in r.as_tuple())) - 1.0) < 1e-9
        total = quat_geodesic_angle(a, b)
        assert quat_geodesic_angle(a, r) <= total + 1e-9


class TestVec3:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Vec3(float("nan"), 0.0, 0.0)
        with pytest.raises(ValueError):
            Vec3(0.0, float("inf"), 0.0)

    def test_arithmetic(self):
        v = Vec3(1.0, 2.0, 3.0) + Vec3(0.5, 0.5, 0.5) - Vec3(0.5, 0.5, 0.5)
        assert v == Vec3(1.0, 2.0, 3.0)
        assert Vec3(3.0, 4.0, 0.0).norm() == 5.0


phone_samples = st.builds(
    PhoneSample,
    seq=st.integers(0, 2**32 - 1),
    t_client=st.integers(0, 2**64 - 1),
    delta_pos=vec3s,
    orientation=unit_quats,
    clutch=st.booleans(),
)

robot_states = st.builds(
    lambda t, js, vs, pos, q, grip: RobotStateMsg(t, tuple(js), tuple(vs), Pose(pos, q), grip),
    t=st.integers(0, 2**64 - 1),
    js=st.lists(st.floats(-3, 3), min_size=7, max_size=7),
    vs=st.lists(st.floats(-3, 3), min_size=7, max_size=7),
    pos=vec3s,
    q=unit_quats,
    grip=st.floats(0, 1),
)


class TestEncoding:
    def test_sizes(self):
        assert PHONE_SAMPLE_SIZE == 69
        assert ROBOT_STATE_SIZE == 184

    @given(phone_samples)
    @settings(max_examples=300)
    def test_phone_round_trip(self, s):
        out = decode_phone_sample(encode_phone_sample(s))
        assert out.seq == s.seq
        assert out.t_client == s.t_client
        assert out.delta_pos == s.delta_pos
        assert out.clutch == s.clutch
        assert same_rotation(out.orientation, s.orientation, tol=1e-9)

    @given(phone_samples)
    def test_phone_second_trip_bit_stable(self, s):
        # Once canonicalized, encoding is a fixed point.
        b1 = encode_phone_sample(s)
        b2 = encode_phone_sample(decode_phone_sample(b1))
        assert b1 == b2

    @given(robot_states)
    @settings(max_examples=200)
    def test_robot_state_round_trip(self, m):
        out = decode_robot_state(encode_robot_state(m))
        assert out.t == m.t
        assert out.joints == m.joints
        assert out.joint_vel == m.joint_vel
        assert out.ee_pose.position == m.ee_pose.position
        assert out.gripper == m.gripper
        assert same_rotation(out.ee_pose.orientation, m.ee_pose.orientation, tol=1e-9)

    def test_decode_empty_fails_naming_first_field(self):
        with pytest.raises(DecodeError, match="seq"):
            decode_phone_sample(b"")
        with pytest.raises(DecodeError, match="'t'"):
            decode_robot_state(b"")

    def test_decode_truncated_names_field(self):
        full = encode_phone_sample(
            PhoneSample(1, 2, Vec3.zero(), UnitQuat.identity(), False)
        )
        with pytest.raises(DecodeError, match="orientation"):
            decode_phone_sample(full[:40])

    def test_decode_trailing_bytes_rejected(self):
        full = encode_phone_sample(
            PhoneSample(1, 2, Vec3.zero(), UnitQuat.identity(), False)
        )
        with pytest.raises(DecodeError, match="trailing"):
            decode_phone_sample(full + b"\x00")

    def test_decode_bad_clutch_byte(self):
        full = bytearray(
            encode_phone_sample(PhoneSample(1, 2, Vec3.zero(), UnitQuat.identity(), False))
        )
        full[-1] = 7
        with pytest.raises(DecodeError, match="clutch"):
            decode_phone_sample(bytes(full))

    def test_decode_non_unit_quat_rejected(self):
        raw = struct.pack("<IQ3d4dB", 0, 0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0)
        with pytest.raises(DecodeError, match="orientation"):
            decode_phone_sample(raw)

    @given(unit_quats)
    def test_negated_quat_encodes_identically(self, q):
        mk = lambda quat: PhoneSample(0, 0, Vec3.zero(), quat, True)
        assert encode_phone_sample(mk(q)) == encode_phone_sample(mk(q.negated()))

    def test_negative_w_stored_as_positive_representative(self):
        # Oracle: decoded quaternion must be the same rotation with w >= 0.
        q = UnitQuat.normalized(-0.5, 0.1, 0.2, 0.8)
        out = decode_phone_sample(
            encode_phone_sample(PhoneSample(0, 0, Vec3.zero(), q, False))
        )
        assert out.orientation.w >= 0.0
        assert same_rotation(out.orientation, q, tol=1e-9)

    def test_w_zero_canonical_tie_break(self):
        up = UnitQuat(0.0, 0.0, 0.0, 1.0)
        down = UnitQuat(0.0, 0.0, 0.0, -1.0)
        mk = lambda quat: PhoneSample(0, 0, Vec3.zero(), quat, False)
        assert encode_phone_sample(mk(up)) == encode_phone_sample(mk(down))
        assert decode_phone_sample(encode_phone_sample(mk(down))).orientation.z == 1.0

    def test_signed_zero_normalized(self):
        a = PhoneSample(0, 0, Vec3(-0.0, 0.0, 0.0), UnitQuat.identity(), False)
        b = PhoneSample(0, 0, Vec3(0.0, 0.0, 0.0), UnitQuat.identity(), False)
        assert encode_phone_sample(a) == encode_phone_sample(b)

    def test_generic_dispatch(self):
        s = PhoneSample(3, 4, Vec3(0.1, 0.0, 0.0), UnitQuat.identity(), True)
        assert decode(encode(s), MsgKind.PHONE) == s


class TestTopicDescriptor:
    def test_validates(self):
        TopicDescriptor(1, "rgb_front", MsgKind.RGB_FRAME, 30.0)
        with pytest.raises(ValueError):
            TopicDescriptor(1, "x", MsgKind.RGB_FRAME, 0.0)
        with pytest.raises(ValueError):
            TopicDescriptor(70000, "x", MsgKind.RGB_FRAME, 1.0)
