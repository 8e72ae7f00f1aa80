import { describe, expect, it } from "vitest";

import {
  PHONE_SAMPLE_SIZE,
  decodeRobotState,
  encodePhoneSample,
  fromBase64,
  toBase64,
} from "../src/core/protocol.js";
import fixtures from "./fixtures.json";

describe("phone sample encoding", () => {
  it("matches the service-side byte layout on all fixture cases", () => {
    for (const c of fixtures.phone_samples) {
      const bytes = encodePhoneSample({
        seq: c.seq,
        tClientNs: BigInt(c.t),
        delta: { x: c.delta[0], y: c.delta[1], z: c.delta[2] },
        orientation: { w: c.quat[0], x: c.quat[1], y: c.quat[2], z: c.quat[3] },
        clutch: c.clutch,
      });
      expect(bytes.byteLength).toBe(PHONE_SAMPLE_SIZE);
      expect(toBase64(bytes)).toBe(c.bytes_b64);
    }
  });

  it("canonicalizes the quaternion sign pair to identical bytes", () => {
    const mk = (sign: number) =>
      encodePhoneSample({
        seq: 1,
        tClientNs: 0n,
        delta: { x: 0, y: 0, z: 0 },
        orientation: { w: sign * 0.5, x: sign * 0.5, y: sign * 0.5, z: sign * 0.5 },
        clutch: true,
      });
    expect(toBase64(mk(1))).toBe(toBase64(mk(-1)));
  });
});

describe("robot state decoding", () => {
  it("decodes the fixture payload produced by the service", () => {
    const msg = decodeRobotState(fromBase64(fixtures.robot_state.bytes_b64));
    expect(msg.tNs).toBe(fixtures.robot_state.t);
    expect(msg.joints).toHaveLength(7);
    for (let i = 0; i < 7; i++) {
      expect(msg.joints[i]).toBeCloseTo(fixtures.robot_state.joints[i], 12);
    }
    expect(msg.eePos.x).toBeCloseTo(fixtures.robot_state.ee_pos[0], 12);
    expect(msg.eePos.y).toBeCloseTo(fixtures.robot_state.ee_pos[1], 12);
    expect(msg.eePos.z).toBeCloseTo(fixtures.robot_state.ee_pos[2], 12);
    expect(msg.gripper).toBe(1.0);
  });

  it("rejects wrong-size payloads", () => {
    expect(() => decodeRobotState(new Uint8Array(10))).toThrow(/184/);
  });
});
