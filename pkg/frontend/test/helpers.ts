/** Test helpers: decode outbound control payloads, fabricate state payloads. */

import { decodePhoneSampleForTest } from "./phonedecode.js";
import type { ClientMessage } from "../src/core/protocol.js";

export type { ClientMessage };
export { decodeRobotState } from "../src/core/protocol.js";

export function fromBase64(b64: string) {
  return decodePhoneSampleForTest(Buffer.from(b64, "base64"));
}

/** A valid robot-state payload (base64) built from the fixture values. */
export function encodeRobotStateForTest(fixtures: {
  ready_q: number[];
  ready_pose_pos: number[];
}): string {
  const buf = Buffer.alloc(184);
  buf.writeBigUInt64LE(0n, 0);
  for (let i = 0; i < 7; i++) buf.writeDoubleLE(fixtures.ready_q[i], 8 + 8 * i);
  for (let i = 0; i < 7; i++) buf.writeDoubleLE(0, 64 + 8 * i);
  buf.writeDoubleLE(fixtures.ready_pose_pos[0], 120);
  buf.writeDoubleLE(fixtures.ready_pose_pos[1], 128);
  buf.writeDoubleLE(fixtures.ready_pose_pos[2], 136);
  buf.writeDoubleLE(1, 144); // identity quaternion
  buf.writeDoubleLE(0, 152);
  buf.writeDoubleLE(0, 160);
  buf.writeDoubleLE(0, 168);
  buf.writeDoubleLE(1, 176); // gripper
  return buf.toString("base64");
}
