/**
 * Wire formats shared with the coordination service.
 *
 * The control channel carries line-delimited JSON envelopes with a "type"
 * field; binary payloads (controller samples outbound, robot state inbound)
 * travel base64-encoded inside them. Binary layouts are fixed little-endian.
 */

import { canonical, Quat } from "./quat.js";

export interface Vec3 {
  x: number;
  y: number;
  z: number;
}

export interface PhoneSample {
  seq: number;
  tClientNs: bigint;
  delta: Vec3;
  orientation: Quat;
  clutch: boolean;
}

export interface RobotState {
  tNs: number;
  joints: number[];
  jointVel: number[];
  eePos: Vec3;
  eeQuat: Quat;
  gripper: number;
}

export const PHONE_SAMPLE_SIZE = 69;
export const ROBOT_STATE_SIZE = 184;

const clean = (v: number) => v + 0; // normalizes -0 so equal values encode identically

/** seq u32 | t u64 | delta 3xf64 | quat 4xf64 (canonical) | clutch u8 */
export function encodePhoneSample(s: PhoneSample): Uint8Array {
  const buf = new ArrayBuffer(PHONE_SAMPLE_SIZE);
  const dv = new DataView(buf);
  dv.setUint32(0, s.seq, true);
  dv.setBigUint64(4, s.tClientNs, true);
  dv.setFloat64(12, clean(s.delta.x), true);
  dv.setFloat64(20, clean(s.delta.y), true);
  dv.setFloat64(28, clean(s.delta.z), true);
  const q = canonical(s.orientation);
  dv.setFloat64(36, clean(q.w), true);
  dv.setFloat64(44, clean(q.x), true);
  dv.setFloat64(52, clean(q.y), true);
  dv.setFloat64(60, clean(q.z), true);
  dv.setUint8(68, s.clutch ? 1 : 0);
  return new Uint8Array(buf);
}

/** t u64 | joints 7xf64 | vel 7xf64 | pos 3xf64 quat 4xf64 | gripper f64 */
export function decodeRobotState(data: Uint8Array): RobotState {
  if (data.byteLength !== ROBOT_STATE_SIZE) {
    throw new Error(`robot state payload must be ${ROBOT_STATE_SIZE} bytes, got ${data.byteLength}`);
  }
  const dv = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const joints: number[] = [];
  const vel: number[] = [];
  for (let i = 0; i < 7; i++) joints.push(dv.getFloat64(8 + 8 * i, true));
  for (let i = 0; i < 7; i++) vel.push(dv.getFloat64(64 + 8 * i, true));
  return {
    tNs: Number(dv.getBigUint64(0, true)),
    joints,
    jointVel: vel,
    eePos: {
      x: dv.getFloat64(120, true),
      y: dv.getFloat64(128, true),
      z: dv.getFloat64(136, true),
    },
    eeQuat: {
      w: dv.getFloat64(144, true),
      x: dv.getFloat64(152, true),
      y: dv.getFloat64(160, true),
      z: dv.getFloat64(168, true),
    },
    gripper: dv.getFloat64(176, true),
  };
}

export function toBase64(data: Uint8Array): string {
  let bin = "";
  for (const b of data) bin += String.fromCharCode(b);
  return btoa(bin);
}

export function fromBase64(text: string): Uint8Array {
  const bin = atob(text);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

// -- control-channel envelopes ----------------------------------------------

export type ServerMessage =
  | { type: "queued"; position: number }
  | { type: "session_start"; session_id: string; robot_id: string; task: string }
  | { type: "state"; payload: string; server_ms: number }
  | { type: "session_end"; reason: string }
  | { type: "error"; code: string; detail: string };

export type ClientMessage =
  | { type: "join"; user_id: string; task: string }
  | { type: "heartbeat" }
  | { type: "control"; payload: string }
  | { type: "quit" };
