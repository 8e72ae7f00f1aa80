/**
 * Client-side session state machine.
 *
 * Drives the control channel: joins the queue, tracks phase transitions
 * (connecting -> queued -> active -> ended, queued may be skipped), emits
 * clutch-gated controller samples with strictly increasing sequence numbers,
 * and estimates one-way latency from the server timestamps on state
 * messages. Transport-agnostic so it runs in the browser (WebSocket) and in
 * tests (raw sockets).
 */

import {
  ClientMessage,
  PhoneSample,
  RobotState,
  ServerMessage,
  Vec3,
  decodeRobotState,
  encodePhoneSample,
  fromBase64,
  toBase64,
} from "./protocol.js";
import { IDENTITY, Quat } from "./quat.js";

export interface Transport {
  send(msg: ClientMessage): void;
  close(): void;
}

export type Phase =
  | { kind: "connecting" }
  | { kind: "queued"; position: number }
  | { kind: "active"; sessionId: string; robotId: string; task: string }
  | { kind: "ended"; reason: string };

export interface SessionOptions {
  userId: string;
  task: string;
  rateHz?: number;
  /** keepalive cadence while disengaged or queued, ms */
  keepaliveMs?: number;
  /** state considered stale after this many ms without a message */
  staleMs?: number;
  now?: () => number;
}

const EMA = 0.25; // latency estimate smoothing

export class UiSession {
  readonly userId: string;
  readonly task: string;
  phase: Phase = { kind: "connecting" };
  latestState: RobotState | null = null;
  latencyMs: number | null = null;
  safetyBanner: string | null = null;
  lastStateAtMs: number | null = null;

  private transport: Transport;
  private now: () => number;
  private seq = 0;
  private clutch = false;
  private pendingDelta: Vec3 = { x: 0, y: 0, z: 0 };
  private orientation: Quat = IDENTITY;
  private lastKeepaliveMs = 0;
  private readonly keepaliveMs: number;
  private readonly staleAfterMs: number;
  private listeners: Array<() => void> = [];

  constructor(transport: Transport, opts: SessionOptions) {
    this.transport = transport;
    this.userId = opts.userId;
    this.task = opts.task;
    this.keepaliveMs = opts.keepaliveMs ?? 1000;
    this.staleAfterMs = opts.staleMs ?? 500;
    this.now = opts.now ?? (() => Date.now());
  }

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private changed(): void {
    for (const fn of this.listeners) fn();
  }

  join(): void {
    this.transport.send({ type: "join", user_id: this.userId, task: this.task });
  }

  quit(): void {
    this.transport.send({ type: "quit" });
  }

  // -- inbound ---------------------------------------------------------------

  handleMessage(msg: ServerMessage): void {
    switch (msg.type) {
      case "queued":
        if (this.phase.kind === "connecting" || this.phase.kind === "queued") {
          this.phase = { kind: "queued", position: msg.position };
        }
        break;
      case "session_start":
        this.phase = {
          kind: "active",
          sessionId: msg.session_id,
          robotId: msg.robot_id,
          task: msg.task,
        };
        this.safetyBanner = null;
        break;
      case "state": {
        this.latestState = decodeRobotState(fromBase64(msg.payload));
        this.lastStateAtMs = this.now();
        const oneWay = this.now() - msg.server_ms;
        this.latencyMs = this.latencyMs === null ? oneWay : this.latencyMs + EMA * (oneWay - this.latencyMs);
        break;
      }
      case "session_end":
        this.phase = { kind: "ended", reason: msg.reason };
        break;
      case "error":
        this.safetyBanner = `${msg.code}: ${msg.detail}`;
        break;
    }
    this.changed();
  }

  handleDisconnect(): void {
    if (this.phase.kind !== "ended") {
      this.phase = { kind: "ended", reason: "disconnect" };
      this.changed();
    }
  }

  // -- input -----------------------------------------------------------------

  setClutch(engaged: boolean): void {
    this.clutch = engaged;
  }

  get clutchEngaged(): boolean {
    return this.clutch;
  }

  /** Accumulate a translation intent; flushed on the next tick while engaged. */
  pushDelta(dx: number, dy: number, dz: number): void {
    this.pendingDelta = {
      x: this.pendingDelta.x + dx,
      y: this.pendingDelta.y + dy,
      z: this.pendingDelta.z + dz,
    };
  }

  setOrientation(q: Quat): void {
    this.orientation = q;
  }

  /**
   * One control period: while engaged, emit a sample carrying the
   * accumulated delta; while disengaged, only keepalive-rate samples with
   * the clutch flag down (plus queue heartbeats). Sequence numbers are
   * strictly increasing for the life of the session.
   */
  tick(): PhoneSample | null {
    const nowMs = this.now();
    if (this.phase.kind !== "active") {
      this.pendingDelta = { x: 0, y: 0, z: 0 };
      if (nowMs - this.lastKeepaliveMs >= this.keepaliveMs) {
        this.lastKeepaliveMs = nowMs;
        this.transport.send({ type: "heartbeat" });
      }
      return null;
    }
    let sample: PhoneSample | null = null;
    if (this.clutch) {
      sample = this.makeSample(this.pendingDelta, true, nowMs);
      this.pendingDelta = { x: 0, y: 0, z: 0 };
    } else {
      this.pendingDelta = { x: 0, y: 0, z: 0 };
      if (nowMs - this.lastKeepaliveMs >= this.keepaliveMs) {
        sample = this.makeSample({ x: 0, y: 0, z: 0 }, false, nowMs);
      }
    }
    if (sample !== null) {
      this.lastKeepaliveMs = nowMs;
      this.transport.send({
        type: "control",
        payload: toBase64(encodePhoneSample(sample)),
      });
    }
    return sample;
  }

  private makeSample(delta: Vec3, clutch: boolean, nowMs: number): PhoneSample {
    return {
      seq: this.seq++,
      tClientNs: BigInt(Math.round(nowMs * 1e6)),
      delta,
      orientation: this.orientation,
      clutch,
    };
  }

  stateIsStale(): boolean {
    if (this.lastStateAtMs === null) return true;
    return this.now() - this.lastStateAtMs > this.staleAfterMs;
  }
}
