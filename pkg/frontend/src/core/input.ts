/**
 * Maps desk-scale input to 6-DoF controller intents: pointer drags move in
 * the screen plane, the wheel moves along the depth axis, and either device
 * orientation or arrow keys steer a virtual orientation. The spacebar (or an
 * on-screen button) is the clutch.
 */

import { Vec3 } from "./protocol.js";
import { IDENTITY, Quat, fromAxisAngle, fromDeviceOrientation, multiply } from "./quat.js";

export interface InputOptions {
  /** meters of motion per pixel of drag */
  metersPerPixel?: number;
  /** meters per wheel notch (deltaY of ~100) */
  metersPerWheel?: number;
  /** radians per arrow-key press */
  radiansPerKey?: number;
}

export class InputMapper {
  private readonly mPerPx: number;
  private readonly mPerWheel: number;
  private readonly radPerKey: number;
  private delta: Vec3 = { x: 0, y: 0, z: 0 };
  private yaw = 0;
  private pitch = 0;
  private deviceQuat: Quat | null = null;

  constructor(opts: InputOptions = {}) {
    this.mPerPx = opts.metersPerPixel ?? 0.0015;
    this.mPerWheel = opts.metersPerWheel ?? 0.01;
    this.radPerKey = opts.radiansPerKey ?? 0.05;
  }

  /** Pointer drag in pixels: right = +x, up (negative dyPx) = +y. */
  pointerDrag(dxPx: number, dyPx: number): void {
    this.delta = {
      x: this.delta.x + dxPx * this.mPerPx,
      y: this.delta.y - dyPx * this.mPerPx,
      z: this.delta.z,
    };
  }

  /** Wheel scroll: away from the user (negative deltaY) raises the arm. */
  wheel(deltaY: number): void {
    this.delta = {
      x: this.delta.x,
      y: this.delta.y,
      z: this.delta.z - (deltaY / 100) * this.mPerWheel,
    };
  }

  arrowKey(key: "ArrowLeft" | "ArrowRight" | "ArrowUp" | "ArrowDown"): void {
    if (key === "ArrowLeft") this.yaw += this.radPerKey;
    if (key === "ArrowRight") this.yaw -= this.radPerKey;
    if (key === "ArrowUp") this.pitch += this.radPerKey;
    if (key === "ArrowDown") this.pitch -= this.radPerKey;
  }

  deviceOrientation(alphaDeg: number, betaDeg: number, gammaDeg: number): void {
    this.deviceQuat = fromDeviceOrientation(alphaDeg, betaDeg, gammaDeg);
  }

  /** Current absolute orientation: device attitude when available, else keys. */
  orientation(): Quat {
    if (this.deviceQuat !== null) return this.deviceQuat;
    if (this.yaw === 0 && this.pitch === 0) return IDENTITY;
    const qYaw = this.yaw !== 0 ? fromAxisAngle(0, 0, 1, this.yaw) : IDENTITY;
    const qPitch = this.pitch !== 0 ? fromAxisAngle(0, 1, 0, this.pitch) : IDENTITY;
    return multiply(qYaw, qPitch);
  }

  /** Drain the accumulated translation since the last call. */
  consumeDelta(): Vec3 {
    const out = this.delta;
    this.delta = { x: 0, y: 0, z: 0 };
    return out;
  }
}
