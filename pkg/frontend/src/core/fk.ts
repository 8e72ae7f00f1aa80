/** Forward kinematics over the fleet's published DH table, for rendering. */

import { Vec3 } from "./protocol.js";

export interface DhJoint {
  a: number;
  d: number;
  alpha: number;
  lo: number;
  hi: number;
  vel_limit: number;
}

type Mat4 = Float64Array; // row-major 4x4

function identity4(): Mat4 {
  const m = new Float64Array(16);
  m[0] = m[5] = m[10] = m[15] = 1;
  return m;
}

function mul4(a: Mat4, b: Mat4): Mat4 {
  const out = new Float64Array(16);
  for (let r = 0; r < 4; r++) {
    for (let c = 0; c < 4; c++) {
      let acc = 0;
      for (let k = 0; k < 4; k++) acc += a[4 * r + k] * b[4 * k + c];
      out[4 * r + c] = acc;
    }
  }
  return out;
}

function dhMatrix(theta: number, j: DhJoint): Mat4 {
  const ct = Math.cos(theta);
  const st = Math.sin(theta);
  const ca = Math.cos(j.alpha);
  const sa = Math.sin(j.alpha);
  // classical DH: Rz(theta) Tz(d) Tx(a) Rx(alpha)
  return Float64Array.from([
    ct, -st * ca, st * sa, j.a * ct,
    st, ct * ca, -ct * sa, j.a * st,
    0, sa, ca, j.d,
    0, 0, 0, 1,
  ]);
}

/** Base-frame origins of every joint plus the end effector (8 points). */
export function jointOrigins(chain: DhJoint[], q: number[]): Vec3[] {
  if (chain.length !== q.length) throw new Error("joint count mismatch");
  const points: Vec3[] = [{ x: 0, y: 0, z: 0 }];
  let t = identity4();
  for (let i = 0; i < chain.length; i++) {
    t = mul4(t, dhMatrix(q[i], chain[i]));
    points.push({ x: t[3], y: t[7], z: t[11] });
  }
  return points;
}

export function eePosition(chain: DhJoint[], q: number[]): Vec3 {
  const pts = jointOrigins(chain, q);
  return pts[pts.length - 1];
}
