/** Hamilton quaternions, (w, x, y, z) component order. */

export interface Quat {
  w: number;
  x: number;
  y: number;
  z: number;
}

export const IDENTITY: Quat = { w: 1, x: 0, y: 0, z: 0 };

export function normalize(q: Quat): Quat {
  const n = Math.hypot(q.w, q.x, q.y, q.z);
  if (n === 0 || !Number.isFinite(n)) {
    throw new Error("cannot normalize zero or non-finite quaternion");
  }
  return { w: q.w / n, x: q.x / n, y: q.y / n, z: q.z / n };
}

export function fromAxisAngle(ax: number, ay: number, az: number, angle: number): Quat {
  const n = Math.hypot(ax, ay, az);
  if (n === 0) throw new Error("rotation axis must be non-zero");
  const h = angle / 2;
  const s = Math.sin(h) / n;
  return normalize({ w: Math.cos(h), x: ax * s, y: ay * s, z: az * s });
}

/** Hamilton product a*b (apply b, then a). */
export function multiply(a: Quat, b: Quat): Quat {
  return normalize({
    w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
    x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
    y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
    z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
  });
}

/** w >= 0 representative; at w == 0 the first nonzero of (x, y, z) is positive. */
export function canonical(q: Quat): Quat {
  const neg = (v: Quat): Quat => ({ w: -v.w, x: -v.x, y: -v.y, z: -v.z });
  if (q.w < 0) return neg(q);
  if (q.w === 0) {
    for (const c of [q.x, q.y, q.z]) {
      if (c !== 0) return c > 0 ? q : neg(q);
    }
  }
  return q;
}

export function geodesicAngle(a: Quat, b: Quat): number {
  const dot = Math.abs(a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z);
  return 2 * Math.acos(Math.min(1, dot));
}

/** Device orientation (alpha, beta, gamma in degrees, Z-X'-Y'' intrinsic) to a quaternion. */
export function fromDeviceOrientation(alphaDeg: number, betaDeg: number, gammaDeg: number): Quat {
  const d = Math.PI / 180;
  const za = fromAxisAngle(0, 0, 1, alphaDeg * d);
  const xb = fromAxisAngle(1, 0, 0, betaDeg * d);
  const yg = fromAxisAngle(0, 1, 0, gammaDeg * d);
  return multiply(multiply(za, xb), yg);
}
