/**
 * Pure projection geometry for the two orthographic arm views.
 * DOM code feeds the resulting polylines/rects to a canvas.
 */

import { Vec3 } from "./protocol.js";

export type View = "top" | "side";

export interface Viewport {
  widthPx: number;
  heightPx: number;
  /** world meters covered by the larger canvas dimension */
  spanM: number;
  /** world-space point shown at the canvas center */
  center: Vec3;
}

export interface Point2 {
  x: number;
  y: number;
}

function axes(view: View, p: Vec3): [number, number] {
  // top: x right, y up; side: x right, z up
  return view === "top" ? [p.x, p.y] : [p.x, p.z];
}

export function project(p: Vec3, view: View, vp: Viewport): Point2 {
  const [wx, wy] = axes(view, p);
  const [cx, cy] = axes(view, vp.center);
  const scale = Math.max(vp.widthPx, vp.heightPx) / vp.spanM;
  return {
    x: vp.widthPx / 2 + (wx - cx) * scale,
    y: vp.heightPx / 2 - (wy - cy) * scale,
  };
}

export function projectPolyline(points: Vec3[], view: View, vp: Viewport): Point2[] {
  return points.map((p) => project(p, view, vp));
}

export interface Rect2 {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function workspaceRect(min: Vec3, max: Vec3, view: View, vp: Viewport): Rect2 {
  const a = project(min, view, vp);
  const b = project(max, view, vp);
  return {
    x: Math.min(a.x, b.x),
    y: Math.min(a.y, b.y),
    w: Math.abs(b.x - a.x),
    h: Math.abs(b.y - a.y),
  };
}
