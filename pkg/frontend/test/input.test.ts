import { describe, expect, it } from "vitest";

import { InputMapper } from "../src/core/input.js";
import { IDENTITY, geodesicAngle } from "../src/core/quat.js";

describe("pointer mapping", () => {
  it("drag right is +x, drag up is +y, at the configured scale", () => {
    const input = new InputMapper({ metersPerPixel: 0.002 });
    input.pointerDrag(10, -5);
    const d = input.consumeDelta();
    expect(d.x).toBeCloseTo(0.02, 12);
    expect(d.y).toBeCloseTo(0.01, 12);
    expect(d.z).toBe(0);
  });

  it("wheel maps to the depth axis", () => {
    const input = new InputMapper({ metersPerWheel: 0.01 });
    input.wheel(-100);
    expect(input.consumeDelta().z).toBeCloseTo(0.01, 12);
  });

  it("consuming drains the accumulator", () => {
    const input = new InputMapper();
    input.pointerDrag(10, 0);
    input.consumeDelta();
    expect(input.consumeDelta()).toEqual({ x: 0, y: 0, z: 0 });
  });
});

describe("orientation sources", () => {
  it("defaults to identity", () => {
    expect(new InputMapper().orientation()).toEqual(IDENTITY);
  });

  it("arrow keys rotate the virtual orientation", () => {
    const input = new InputMapper({ radiansPerKey: 0.1 });
    input.arrowKey("ArrowLeft");
    input.arrowKey("ArrowLeft");
    const q = input.orientation();
    expect(geodesicAngle(q, IDENTITY)).toBeCloseTo(0.2, 9);
  });

  it("device orientation wins over keys when present", () => {
    const input = new InputMapper();
    input.arrowKey("ArrowUp");
    input.deviceOrientation(90, 0, 0);
    const q = input.orientation();
    expect(geodesicAngle(q, IDENTITY)).toBeCloseTo(Math.PI / 2, 9);
  });
});
